use crate::error::GeometryError;
use crate::expr::Expr;
use crate::jet::{eval_expr, Jet};

use super::metric::{MetricField, MetricJet};
use super::tensor::{multi_index, TensorJet, TensorSample};

/// Highest supported covariant derivative order.
pub const MAX_COVARIANT_ORDER: usize = 3;

/// Christoffel symbols of the first kind `Γ_{ab|c} = ½(∂_a g_bc + ∂_b g_ac − ∂_c g_ab)`,
/// stored at `a*n*n + b*n + c`.
pub fn christoffel_first_jets(g: &MetricJet) -> Vec<Jet> {
    let n = g.dim();
    let mut dg = Vec::with_capacity(n * n * n);
    // dg[(i*n + j)*n + a] = ∂_a g_ij
    for i in 0..n {
        for j in 0..n {
            for a in 0..n {
                dg.push(g.at(i, j).deriv(a));
            }
        }
    }
    let d = |i: usize, j: usize, a: usize| &dg[(i * n + j) * n + a];
    let mut out = Vec::with_capacity(n * n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let s = &(d(b, c, a) + d(a, c, b)) - d(a, b, c);
                out.push(s.scale(0.5));
            }
        }
    }
    out
}

/// Christoffel symbols `Γ^c_ab` as jets of order `g.order() − 1`, stored at `c*n*n + a*n + b`.
pub fn christoffel_jets(g: &MetricJet) -> Result<Vec<Jet>, GeometryError> {
    let n = g.dim();
    if g.order() == 0 {
        return Err(GeometryError::OrderCap {
            requested: 1,
            cap: 0,
        });
    }
    let ginv = g.truncate(g.order() - 1).inverse()?;
    let first = christoffel_first_jets(g);
    let mut out = Vec::with_capacity(n * n * n);
    for c in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut acc = &ginv[c * n] * &first[(a * n + b) * n];
                for m in 1..n {
                    acc = &acc + &(&ginv[c * n + m] * &first[(a * n + b) * n + m]);
                }
                out.push(acc);
            }
        }
    }
    Ok(out)
}

/// `Γ^c_ab` at `x`, indexed `c*n*n + a*n + b`.
pub fn christoffels(g: &MetricField, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let jet = g.jet(x, 1)?;
    Ok(christoffel_jets(&jet)?.iter().map(Jet::value).collect())
}

/// Fully covariant Riemann tensor jets of order `g.order() − 2` in Besse convention:
/// `Riem(v,w,v,w) > 0` on the round sphere.
pub fn riemann_jets(g: &MetricJet) -> Result<TensorJet, GeometryError> {
    let n = g.dim();
    if g.order() < 2 {
        return Err(GeometryError::OrderCap {
            requested: 2,
            cap: g.order(),
        });
    }
    let gamma = christoffel_jets(g)?;
    let order = g.order() - 2;
    let gam = |c: usize, a: usize, b: usize| &gamma[c * n * n + a * n + b];
    let dgam: Vec<Jet> = (0..n * n * n * n)
        .map(|f| {
            let (cab, e) = (f / n, f % n);
            gamma[cab].deriv(e)
        })
        .collect();
    let dg = |c: usize, a: usize, b: usize, e: usize| &dgam[(c * n * n + a * n + b) * n + e];
    // R^d_{cab} = ∂_a Γ^d_bc − ∂_b Γ^d_ac + Γ^d_ae Γ^e_bc − Γ^d_be Γ^e_ac
    let mut r_up = Vec::with_capacity(n.pow(4));
    for d in 0..n {
        for c in 0..n {
            for a in 0..n {
                for b in 0..n {
                    let mut acc = dg(d, b, c, a) - dg(d, a, c, b);
                    acc = acc.truncate(order);
                    for e in 0..n {
                        let p = &gam(d, a, e).truncate(order) * &gam(e, b, c).truncate(order);
                        let q = &gam(d, b, e).truncate(order) * &gam(e, a, c).truncate(order);
                        acc = &acc + &(&p - &q);
                    }
                    r_up.push(acc);
                }
            }
        }
    }
    let up = |d: usize, c: usize, a: usize, b: usize| &r_up[((d * n + c) * n + a) * n + b];
    let mut comps = Vec::with_capacity(n.pow(4));
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    // Riem_abcd = −g_de R^e_cab
                    let mut acc = Jet::zero(g.space(), order);
                    for e in 0..n {
                        acc = &acc - &(&g.at(d, e).truncate(order) * up(e, c, a, b));
                    }
                    comps.push(acc);
                }
            }
        }
    }
    Ok(TensorJet::new(n, 4, comps))
}

pub fn riemann(g: &MetricField, x: &[f64]) -> Result<TensorSample, GeometryError> {
    let jet = g.jet(x, 2)?;
    Ok(riemann_jets(&jet)?.sample(x))
}

/// `(∇T)_{a₁…a_r b} = ∂_b T_{a₁…a_r} − Σ_s Γ^c_{b a_s} T_{a₁…c…a_r}`; the new slot is last.
pub fn covariant_derivative_jet(t: &TensorJet, gamma: &[Jet]) -> TensorJet {
    let n = t.n;
    let r = t.rank;
    let order = t.order().saturating_sub(1).min(gamma[0].order());
    let gamma: Vec<Jet> = gamma.iter().map(|j| j.truncate(order)).collect();
    let partials: Vec<Vec<Jet>> = t
        .comps
        .iter()
        .map(|c| (0..n).map(|b| c.deriv(b).truncate(order)).collect())
        .collect();
    let values: Vec<Jet> = t.comps.iter().map(|c| c.truncate(order)).collect();
    let mut comps = Vec::with_capacity(n.pow(r as u32 + 1));
    let mut stride = vec![1usize; r];
    for s in (0..r.saturating_sub(1)).rev() {
        stride[s] = stride[s + 1] * n;
    }
    for flat in 0..n.pow(r as u32) {
        let idx = multi_index(flat, r, n);
        for b in 0..n {
            let mut acc = partials[flat][b].clone();
            for s in 0..r {
                let base = flat - idx[s] * stride[s];
                for c in 0..n {
                    let g = &gamma[c * n * n + b * n + idx[s]];
                    acc = &acc - &(g * &values[base + c * stride[s]]);
                }
            }
            comps.push(acc);
        }
    }
    TensorJet::new(n, r + 1, comps)
}

/// Applies [`covariant_derivative_jet`] `k` times.
pub fn nabla_k(t: TensorJet, gamma: &[Jet], k: usize) -> TensorJet {
    let mut cur = t;
    for _ in 0..k {
        cur = covariant_derivative_jet(&cur, gamma);
    }
    cur
}

/// A tensor field that can produce its component jets from the metric jets at a point.
pub trait TensorField: Sync {
    fn rank(&self, n: usize) -> usize;
    /// Metric jet order consumed beyond the tensor's own jet order.
    fn metric_lag(&self) -> usize;
    fn jet(&self, g: &MetricJet) -> Result<TensorJet, GeometryError>;
}

/// The curvature tensor itself.
pub struct RiemannTensor;

impl TensorField for RiemannTensor {
    fn rank(&self, _n: usize) -> usize {
        4
    }
    fn metric_lag(&self) -> usize {
        2
    }
    fn jet(&self, g: &MetricJet) -> Result<TensorJet, GeometryError> {
        riemann_jets(g)
    }
}

/// The metric as a 2-tensor.
pub struct MetricTensor;

impl TensorField for MetricTensor {
    fn rank(&self, _n: usize) -> usize {
        2
    }
    fn metric_lag(&self) -> usize {
        0
    }
    fn jet(&self, g: &MetricJet) -> Result<TensorJet, GeometryError> {
        Ok(TensorJet::new(g.dim(), 2, g.components().to_vec()))
    }
}

/// A covariant tensor given by component expressions over the chart variables.
pub struct ExprTensor {
    pub rank: usize,
    pub comps: Vec<Expr>,
}

impl TensorField for ExprTensor {
    fn rank(&self, _n: usize) -> usize {
        self.rank
    }
    fn metric_lag(&self) -> usize {
        0
    }
    fn jet(&self, g: &MetricJet) -> Result<TensorJet, GeometryError> {
        let order = g.order();
        let comps = self
            .comps
            .iter()
            .map(|c| eval_expr(c, g.space(), order, g.point()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TensorJet::new(g.dim(), self.rank, comps))
    }
}

/// `∇^k T` at the base point of `g` (which must carry order `lag + k`).
pub fn covariant_derivative_at(
    g: &MetricJet,
    t: &dyn TensorField,
    k: usize,
) -> Result<TensorSample, GeometryError> {
    if k > MAX_COVARIANT_ORDER {
        return Err(GeometryError::OrderCap {
            requested: k,
            cap: MAX_COVARIANT_ORDER,
        });
    }
    let needed = t.metric_lag() + k;
    if g.order() < needed.max(1) {
        return Err(GeometryError::OrderCap {
            requested: needed,
            cap: g.order(),
        });
    }
    let g = g.truncate(needed.max(1));
    let tj = t.jet(&g)?;
    if k == 0 {
        return Ok(tj.sample(g.point()));
    }
    let gamma = christoffel_jets(&g)?;
    Ok(nabla_k(tj, &gamma, k).sample(g.point()))
}

/// `∇^k T` of `g` at `x`.
pub fn covariant_derivative_k(
    g: &MetricField,
    t: &dyn TensorField,
    k: usize,
    x: &[f64],
) -> Result<TensorSample, GeometryError> {
    if k > MAX_COVARIANT_ORDER {
        return Err(GeometryError::OrderCap {
            requested: k,
            cap: MAX_COVARIANT_ORDER,
        });
    }
    let jet = g.jet(x, (t.metric_lag() + k).max(1))?;
    covariant_derivative_at(&jet, t, k)
}

fn bilinear(m: &nalgebra::DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += m[(i, j)] * v[i] * w[j];
        }
    }
    s
}

/// `Riem(v,w,v,w) / (g(v,v)g(w,w) − g(v,w)²)` from a Riemann sample and metric matrix.
pub fn sectional_from(
    riem: &TensorSample,
    gm: &nalgebra::DMatrix<f64>,
    v: &[f64],
    w: &[f64],
) -> Result<f64, GeometryError> {
    let n = riem.n;
    let area = bilinear(gm, v, v) * bilinear(gm, w, w) - bilinear(gm, v, w).powi(2);
    let scale = bilinear(gm, v, v).abs() * bilinear(gm, w, w).abs();
    if area.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) || area == 0.0 {
        return Err(GeometryError::DegeneratePlane);
    }
    let mut num = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    num += riem.get(&[a, b, c, d]) * v[a] * w[b] * v[c] * w[d];
                }
            }
        }
    }
    Ok(num / area)
}

pub fn sectional_curvature(
    g: &MetricField,
    x: &[f64],
    v: &[f64],
    w: &[f64],
) -> Result<f64, GeometryError> {
    let riem = riemann(g, x)?;
    sectional_from(&riem, &g.metric_matrix(x)?, v, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tensor::inner_and_norm;

    fn half_plane() -> MetricField {
        MetricField::parse(
            &["x", "y"],
            &[&["1/(y*y)", "0"], &["0", "1/(y*y)"]],
            vec![1, 1],
            vec![(-5.0, 5.0), (0.1, 10.0)],
        )
        .unwrap()
    }

    fn sphere() -> MetricField {
        MetricField::parse(
            &["th", "ph"],
            &[&["1", "0"], &["0", "sin(th)^2"]],
            vec![1, 1],
            vec![(0.01, 3.13), (-10.0, 10.0)],
        )
        .unwrap()
    }

    #[test]
    fn flat_has_no_christoffels() {
        let g = MetricField::parse(
            &["x", "y", "z"],
            &[&["1", "0", "0"], &["0", "1", "0"], &["0", "0", "1"]],
            vec![1; 3],
            vec![(-1.0, 1.0); 3],
        )
        .unwrap();
        assert!(christoffels(&g, &[0.1, 0.2, 0.3])
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        assert!(riemann(&g, &[0.1, 0.2, 0.3]).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn hyperbolic_christoffels() {
        let gam = christoffels(&half_plane(), &[0.0, 1.0]).unwrap();
        let at = |c: usize, a: usize, b: usize| gam[c * 4 + a * 2 + b];
        assert!((at(0, 0, 1) + 1.0).abs() < 1e-14);
        assert!((at(0, 1, 0) + 1.0).abs() < 1e-14);
        assert!((at(1, 0, 0) - 1.0).abs() < 1e-14);
        assert!((at(1, 1, 1) + 1.0).abs() < 1e-14);
        assert_eq!(at(0, 0, 0), 0.0);
        assert_eq!(at(0, 1, 1), 0.0);
        assert_eq!(at(1, 0, 1), 0.0);
    }

    #[test]
    fn hyperbolic_and_sphere_norms() {
        let g = half_plane();
        let x = [0.0, 1.0];
        let r = riemann(&g, &x).unwrap();
        let (ip, norm) = inner_and_norm(&r, &g.metric_matrix(&x).unwrap()).unwrap();
        assert!((ip - 4.0).abs() < 1e-9 && (norm - 2.0).abs() < 1e-9);
        let s = sphere();
        let y = [std::f64::consts::FRAC_PI_2, 0.0];
        let r = riemann(&s, &y).unwrap();
        let (_, norm) = inner_and_norm(&r, &s.metric_matrix(&y).unwrap()).unwrap();
        assert!((norm - 2.0).abs() < 1e-9);
        let k = sectional_curvature(&s, &[1.0, 0.3], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        let k = sectional_curvature(&g, &[0.4, 2.3], &[1.0, 0.2], &[0.3, 1.0]).unwrap();
        assert!((k + 1.0).abs() < 1e-12);
    }

    #[test]
    fn metric_is_parallel_and_hyperbolic_curvature_is_parallel() {
        let g = half_plane();
        let x = [0.3, 1.4];
        let dg = covariant_derivative_k(&g, &MetricTensor, 1, &x).unwrap();
        assert!(dg.max_abs() < 1e-12);
        let dr = covariant_derivative_k(&g, &RiemannTensor, 1, &x).unwrap();
        assert!(dr.max_abs() < 1e-8);
        let ddr = covariant_derivative_k(&g, &RiemannTensor, 2, &x).unwrap();
        assert!(ddr.max_abs() < 1e-8);
        assert!(covariant_derivative_k(&g, &RiemannTensor, 4, &x).is_err());
    }

    #[test]
    fn riemann_symmetries() {
        let g = MetricField::parse(
            &["x", "y", "z"],
            &[
                &["2 + sin(x*y)", "0.1*z", "0"],
                &["0.1*z", "1 + x^2", "0.2*x"],
                &["0", "0.2*x", "exp(0.3*y)"],
            ],
            vec![1; 3],
            vec![(-1.0, 1.0); 3],
        )
        .unwrap();
        let r = riemann(&g, &[0.2, -0.3, 0.5]).unwrap();
        let scale = r.max_abs();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let v = r.get(&[a, b, c, d]);
                        assert!((v + r.get(&[b, a, c, d])).abs() < 1e-9 * scale);
                        assert!((v + r.get(&[a, b, d, c])).abs() < 1e-9 * scale);
                        assert!((v - r.get(&[c, d, a, b])).abs() < 1e-9 * scale);
                        let bianchi = v + r.get(&[b, c, a, d]) + r.get(&[c, a, b, d]);
                        assert!(bianchi.abs() < 1e-9 * scale);
                    }
                }
            }
        }
    }
}
