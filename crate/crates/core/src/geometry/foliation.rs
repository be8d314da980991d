//! Second fundamental form of the foliation by level sets of the last `n − p` coordinates.

use crate::error::GeometryError;
use crate::jet::Jet;

use super::curvature::{christoffel_first_jets, TensorField};
use super::factor::ConformalFactor;
use super::metric::{invert_jet_matrix, MetricField, MetricJet};
use super::tensor::{TensorJet, TensorSample};

/// Leaves have dimension `leaf_dim` and are spanned by the first `leaf_dim` coordinate fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoliationSpec {
    pub leaf_dim: usize,
}

impl FoliationSpec {
    pub fn new(leaf_dim: usize, n: usize) -> Result<FoliationSpec, GeometryError> {
        if leaf_dim == 0 || leaf_dim > n {
            return Err(GeometryError::Foliation(leaf_dim));
        }
        Ok(FoliationSpec { leaf_dim })
    }
}

/// Jets of the tangential projection `P^a_i` (row `a`, column `i`), `n × n` row-major.
pub fn tangential_projection(g: &MetricJet, p: usize) -> Result<Vec<Jet>, GeometryError> {
    let n = g.dim();
    let block: Vec<Jet> = (0..p * p).map(|f| g.at(f / p, f % p).clone()).collect();
    let inv = invert_jet_matrix(&block, p)
        .ok_or_else(|| GeometryError::LeafDegenerate(g.point().to_vec()))?;
    let order = g.order();
    let mut proj = Vec::with_capacity(n * n);
    for a in 0..n {
        for i in 0..n {
            if a >= p {
                proj.push(Jet::zero(g.space(), order));
                continue;
            }
            let mut acc = Jet::zero(g.space(), order);
            for b in 0..p {
                acc = &acc + &(&inv[a * p + b] * g.at(b, i));
            }
            proj.push(acc);
        }
    }
    Ok(proj)
}

fn normal_projection(proj: &[Jet], n: usize) -> Vec<Jet> {
    (0..n * n)
        .map(|f| {
            let (d, k) = (f / n, f % n);
            let m = -&proj[f];
            if d == k {
                m.add_constant(1.0)
            } else {
                m
            }
        })
        .collect()
}

/// `II_{ijk} = g(∇_{pr ∂_i}(pr ∂_j), pr^⊥ ∂_k)` as jets of order `g.order() − 1`.
pub fn sff_jets(g: &MetricJet, p: usize) -> Result<TensorJet, GeometryError> {
    let n = g.dim();
    if g.order() == 0 {
        return Err(GeometryError::OrderCap {
            requested: 1,
            cap: 0,
        });
    }
    let order = g.order() - 1;
    let proj: Vec<Jet> = tangential_projection(g, p)?
        .iter()
        .map(|j| j.truncate(order))
        .collect();
    let normal = normal_projection(&proj, n);
    let first = christoffel_first_jets(g);
    // Γ_{ab|k}^⊥ = Σ_d Γ_{ab|d} Q^d_k for leaf directions a, b.
    let mut gq = Vec::with_capacity(p * p * n);
    for a in 0..p {
        for b in 0..p {
            for k in 0..n {
                let mut acc = Jet::zero(g.space(), order);
                for d in 0..n {
                    acc = &acc + &(&first[(a * n + b) * n + d] * &normal[d * n + k]);
                }
                gq.push(acc);
            }
        }
    }
    let mut comps = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut acc = Jet::zero(g.space(), order);
                for a in 0..p {
                    for b in 0..p {
                        let w = &proj[a * n + i] * &proj[b * n + j];
                        acc = &acc + &(&w * &gq[(a * p + b) * n + k]);
                    }
                }
                comps.push(acc);
            }
        }
    }
    Ok(TensorJet::new(n, 3, comps))
}

pub struct SecondFundamentalForm {
    pub leaf_dim: usize,
}

impl TensorField for SecondFundamentalForm {
    fn rank(&self, _n: usize) -> usize {
        3
    }
    fn metric_lag(&self) -> usize {
        1
    }
    fn jet(&self, g: &MetricJet) -> Result<TensorJet, GeometryError> {
        sff_jets(g, self.leaf_dim)
    }
}

pub fn second_fundamental_form(
    g: &MetricField,
    f: FoliationSpec,
    x: &[f64],
) -> Result<TensorSample, GeometryError> {
    let jet = g.jet(x, 1)?;
    Ok(sff_jets(&jet, f.leaf_dim)?.sample(x))
}

/// `e^{2u}(II_{ijk} − g(pr ∂_i, pr ∂_j) du(pr^⊥ ∂_k))` as jets.
pub fn conformal_sff_jets(g: &MetricJet, p: usize, u: &Jet) -> Result<TensorJet, GeometryError> {
    let n = g.dim();
    let order = g
        .order()
        .min(u.order())
        .checked_sub(1)
        .ok_or(GeometryError::OrderCap {
            requested: 1,
            cap: 0,
        })?;
    let gt = g.truncate(order + 1);
    let ii = sff_jets(&gt, p)?;
    let proj: Vec<Jet> = tangential_projection(&gt, p)?
        .iter()
        .map(|j| j.truncate(order))
        .collect();
    let normal = normal_projection(&proj, n);
    let du: Vec<Jet> = (0..n).map(|a| u.deriv(a).truncate(order)).collect();
    let qdu: Vec<Jet> = (0..n)
        .map(|k| {
            let mut acc = Jet::zero(g.space(), order);
            for d in 0..n {
                acc = &acc + &(&du[d] * &normal[d * n + k]);
            }
            acc
        })
        .collect();
    let mut tang = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Jet::zero(g.space(), order);
            for a in 0..p {
                for b in 0..p {
                    let w = &proj[a * n + i] * &proj[b * n + j];
                    acc = &acc + &(&w * &g.at(a, b).truncate(order));
                }
            }
            tang.push(acc);
        }
    }
    let e2u = u.truncate(order).scale(2.0).exp();
    let mut comps = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let f = (i * n + j) * n + k;
                let c = &ii.comps[f].truncate(order) - &(&tang[i * n + j] * &qdu[k]);
                comps.push(&e2u * &c);
            }
        }
    }
    Ok(TensorJet::new(n, 3, comps))
}

pub fn conformal_sff_closed_form(
    g: &MetricField,
    f: FoliationSpec,
    u: &dyn ConformalFactor,
    x: &[f64],
) -> Result<TensorSample, GeometryError> {
    let gj = g.jet(x, 1)?;
    let uj = u.jet(gj.space(), x, 1)?;
    Ok(conformal_sff_jets(&gj, f.leaf_dim, &uj)?.sample(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tensor::inner_and_norm;

    #[test]
    fn horocycles_have_unit_curvature() {
        let g = MetricField::parse(
            &["x", "y"],
            &[&["1/(y*y)", "0"], &["0", "1/(y*y)"]],
            vec![1, 1],
            vec![(-5.0, 5.0), (0.1, 10.0)],
        )
        .unwrap();
        let x = [0.0, 1.0];
        let ii = second_fundamental_form(&g, FoliationSpec { leaf_dim: 1 }, &x).unwrap();
        assert!((ii.get(&[0, 0, 1]) - 1.0).abs() < 1e-14);
        let (_, norm) = inner_and_norm(&ii, &g.metric_matrix(&x).unwrap()).unwrap();
        assert!((norm - 1.0).abs() < 1e-12);
        let y = [0.3, 2.5];
        let ii = second_fundamental_form(&g, FoliationSpec { leaf_dim: 1 }, &y).unwrap();
        assert!((ii.get(&[0, 0, 1]) - 2.5f64.powi(-3)).abs() < 1e-14);
    }

    #[test]
    fn round_spheres_in_euclidean_space() {
        // Spherical coordinates (θ, φ, r), leaves r = const.
        let g = MetricField::parse(
            &["th", "ph", "r"],
            &[
                &["r^2", "0", "0"],
                &["0", "r^2*sin(th)^2", "0"],
                &["0", "0", "1"],
            ],
            vec![1; 3],
            vec![(0.1, 3.0), (-3.0, 3.0), (0.5, 2.0)],
        )
        .unwrap();
        let x = [1.1, 0.4, 1.0];
        let ii = second_fundamental_form(&g, FoliationSpec { leaf_dim: 2 }, &x).unwrap();
        let (_, norm) = inner_and_norm(&ii, &g.metric_matrix(&x).unwrap()).unwrap();
        // Shape operator is the identity on the unit sphere: |II| = sqrt(2).
        assert!((norm - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn product_metric_is_totally_geodesic() {
        let g = MetricField::parse(
            &["x", "y", "z"],
            &[
                &["1 + x^2", "0", "0"],
                &["0", "2 + sin(x)", "0"],
                &["0", "0", "exp(z)"],
            ],
            vec![1; 3],
            vec![(-1.0, 1.0); 3],
        )
        .unwrap();
        let ii =
            second_fundamental_form(&g, FoliationSpec { leaf_dim: 2 }, &[0.3, 0.1, -0.4]).unwrap();
        assert_eq!(ii.max_abs(), 0.0);
    }
}
