//! Closed-form transformation laws under `g ↦ e^{2u} g`.

use crate::error::GeometryError;
use crate::jet::Jet;

use super::curvature::{christoffel_jets, riemann_jets};
use super::factor::ConformalFactor;
use super::metric::{MetricField, MetricJet};
use super::tensor::{kulkarni_nomizu, TensorJet, TensorSample};

/// `Hess_g u` as jets, row-major.
pub fn hessian_jets(g: &MetricJet, u: &Jet) -> Result<Vec<Jet>, GeometryError> {
    let n = g.dim();
    let gamma = christoffel_jets(g)?;
    let order = u.order().saturating_sub(2).min(gamma[0].order());
    let du: Vec<Jet> = (0..n).map(|a| u.deriv(a)).collect();
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let mut acc = du[a].deriv(b).truncate(order);
            for c in 0..n {
                acc = &acc
                    - &(&gamma[c * n * n + a * n + b].truncate(order) * &du[c].truncate(order));
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// `e^{2u}(Riem − g⊘(Hess u − du⊗du + ½|du|²_g g))` as jets.
pub fn conformal_riemann_jets(g: &MetricJet, u: &Jet) -> Result<TensorJet, GeometryError> {
    let n = g.dim();
    let order = g
        .order()
        .min(u.order())
        .checked_sub(2)
        .ok_or(GeometryError::OrderCap {
            requested: 2,
            cap: 0,
        })?;
    let riem = riemann_jets(&g.truncate(order + 2))?;
    let hess = hessian_jets(&g.truncate(order + 2), &u.truncate(order + 2))?;
    let du: Vec<Jet> = (0..n).map(|a| u.deriv(a).truncate(order)).collect();
    let ginv = g.truncate(order).inverse()?;
    let mut grad_sq = Jet::zero(g.space(), order);
    for a in 0..n {
        for b in 0..n {
            grad_sq = &grad_sq + &(&ginv[a * n + b] * &(&du[a] * &du[b]));
        }
    }
    let half = grad_sq.scale(0.5);
    let gt: Vec<Jet> = g.components().iter().map(|c| c.truncate(order)).collect();
    let t: Vec<Jet> = (0..n * n)
        .map(|f| {
            let (a, b) = (f / n, f % n);
            &(&hess[f] - &(&du[a] * &du[b])) + &(&half * &gt[f])
        })
        .collect();
    let kn = kulkarni_nomizu(&gt, &t, n);
    let e2u = u.truncate(order).scale(2.0).exp();
    let comps = riem
        .comps
        .iter()
        .zip(&kn)
        .map(|(r, k)| &e2u * &(r - k))
        .collect();
    Ok(TensorJet::new(n, 4, comps))
}

pub fn conformal_riemann_closed_form(
    g: &MetricField,
    u: &dyn ConformalFactor,
    x: &[f64],
) -> Result<TensorSample, GeometryError> {
    let gj = g.jet(x, 2)?;
    let uj = u.jet(gj.space(), x, 2)?;
    Ok(conformal_riemann_jets(&gj, &uj)?.sample(x))
}

/// `∇^g_v X + du(X)v + du(v)X − g(v,X) grad_g u`.
///
/// `x_value[c] = X^c(x)` and `x_partials[c*n + a] = ∂_a X^c(x)`.
pub fn conformal_connection_closed_form(
    g: &MetricField,
    u: &dyn ConformalFactor,
    x: &[f64],
    v: &[f64],
    x_value: &[f64],
    x_partials: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    let n = g.dim();
    let gj = g.jet(x, 1)?;
    let gamma: Vec<f64> = christoffel_jets(&gj)?.iter().map(Jet::value).collect();
    let uj = u.jet(gj.space(), x, 1)?;
    let du: Vec<f64> = (0..n).map(|a| uj.gradient(a)).collect();
    let gm = gj.value_matrix();
    let ginv = gm
        .clone()
        .try_inverse()
        .ok_or_else(|| GeometryError::Singular(x.to_vec()))?;
    let du_x: f64 = (0..n).map(|a| du[a] * x_value[a]).sum();
    let du_v: f64 = (0..n).map(|a| du[a] * v[a]).sum();
    let mut g_vx = 0.0;
    for a in 0..n {
        for b in 0..n {
            g_vx += gm[(a, b)] * v[a] * x_value[b];
        }
    }
    let mut out = vec![0.0; n];
    for c in 0..n {
        let mut nabla = 0.0;
        for a in 0..n {
            nabla += v[a] * x_partials[c * n + a];
            for b in 0..n {
                nabla += v[a] * gamma[c * n * n + a * n + b] * x_value[b];
            }
        }
        let grad_c: f64 = (0..n).map(|m| ginv[(c, m)] * du[m]).sum();
        out[c] = nabla + du_x * v[c] + du_v * x_value[c] - g_vx * grad_c;
    }
    Ok(out)
}

/// `∇_v X` for the metric `g` directly.
pub fn levi_civita(
    g: &MetricField,
    x: &[f64],
    v: &[f64],
    x_value: &[f64],
    x_partials: &[f64],
) -> Result<Vec<f64>, GeometryError> {
    let n = g.dim();
    let gamma = super::curvature::christoffels(g, x)?;
    Ok((0..n)
        .map(|c| {
            let mut s = 0.0;
            for a in 0..n {
                s += v[a] * x_partials[c * n + a];
                for b in 0..n {
                    s += v[a] * gamma[c * n * n + a * n + b] * x_value[b];
                }
            }
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Scope;
    use crate::geometry::curvature::riemann;
    use crate::geometry::factor::ExprFactor;

    fn flat2() -> MetricField {
        MetricField::parse(
            &["x", "y"],
            &[&["1", "0"], &["0", "1"]],
            vec![1, 1],
            vec![(-1.0, 1.0); 2],
        )
        .unwrap()
    }

    #[test]
    fn zero_factor_reproduces_riemann() {
        let g = MetricField::parse(
            &["x", "y"],
            &[&["1/(y*y)", "0"], &["0", "1/(y*y)"]],
            vec![1, 1],
            vec![(-1.0, 1.0), (0.5, 3.0)],
        )
        .unwrap();
        let u = ExprFactor::new(crate::expr::Expr::zero(), 2);
        let x = [0.2, 1.3];
        let a = conformal_riemann_closed_form(&g, &u, &x).unwrap();
        let b = riemann(&g, &x).unwrap();
        assert!(a.relative_difference(&b) < 1e-14);
    }

    #[test]
    fn planar_gauss_curvature() {
        let g = flat2();
        let u = ExprFactor::new(Scope::new(["x", "y"]).parse("x^2 + y^2").unwrap(), 2);
        let r = conformal_riemann_closed_form(&g, &u, &[0.0, 0.0]).unwrap();
        // K = Riem_1212 / det(g[u]) with det = e^{4u} = 1 at the origin.
        assert!((r.get(&[0, 1, 0, 1]) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn connection_hand_value() {
        let g = flat2();
        let u = ExprFactor::new(Scope::new(["x", "y"]).parse("x").unwrap(), 2);
        let out = conformal_connection_closed_form(
            &g,
            &u,
            &[0.1, 0.2],
            &[1.0, 0.0],
            &[1.0, 0.0],
            &[0.0; 4],
        )
        .unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
    }
}
