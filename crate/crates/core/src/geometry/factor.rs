use std::sync::{Arc, RwLock};

use crate::expr::{EvalError, Expr};
use crate::jet::{factorial, Jet, JetSpace};

/// A conformal factor `u` that can be expanded at chart points.
pub trait ConformalFactor: Sync {
    /// Taylor jet of `u` at `x` in `space` (same dimension as the chart).
    fn jet(&self, space: &Arc<JetSpace>, x: &[f64], order: usize) -> Result<Jet, EvalError>;

    /// `(|u|, |∇¹u|_η, …, |∇^k u|_η)` at `x` for the auxiliary metric η.
    fn eta_norms(&self, x: &[f64], k: usize) -> Result<Vec<f64>, EvalError>;
}

/// A factor given by an expression, with symbolic partials cached by monomial.
pub struct ExprFactor {
    expr: Expr,
    n: usize,
    partials: RwLock<Vec<Expr>>,
}

impl ExprFactor {
    pub fn new(expr: Expr, n: usize) -> ExprFactor {
        ExprFactor {
            partials: RwLock::new(vec![expr.clone()]),
            expr,
            n,
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    fn ensure(&self, space: &Arc<JetSpace>, order: usize) {
        let needed = space.len(order);
        if self.partials.read().expect("partials lock").len() >= needed {
            return;
        }
        let mut list = self.partials.write().expect("partials lock");
        while list.len() < needed {
            let m = list.len();
            let alpha = &space.exponents()[m];
            let v = alpha
                .iter()
                .position(|&a| a > 0)
                .expect("non-constant monomial");
            let mut parent = alpha.clone();
            parent[v] -= 1;
            let p = space.index_of(&parent).expect("parent monomial");
            let d = list[p].differentiate(v);
            list.push(d);
        }
    }
}

impl ConformalFactor for ExprFactor {
    fn jet(&self, space: &Arc<JetSpace>, x: &[f64], order: usize) -> Result<Jet, EvalError> {
        if order > super::metric::SYMBOLIC_ORDER {
            return crate::jet::eval_expr(&self.expr, space, order, x);
        }
        // The cache is laid out for the largest space of this dimension.
        let full = JetSpace::get(self.n, super::metric::MAX_METRIC_ORDER);
        self.ensure(&full, order);
        let list = self.partials.read().expect("partials lock");
        let vals = list[..space.len(order)]
            .iter()
            .map(|e| e.eval(x))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Jet::from_partials(space, order, &vals))
    }

    fn eta_norms(&self, x: &[f64], k: usize) -> Result<Vec<f64>, EvalError> {
        let space = JetSpace::get(self.n, super::metric::MAX_METRIC_ORDER);
        let mut norms = self.jet(&space, x, k)?.derivative_norms();
        norms[0] = norms[0].abs();
        Ok(norms)
    }
}

/// A one-variable profile `u(r)` on the ray with derivatives available to some order.
pub trait Profile: Sync {
    /// `[u(r), u′(r), …, u^{(order)}(r)]`.
    fn derivatives(&self, r: f64, order: usize) -> Vec<f64>;
}

/// The radial extension `U(x) = u(|x|)` of a profile to a planar (or higher) chart.
///
/// The profile must be constant near `r = 0`. η-norms are taken on the ray model:
/// `|∇^j U|_η` is reported as `|u^{(j)}(r)|`.
pub struct RadialLift<P> {
    pub profile: P,
    pub n: usize,
}

impl<P: Profile> ConformalFactor for RadialLift<P> {
    fn jet(&self, space: &Arc<JetSpace>, x: &[f64], order: usize) -> Result<Jet, EvalError> {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let r = r2.sqrt();
        let d = self.profile.derivatives(r, order);
        if r < 1e-12 || d[1..].iter().all(|v| *v == 0.0) {
            return Ok(Jet::constant(space, order, d[0]));
        }
        let mut rsq = Jet::zero(space, order);
        for (v, xv) in x.iter().enumerate() {
            let xj = Jet::variable(space, order, v, *xv);
            rsq = &rsq + &(&xj * &xj);
        }
        Ok(rsq.sqrt().compose(&d))
    }

    fn eta_norms(&self, x: &[f64], k: usize) -> Result<Vec<f64>, EvalError> {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(self
            .profile
            .derivatives(r, k)
            .into_iter()
            .map(f64::abs)
            .collect())
    }
}

impl<P: Profile + ?Sized> Profile for &P {
    fn derivatives(&self, r: f64, order: usize) -> Vec<f64> {
        (**self).derivatives(r, order)
    }
}

/// A profile used directly as a factor on a one-dimensional chart.
pub struct LineLift<P> {
    pub profile: P,
}

impl<P: Profile> ConformalFactor for LineLift<P> {
    fn jet(&self, space: &Arc<JetSpace>, x: &[f64], order: usize) -> Result<Jet, EvalError> {
        let d = self.profile.derivatives(x[0], order);
        let c = d
            .iter()
            .enumerate()
            .map(|(m, v)| v / factorial(m))
            .collect();
        Ok(Jet::from_coefficients(space, order, c))
    }

    fn eta_norms(&self, x: &[f64], k: usize) -> Result<Vec<f64>, EvalError> {
        Ok(self
            .profile
            .derivatives(x[0], k)
            .into_iter()
            .map(f64::abs)
            .collect())
    }
}

/// Profile from a one-variable expression in `r`.
pub struct ExprProfile {
    pub derivs: Vec<Expr>,
}

impl ExprProfile {
    pub fn new(u: &Expr, order: usize) -> ExprProfile {
        let mut derivs = vec![u.clone()];
        for m in 0..order {
            let d = derivs[m].differentiate(0);
            derivs.push(d);
        }
        ExprProfile { derivs }
    }
}

impl Profile for ExprProfile {
    fn derivatives(&self, r: f64, order: usize) -> Vec<f64> {
        self.derivs[..=order]
            .iter()
            .map(|e| e.eval(&[r]).unwrap_or(f64::NAN))
            .collect()
    }
}

/// Taylor coefficients → derivative values of a one-variable jet.
pub fn jet_derivatives(j: &Jet) -> Vec<f64> {
    j.coefficients()
        .iter()
        .enumerate()
        .map(|(m, c)| c * factorial(m))
        .collect()
}
