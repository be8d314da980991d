//! Smooth climbs `φ_n: [0,1] → [0,n]` with uniformly bounded weighted derivatives.
//!
//! `φ_n = −(1/c) ln(1 − q_n ξ)` with `q_n = 1 − e^{−nc}`. The argument of the
//! logarithm is evaluated as `(1 − ξ) + e^{−nc} ξ` in log-space, with `1 − ξ`
//! expanded as `ξ(1 − t)`, so large `n·c` neither cancels nor underflows.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::expr::{Expr, Scope};
use crate::jet::{eval_expr, Jet, JetSpace, LINE_ORDER};

/// Default `c` for `k = 0`.
pub const DEFAULT_C_K0: f64 = 19.26;

/// Smallest `n` for which the naive counterexample is evaluated (`1/ln n ≤ 0.25`).
pub const NAIVE_MIN_N: u64 = 55;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlpinistError {
    #[error("exponent weight a must be positive, got {0}")]
    NonPositiveA(f64),
    #[error("constant c must be positive, got {0}")]
    NonPositiveC(f64),
    #[error("order {0} exceeds the supported maximum {LINE_ORDER}")]
    Order(usize),
    #[error("naive counterexample needs n ≥ {NAIVE_MIN_N}, got {0}")]
    NaiveRange(u64),
}

fn line_space() -> Arc<JetSpace> {
    JetSpace::get(1, LINE_ORDER)
}

/// `ξ(t) = σ(t)/(σ(t) + σ(1−t))`, `σ(t) = e^{−1/t}`, extended by 0 and 1 outside `(0,1)`.
#[derive(Debug, Clone)]
pub struct SmoothStep {
    scope: Scope,
    expr: Expr,
}

impl Default for SmoothStep {
    fn default() -> SmoothStep {
        SmoothStep::standard()
    }
}

impl SmoothStep {
    pub fn standard() -> SmoothStep {
        let scope = Scope::new(["t"]);
        let expr = scope
            .parse("exp(-1/t)/(exp(-1/t) + exp(-1/(1 - t)))")
            .expect("smooth step parses");
        SmoothStep { scope, expr }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    /// Symbolic `j`-th derivative (interior formula).
    pub fn derivative_expr(&self, j: usize) -> Expr {
        (0..j).fold(self.expr.clone(), |e, _| e.differentiate(0))
    }

    pub fn value(&self, t: f64) -> f64 {
        self.jet(t, 0).value()
    }

    /// Jet of `ξ` at `t`.
    pub fn jet(&self, t: f64, order: usize) -> Jet {
        let space = line_space();
        if t <= 0.0 {
            return Jet::zero(&space, order);
        }
        if t >= 1.0 {
            return Jet::constant(&space, order, 1.0);
        }
        eval_expr(&self.expr, &space, order, &[t]).expect("smooth step is defined on (0,1)")
    }

    /// Jet of `1 − ξ` at `t`, computed as `ξ(1 − t)` with odd coefficients negated.
    pub fn complement_jet(&self, t: f64, order: usize) -> Jet {
        mirror(&self.jet(1.0 - t, order))
    }

    /// Derivatives `ξ, ξ′, …, ξ^{(order)}` at `t`.
    pub fn derivatives(&self, t: f64, order: usize) -> Vec<f64> {
        self.jet(t, order).derivatives()
    }
}

/// Per-`t` data shared across all `n`.
#[derive(Debug, Clone)]
pub struct StepSample {
    pub t: f64,
    ln_xi: f64,
    ln_comp: f64,
    // X/X₀ − 1 and C/C₀ − 1, zero when the base value vanishes.
    xi_rel: Jet,
    comp_rel: Jet,
}

impl StepSample {
    pub fn new(t: f64, order: usize) -> StepSample {
        let space = line_space();
        let zero = Jet::zero(&space, order);
        if t <= 0.0 || t >= 1.0 {
            let (ln_xi, ln_comp) = if t <= 0.0 {
                (f64::NEG_INFINITY, 0.0)
            } else {
                (0.0, f64::NEG_INFINITY)
            };
            return StepSample {
                t,
                ln_xi,
                ln_comp,
                xi_rel: zero.clone(),
                comp_rel: zero,
            };
        }
        let lx = log_step_jet(t, order);
        let lc = mirror(&log_step_jet(1.0 - t, order));
        let rel = |l: &Jet| l.add_constant(-l.value()).exp().add_constant(-1.0);
        StepSample {
            t,
            ln_xi: lx.value(),
            ln_comp: lc.value(),
            xi_rel: rel(&lx),
            comp_rel: rel(&lc),
        }
    }

    pub fn order(&self) -> usize {
        self.xi_rel.order()
    }
}

/// Jet of `ln ξ(s) = −ln(1 + e^{1/s − 1/(1−s)})` for `s ∈ (0,1)`.
fn log_step_jet(s: f64, order: usize) -> Jet {
    let space = line_space();
    let v = Jet::variable(&space, order, 0, s);
    let h = &v.recip() - &v.scale(-1.0).add_constant(1.0).recip();
    let softplus = if h.value() > 0.0 {
        &h + &h.scale(-1.0).exp().add_constant(1.0).ln()
    } else {
        h.exp().add_constant(1.0).ln()
    };
    softplus.scale(-1.0)
}

/// `f(t) ↦ f(−t)` on coefficients.
fn mirror(j: &Jet) -> Jet {
    let c: Vec<f64> = j
        .coefficients()
        .iter()
        .enumerate()
        .map(|(m, v)| if m % 2 == 1 { -v } else { *v })
        .collect();
    Jet::from_coefficients(j.space(), j.order(), c)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// The climb family for weights `(a, k)`.
#[derive(Debug, Clone)]
pub struct Alpinist {
    a: f64,
    k: usize,
    c: f64,
    step: SmoothStep,
}

impl Alpinist {
    /// `c = a/k` for `k ≥ 1`, and `c = 19.26` for `k = 0`.
    pub fn new(a: f64, k: usize) -> Result<Alpinist, AlpinistError> {
        let c = if k >= 1 { a / k as f64 } else { DEFAULT_C_K0 };
        Alpinist::with_c(a, k, c)
    }

    pub fn with_c(a: f64, k: usize, c: f64) -> Result<Alpinist, AlpinistError> {
        if !(a > 0.0) {
            return Err(AlpinistError::NonPositiveA(a));
        }
        if !(c > 0.0) {
            return Err(AlpinistError::NonPositiveC(c));
        }
        if k + 2 > LINE_ORDER {
            return Err(AlpinistError::Order(k + 2));
        }
        Ok(Alpinist {
            a,
            k,
            c,
            step: SmoothStep::standard(),
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn step(&self) -> &SmoothStep {
        &self.step
    }

    /// `q_n = 1 − e^{−nc}`.
    pub fn q(&self, n: u64) -> f64 {
        -(-(n as f64) * self.c).exp_m1()
    }

    /// `ln(1 − q_n) = −nc`, finite where `q_n` rounds to 1.
    pub fn ln_q_complement(&self, n: u64) -> f64 {
        -(n as f64) * self.c
    }

    /// `ln(1 − q_n ξ)` as a jet at the sample point.
    fn log_argument(&self, n: u64, s: &StepSample) -> Jet {
        let order = s.order();
        let space = line_space();
        if n == 0 {
            return Jet::zero(&space, order);
        }
        let ln_scaled_xi = -(n as f64) * self.c + s.ln_xi;
        let ln_a0 = log_add_exp(s.ln_comp, ln_scaled_xi);
        let w_comp = (s.ln_comp - ln_a0).exp();
        let w_xi = (ln_scaled_xi - ln_a0).exp();
        let eps = &s.comp_rel.scale(w_comp) + &s.xi_rel.scale(w_xi);
        // ln(1 + ε) with ε(t₀) = 0.
        let mut d = vec![0.0];
        for m in 1..=order {
            let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * crate::jet::factorial(m - 1));
        }
        eps.add_constant(1.0).compose(&d).add_constant(ln_a0)
    }

    /// Jet of `φ_n` at a precomputed sample.
    pub fn phi_jet(&self, n: u64, s: &StepSample) -> Jet {
        self.log_argument(n, s).scale(-1.0 / self.c)
    }

    /// `[φ_n(t), φ_n′(t), …, φ_n^{(order)}(t)]`.
    pub fn phi(&self, n: u64, t: f64, order: usize) -> Vec<f64> {
        let space = line_space();
        if t <= 0.0 || n == 0 {
            return vec![0.0; order + 1];
        }
        if t >= 1.0 {
            let mut v = vec![0.0; order + 1];
            v[0] = n as f64;
            return v;
        }
        let _ = space;
        self.phi_jet(n, &StepSample::new(t, order)).derivatives()
    }

    /// `e^{−aφ_n}(1 + Σ_{j≤k} |φ_n^{(j)}|)` at a sample of order `≥ k`.
    pub fn g_value(&self, n: u64, s: &StepSample) -> f64 {
        let ln_arg = self.log_argument(n, s);
        let phi = ln_arg.scale(-1.0 / self.c).derivatives();
        let weight = ((self.a / self.c) * ln_arg.value()).exp();
        weight * (1.0 + phi[..=self.k].iter().map(|v| v.abs()).sum::<f64>())
    }

    /// Grid `t_i = i/grid`, `i = 0..=grid`, sampled to order `k`.
    pub fn samples(&self, grid: usize, order: usize) -> Vec<StepSample> {
        (0..=grid)
            .into_par_iter()
            .map(|i| StepSample::new(i as f64 / grid as f64, order))
            .collect()
    }

    pub fn g_report(&self, n: u64, samples: &[StepSample]) -> GQuantityReport {
        let mut sup = f64::NEG_INFINITY;
        let mut argmax = 0.0;
        for s in samples {
            let v = self.g_value(n, s);
            if v > sup {
                sup = v;
                argmax = s.t;
            }
        }
        GQuantityReport {
            n,
            grid: samples.len().saturating_sub(1),
            sup,
            argmax_t: argmax,
        }
    }

    /// Per-`n` sup of the G quantity for `n = 0..=max_n`.
    pub fn g_bound(&self, max_n: u64, grid: usize) -> GBoundReport {
        let samples = self.samples(grid, self.k);
        self.g_bound_on(max_n, &samples)
    }

    pub fn g_bound_on(&self, max_n: u64, samples: &[StepSample]) -> GBoundReport {
        let per_n: Vec<GQuantityReport> = (0..=max_n)
            .into_par_iter()
            .map(|n| self.g_report(n, samples))
            .collect();
        let overall_sup = per_n.iter().fold(f64::NEG_INFINITY, |a, r| a.max(r.sup));
        GBoundReport {
            a: self.a,
            k: self.k,
            c: self.c,
            per_n,
            overall_sup,
        }
    }

    /// Largest `|φ_n(0)|`, `|φ_n(1) − n|`, and `|φ_n^{(j)}|` at `10⁻⁹` and `1 − 10⁻⁹` for `1 ≤ j ≤ order`.
    pub fn endpoint_residual(&self, n: u64, order: usize) -> f64 {
        let mut worst = self.phi(n, 0.0, 0)[0].abs();
        worst = worst.max((self.phi(n, 1.0, 0)[0] - n as f64).abs());
        for t in [1e-9, 1.0 - 1e-9] {
            let d = self.phi(n, t, order);
            for v in &d[1..] {
                worst = worst.max(v.abs());
            }
        }
        worst
    }
}

/// `sup_{s ≥ 0} (1 + s) e^{−as}`.
pub fn k0_supremum(a: f64) -> f64 {
    if a >= 1.0 {
        1.0
    } else {
        let s = 1.0 / a - 1.0;
        (1.0 + s) * (-a * s).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GQuantityReport {
    pub n: u64,
    pub grid: usize,
    pub sup: f64,
    pub argmax_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GBoundReport {
    pub a: f64,
    pub k: usize,
    pub c: f64,
    pub per_n: Vec<GQuantityReport>,
    pub overall_sup: f64,
}

impl GBoundReport {
    /// Sup over `n ≤ max_n`.
    pub fn sup_up_to(&self, max_n: u64) -> f64 {
        self.per_n
            .iter()
            .filter(|r| r.n <= max_n)
            .fold(f64::NEG_INFINITY, |a, r| a.max(r.sup))
    }
}

/// The unscaled naive climb: `e^{−1/t}` on `(0, ¼]`, blended to 1 on `[¼, ¾]`.
pub fn naive_phi(t: f64, order: usize) -> Vec<f64> {
    let space = line_space();
    if t <= 0.0 {
        return vec![0.0; order + 1];
    }
    if t >= 0.75 {
        let mut v = vec![0.0; order + 1];
        v[0] = 1.0;
        return v;
    }
    let sigma = Jet::variable(&space, order, 0, t).recip().scale(-1.0).exp();
    if t <= 0.25 {
        return sigma.derivatives();
    }
    let step = SmoothStep::standard();
    let inner = (t - 0.25) / 0.5;
    let z = step.jet(inner, order);
    // ζ(t) = ξ((t − ¼)/½): scale the m-th coefficient by 2^m.
    let zc: Vec<f64> = z
        .coefficients()
        .iter()
        .enumerate()
        .map(|(m, c)| c * 2f64.powi(m as i32))
        .collect();
    let zeta = Jet::from_coefficients(&space, order, zc);
    let one_minus = zeta.scale(-1.0).add_constant(1.0);
    (&(&one_minus * &sigma) + &zeta).derivatives()
}

/// `e^{−φ_n(t_n)}(1 + |φ_n(t_n)| + |φ_n′(t_n)|)` for `φ_n = n·φ` at `t_n = 1/ln n`.
pub fn naive_counterexample(n: u64) -> Result<f64, AlpinistError> {
    if n < NAIVE_MIN_N {
        return Err(AlpinistError::NaiveRange(n));
    }
    let t = 1.0 / (n as f64).ln();
    let d = naive_phi(t, 1);
    let nf = n as f64;
    Ok((-nf * d[0]).exp() * (1.0 + (nf * d[0]).abs() + (nf * d[1]).abs()))
}

/// Grid sup of `e^{−φ_n}(1 + |φ_n| + |φ_n′|)` for the naive family.
pub fn naive_g_sup(n: u64, grid: usize) -> f64 {
    let nf = n as f64;
    (0..=grid)
        .into_par_iter()
        .map(|i| {
            let d = naive_phi(i as f64 / grid as f64, 1);
            (-nf * d[0]).exp() * (1.0 + (nf * d[0]).abs() + (nf * d[1]).abs())
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_endpoints_and_symmetry() {
        let s = SmoothStep::standard();
        assert_eq!(s.value(0.0), 0.0);
        assert_eq!(s.value(1.0), 1.0);
        assert!((s.value(0.5) - 0.5).abs() < 1e-15);
        for t in [0.1, 0.37, 0.8] {
            assert!((s.value(t) + s.value(1.0 - t) - 1.0).abs() < 1e-15);
        }
        for t in [1e-9, 1.0 - 1e-9] {
            let d = s.derivatives(t, 6);
            assert!(d[1..].iter().all(|v| v.abs() < 1e-12), "{d:?}");
        }
    }

    #[test]
    fn taylor_derivatives_match_symbolic() {
        let s = SmoothStep::standard();
        for j in 1..=4 {
            let e = s.derivative_expr(j);
            for t in [0.05, 0.3, 0.5, 0.9, 0.97] {
                let sym = e.eval(&[t]).unwrap();
                let tay = s.derivatives(t, j)[j];
                assert!(
                    (sym - tay).abs() < 1e-9 * (1.0 + sym.abs()),
                    "j={j} t={t}: {sym} vs {tay}"
                );
            }
        }
    }

    #[test]
    fn constants() {
        let a = Alpinist::new(1.0, 1).unwrap();
        assert_eq!(a.c(), 1.0);
        assert!((a.q(1) - (1.0 - (-1f64).exp())).abs() < 1e-15);
        assert!((a.q(1) - 0.63212).abs() < 1e-5);
        assert_eq!(Alpinist::new(2.0, 4).unwrap().c(), 0.5);
        assert_eq!(Alpinist::new(1.0, 0).unwrap().c(), 19.26);
        assert!(Alpinist::new(0.0, 1).is_err());
    }

    #[test]
    fn phi_values() {
        let a = Alpinist::new(1.0, 1).unwrap();
        let expect = -(1.0 - a.q(1) / 2.0).ln();
        assert!((a.phi(1, 0.5, 0)[0] - expect).abs() < 1e-14);
        assert!((expect - 0.37989).abs() < 1e-5);
        for n in [0, 1, 5, 40, 200] {
            assert_eq!(a.phi(n, 0.0, 2)[0], 0.0);
            assert!((a.phi(n, 1.0, 2)[0] - n as f64).abs() < 1e-10);
            assert!((a.phi(n, 1.0 - 1e-12, 0)[0] - n as f64).abs() < 1e-10);
        }
        assert!(a.phi(0, 0.3, 3).iter().all(|v| *v == 0.0));
        // Large n·c stays finite.
        let k0 = Alpinist::new(1.0, 0).unwrap();
        let d = k0.phi(200, 0.999, 2);
        assert!(d.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn phi_derivatives_match_central_differences() {
        let a = Alpinist::new(2.0, 2).unwrap();
        for n in [1, 7, 30] {
            for t in [0.2, 0.5, 0.85] {
                let h = 1e-6;
                let d = a.phi(n, t, 2);
                let fd = (a.phi(n, t + h, 0)[0] - a.phi(n, t - h, 0)[0]) / (2.0 * h);
                assert!((d[1] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "n={n} t={t}");
            }
        }
    }

    #[test]
    fn k0_bound() {
        assert_eq!(k0_supremum(1.0), 1.0);
        let a = Alpinist::new(1.0, 0).unwrap();
        let rep = a.g_bound(60, 400);
        assert!(rep.overall_sup <= k0_supremum(1.0) + 1e-12);
    }

    #[test]
    fn naive_values() {
        assert!(naive_counterexample(54).is_err());
        let v = naive_counterexample(10_000).unwrap();
        let lower = (10_000f64).ln().powi(2) / std::f64::consts::E;
        assert!(v >= lower);
        assert!((v - (2.0 + (10_000f64).ln().powi(2)) / std::f64::consts::E).abs() < 1e-9);
        let d = naive_phi(0.75 - 1e-9, 3);
        assert!((d[0] - 1.0).abs() < 1e-9 && d[1..].iter().all(|x| x.abs() < 1e-6));
    }
}
