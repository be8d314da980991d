//! Randomized identity suites for the conformal transformation laws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::GeometryError;
use crate::expr::{Expr, Scope};
use crate::geometry::curvature::{covariant_derivative_at, riemann, RiemannTensor};
use crate::geometry::{
    conformal_riemann_closed_form, conformal_sff_closed_form, inner_and_norm,
    second_fundamental_form, ExprFactor, FoliationSpec, MetricField,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteConfig {
    pub metrics_2d: usize,
    pub metrics_3d: usize,
    pub points: usize,
    pub seed: u64,
    pub identity_tol: f64,
    pub scaling_tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> SuiteConfig {
        SuiteConfig {
            metrics_2d: 50,
            metrics_3d: 20,
            points: 50,
            seed: 7,
            identity_tol: 1e-7,
            scaling_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    Riemann,
    SecondFundamentalForm,
    ScalingOrder0,
    ScalingOrder1,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityFailure {
    pub identity: Identity,
    pub dim: usize,
    pub metric: usize,
    pub point: Vec<f64>,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub samples: usize,
    pub max_riemann_error: f64,
    pub max_sff_error: f64,
    pub max_scaling_error: [f64; 2],
    pub failures: Vec<IdentityFailure>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn coordinate_names(n: usize) -> Vec<String> {
    ["x", "y", "z", "w"]
        .iter()
        .take(n)
        .map(|s| s.to_string())
        .collect()
}

fn linear_form(rng: &mut ChaCha8Rng, n: usize) -> Expr {
    let mut e = Expr::constant(rng.gen_range(-1.0..1.0));
    for a in 0..n {
        e = e.add(&Expr::var(a).scale(rng.gen_range(-1.5..1.5)));
    }
    e
}

/// A smooth metric on `[-1, 1]^n`, positive definite by diagonal dominance.
pub fn random_metric(n: usize, rng: &mut ChaCha8Rng) -> Result<MetricField, GeometryError> {
    let scope = Scope::new(coordinate_names(n));
    let mut comps = vec![Expr::zero(); n * n];
    for i in 0..n {
        let wobble = linear_form(rng, n).sin().scale(0.5);
        let bowl = Expr::var(i)
            .mul(&Expr::var(i))
            .scale(rng.gen_range(0.0..0.25));
        comps[i * n + i] = Expr::constant(2.0).add(&wobble).add(&bowl);
        for j in (i + 1)..n {
            let off = linear_form(rng, n).cos().scale(rng.gen_range(-0.2..0.2));
            comps[i * n + j] = off.clone();
            comps[j * n + i] = off;
        }
    }
    MetricField::new(scope, comps, vec![1; n], vec![(-1.0, 1.0); n])
}

/// A polynomial of degree at most 3 with small coefficients.
pub fn random_factor(n: usize, rng: &mut ChaCha8Rng) -> Expr {
    let mut u = Expr::constant(rng.gen_range(-0.3..0.3));
    let mut monomials: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..3 {
        let mut next = Vec::new();
        for m in &monomials {
            let start = m.last().copied().unwrap_or(0);
            for a in start..n {
                let mut m2 = m.clone();
                m2.push(a);
                next.push(m2);
            }
        }
        for m in &next {
            let term = m
                .iter()
                .fold(Expr::constant(rng.gen_range(-0.3..0.3)), |acc, &a| {
                    acc.mul(&Expr::var(a))
                });
            u = u.add(&term);
        }
        monomials = next;
    }
    u
}

/// `random_factor` in coordinates rescaled so that the chart box becomes `[-1, 1]^n`.
pub fn random_factor_on(g: &MetricField, rng: &mut ChaCha8Rng) -> Expr {
    let u = random_factor(g.dim(), rng);
    let subs: Vec<Expr> = g
        .domain()
        .iter()
        .enumerate()
        .map(|(a, (lo, hi))| {
            let (c, w) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
            Expr::var(a).add(&Expr::constant(-c)).scale(1.0 / w)
        })
        .collect();
    u.substitute(&subs)
}

/// The identity suite for one fixed metric with `factors` random factors.
pub fn metric_identity_suite(
    g: &MetricField,
    factors: usize,
    config: &SuiteConfig,
) -> Result<SuiteReport, GeometryError> {
    use rayon::prelude::*;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cases: Vec<(Expr, Vec<Vec<f64>>)> = (0..factors)
        .map(|_| {
            let u = random_factor_on(g, &mut rng);
            let pts = (0..config.points)
                .map(|_| g.random_interior_point(&mut rng))
                .collect();
            (u, pts)
        })
        .collect();
    let results: Vec<Result<CaseResult, GeometryError>> = cases
        .par_iter()
        .enumerate()
        .map(|(m, (u, pts))| run_case(g.dim(), m, g, u, pts, config))
        .collect();
    collect(config, results)
}

/// Closed forms against direct recomputation on the rescaled metric, and the norm scaling law.
pub fn conformal_identity_suite(config: &SuiteConfig) -> Result<SuiteReport, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::new();
    for (dim, count) in [(2usize, config.metrics_2d), (3, config.metrics_3d)] {
        for m in 0..count {
            let g = random_metric(dim, &mut rng)?;
            let u = random_factor(dim, &mut rng);
            let points: Vec<Vec<f64>> = (0..config.points)
                .map(|_| g.random_interior_point(&mut rng))
                .collect();
            cases.push((dim, m, g, u, points));
        }
    }
    use rayon::prelude::*;
    let results: Vec<Result<CaseResult, GeometryError>> = cases
        .par_iter()
        .map(|(dim, m, g, u, pts)| run_case(*dim, *m, g, u, pts, config))
        .collect();
    collect(config, results)
}

fn collect(
    config: &SuiteConfig,
    results: Vec<Result<CaseResult, GeometryError>>,
) -> Result<SuiteReport, GeometryError> {
    let mut report = SuiteReport {
        config: *config,
        samples: 0,
        max_riemann_error: 0.0,
        max_sff_error: 0.0,
        max_scaling_error: [0.0; 2],
        failures: Vec::new(),
    };
    for r in results {
        let r = r?;
        report.samples += r.samples;
        report.max_riemann_error = report.max_riemann_error.max(r.riemann);
        report.max_sff_error = report.max_sff_error.max(r.sff);
        report.max_scaling_error[0] = report.max_scaling_error[0].max(r.scaling[0]);
        report.max_scaling_error[1] = report.max_scaling_error[1].max(r.scaling[1]);
        report.failures.extend(r.failures);
    }
    Ok(report)
}

struct CaseResult {
    samples: usize,
    riemann: f64,
    sff: f64,
    scaling: [f64; 2],
    failures: Vec<IdentityFailure>,
}

fn run_case(
    dim: usize,
    m: usize,
    g: &MetricField,
    u: &Expr,
    pts: &[Vec<f64>],
    config: &SuiteConfig,
) -> Result<CaseResult, GeometryError> {
    let factor = ExprFactor::new(u.clone(), dim);
    let gu = g.conformal_rescale(u);
    let mut out = CaseResult {
        samples: 0,
        riemann: 0.0,
        sff: 0.0,
        scaling: [0.0; 2],
        failures: Vec::new(),
    };
    let record = |out: &mut CaseResult, id: Identity, x: &[f64], err: f64, tol: f64| {
        if !(err <= tol) {
            out.failures.push(IdentityFailure {
                identity: id,
                dim,
                metric: m,
                point: x.to_vec(),
                error: err,
            });
        }
    };
    for x in pts {
        out.samples += 1;
        let closed = conformal_riemann_closed_form(g, &factor, x)?;
        let direct = riemann(&gu, x)?;
        let e = closed.relative_difference(&direct);
        out.riemann = out.riemann.max(e);
        record(&mut out, Identity::Riemann, x, e, config.identity_tol);
        for p in 1..dim {
            let f = FoliationSpec { leaf_dim: p };
            let closed = conformal_sff_closed_form(g, f, &factor, x)?;
            let direct = second_fundamental_form(&gu, f, x)?;
            let e = closed.relative_difference(&direct);
            out.sff = out.sff.max(e);
            record(
                &mut out,
                Identity::SecondFundamentalForm,
                x,
                e,
                config.identity_tol,
            );
        }
        let uval = u.eval(x)?;
        let h = g.metric_matrix(x)?;
        let hu = &h * (2.0 * uval).exp();
        for k in 0..2 {
            let jet = gu.jet(x, k + 2)?;
            let t = covariant_derivative_at(&jet, &RiemannTensor, k)?;
            let lhs = inner_and_norm(&t, &hu)?.1;
            let rhs = (-((k + 4) as f64) * uval).exp() * inner_and_norm(&t, &h)?.1;
            let e = if rhs == 0.0 {
                lhs.abs()
            } else {
                (lhs - rhs).abs() / rhs.abs()
            };
            out.scaling[k] = out.scaling[k].max(e);
            let id = if k == 0 {
                Identity::ScalingOrder0
            } else {
                Identity::ScalingOrder1
            };
            record(&mut out, id, x, e, config.scaling_tol);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let cfg = SuiteConfig {
            metrics_2d: 2,
            metrics_3d: 1,
            points: 3,
            ..SuiteConfig::default()
        };
        let r = conformal_identity_suite(&cfg).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
        assert_eq!(r.samples, 9);
    }

    #[test]
    fn hyperbolic_suite_passes() {
        let g = MetricField::parse(
            &["x", "y"],
            &[&["1/y^2", "0"], &["0", "1/y^2"]],
            vec![1, 1],
            vec![(-5.0, 5.0), (0.1, 10.0)],
        )
        .unwrap();
        let cfg = SuiteConfig {
            points: 5,
            ..SuiteConfig::default()
        };
        let r = metric_identity_suite(&g, 3, &cfg).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }

    #[test]
    fn random_metrics_are_positive_definite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [2, 3] {
            let g = random_metric(n, &mut rng).unwrap();
            g.validate(20, 3).unwrap();
        }
    }
}
