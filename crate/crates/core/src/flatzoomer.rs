//! Functionals on conformal factors and their polynomial–exponential certificates.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::GeometryError;
use crate::expr::{Expr, Scope};
use crate::geometry::curvature::{covariant_derivative_at, RiemannTensor};
use crate::geometry::foliation::SecondFundamentalForm;
use crate::geometry::tensor::inner_and_norm;
use crate::geometry::{ConformalFactor, MetricField};
use crate::jet::JetSpace;

/// Highest covariant derivative order accepted by the geometric functionals.
pub const MAX_FUNCTIONAL_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Combine {
    Sum,
    Sqrt,
    Scale(f64),
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    Zero,
    Curvature,
    LeafCurvature,
    Sff,
    InvConvRadius,
    Combination,
}

/// A map `u ↦ Φ(u)` evaluated pointwise at chart points.
#[derive(Clone)]
pub enum Functional {
    Zero,
    /// `|∇^i_{g[u]} Riem_{g[u]}|_{h[u]}`.
    Curvature {
        g0: Arc<MetricField>,
        h0: Arc<MetricField>,
        order: usize,
    },
    /// Same on the leaves spanned by the first `leaf_dim` coordinates.
    LeafCurvature {
        g0: Arc<MetricField>,
        h0: Arc<MetricField>,
        leaf_dim: usize,
        order: usize,
    },
    /// `|∇^i_{g[u]} II_{g[u]}|_{h[u]}`.
    Sff {
        g0: Arc<MetricField>,
        h0: Arc<MetricField>,
        leaf_dim: usize,
        order: usize,
    },
    /// `(2/π)|Riem_{g[u]}|^{1/2} + e^{−u}H(1 + |du|_g) + 4e^{−u}e^{u₁}`, an upper bound for `1/conv`.
    InvConvRadius {
        g0: Arc<MetricField>,
        ingredients: Arc<RadiusIngredients>,
    },
    Combination {
        op: Combine,
        parts: Vec<Functional>,
    },
}

impl std::fmt::Debug for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Functional({:?}, order {:?})", self.kind(), self.order())
    }
}

fn check_order(order: usize) -> Result<(), GeometryError> {
    if order > MAX_FUNCTIONAL_ORDER {
        return Err(GeometryError::OrderCap {
            requested: order,
            cap: MAX_FUNCTIONAL_ORDER,
        });
    }
    Ok(())
}

fn check_pair(g0: &MetricField, h0: &MetricField) -> Result<(), GeometryError> {
    if g0.dim() != h0.dim() {
        return Err(GeometryError::Invalid(format!(
            "metric dimensions differ: {} vs {}",
            g0.dim(),
            h0.dim()
        )));
    }
    if !h0.is_riemannian() {
        return Err(GeometryError::Invalid(
            "norm metric must be Riemannian".into(),
        ));
    }
    Ok(())
}

pub fn make_curvature_functional(
    g0: MetricField,
    h0: MetricField,
    order: usize,
) -> Result<Functional, GeometryError> {
    check_order(order)?;
    check_pair(&g0, &h0)?;
    Ok(Functional::Curvature {
        g0: Arc::new(g0),
        h0: Arc::new(h0),
        order,
    })
}

pub fn make_leaf_functional(
    g0: MetricField,
    h0: MetricField,
    leaf_dim: usize,
    order: usize,
) -> Result<Functional, GeometryError> {
    check_order(order)?;
    check_pair(&g0, &h0)?;
    if leaf_dim == 0 || leaf_dim > g0.dim() {
        return Err(GeometryError::Foliation(leaf_dim));
    }
    Ok(Functional::LeafCurvature {
        g0: Arc::new(g0),
        h0: Arc::new(h0),
        leaf_dim,
        order,
    })
}

pub fn make_sff_functional(
    g0: MetricField,
    h0: MetricField,
    leaf_dim: usize,
    order: usize,
) -> Result<Functional, GeometryError> {
    check_order(order)?;
    check_pair(&g0, &h0)?;
    if leaf_dim == 0 || leaf_dim > g0.dim() {
        return Err(GeometryError::Foliation(leaf_dim));
    }
    Ok(Functional::Sff {
        g0: Arc::new(g0),
        h0: Arc::new(h0),
        leaf_dim,
        order,
    })
}

pub fn combine(op: Combine, parts: Vec<Functional>) -> Functional {
    Functional::Combination { op, parts }
}

fn tensor_norm_with(
    t: &crate::geometry::TensorSample,
    h: &DMatrix<f64>,
) -> Result<f64, GeometryError> {
    Ok(inner_and_norm(t, h)?.1)
}

impl Functional {
    pub fn kind(&self) -> FunctionalKind {
        match self {
            Functional::Zero => FunctionalKind::Zero,
            Functional::Curvature { .. } => FunctionalKind::Curvature,
            Functional::LeafCurvature { .. } => FunctionalKind::LeafCurvature,
            Functional::Sff { .. } => FunctionalKind::Sff,
            Functional::InvConvRadius { .. } => FunctionalKind::InvConvRadius,
            Functional::Combination { .. } => FunctionalKind::Combination,
        }
    }

    /// Covariant derivative order, where meaningful.
    pub fn order(&self) -> Option<usize> {
        match self {
            Functional::Curvature { order, .. }
            | Functional::LeafCurvature { order, .. }
            | Functional::Sff { order, .. } => Some(*order),
            _ => None,
        }
    }

    /// Jet order of `u` consumed by one evaluation.
    pub fn factor_order(&self) -> usize {
        match self {
            Functional::Zero => 0,
            Functional::Curvature { order, .. } | Functional::LeafCurvature { order, .. } => {
                order + 2
            }
            Functional::Sff { order, .. } => order + 1,
            Functional::InvConvRadius { .. } => 2,
            Functional::Combination { parts, .. } => parts
                .iter()
                .map(Functional::factor_order)
                .max()
                .unwrap_or(0),
        }
    }

    /// `Φ(u)(x)`.
    pub fn eval(&self, u: &dyn ConformalFactor, x: &[f64]) -> Result<f64, GeometryError> {
        match self {
            Functional::Zero => Ok(0.0),
            Functional::Curvature { g0, h0, order } => {
                let gj = g0.jet(x, order + 2)?;
                let uj = u.jet(gj.space(), x, order + 2)?;
                let gu = gj.conformal(&uj);
                let t = covariant_derivative_at(&gu, &RiemannTensor, *order)?;
                let h = h0.metric_matrix(x)? * (2.0 * uj.value()).exp();
                tensor_norm_with(&t, &h)
            }
            Functional::LeafCurvature {
                g0,
                h0,
                leaf_dim,
                order,
            } => {
                let p = *leaf_dim;
                let gj = g0.jet(x, order + 2)?;
                let uj = u.jet(gj.space(), x, order + 2)?;
                let leaf = gj.conformal(&uj).restrict(p);
                let full = leaf.value_matrix();
                if crate::geometry::metric::signature_of(&full).is_none() {
                    return Err(GeometryError::LeafDegenerate(x.to_vec()));
                }
                if p == 1 {
                    return Ok(0.0);
                }
                let t = covariant_derivative_at(&leaf, &RiemannTensor, *order)?;
                let h = h0.metric_matrix(x)?.view((0, 0), (p, p)).into_owned()
                    * (2.0 * uj.value()).exp();
                tensor_norm_with(&t, &h)
            }
            Functional::Sff {
                g0,
                h0,
                leaf_dim,
                order,
            } => {
                let gj = g0.jet(x, order + 1)?;
                let uj = u.jet(gj.space(), x, order + 1)?;
                let gu = gj.conformal(&uj);
                let t = covariant_derivative_at(
                    &gu,
                    &SecondFundamentalForm {
                        leaf_dim: *leaf_dim,
                    },
                    *order,
                )?;
                let h = h0.metric_matrix(x)? * (2.0 * uj.value()).exp();
                tensor_norm_with(&t, &h)
            }
            Functional::InvConvRadius { g0, ingredients } => {
                let n = g0.dim();
                let gj = g0.jet(x, 2)?;
                let uj = u.jet(gj.space(), x, 2)?;
                let gu = gj.conformal(&uj);
                let riem = covariant_derivative_at(&gu, &RiemannTensor, 0)?;
                let gm = gj.value_matrix();
                let curv = tensor_norm_with(&riem, &(gm.clone() * (2.0 * uj.value()).exp()))?;
                let ginv = gm
                    .try_inverse()
                    .ok_or_else(|| GeometryError::Singular(x.to_vec()))?;
                let du: Vec<f64> = (0..n).map(|a| uj.gradient(a)).collect();
                let mut du2 = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        du2 += ginv[(a, b)] * du[a] * du[b];
                    }
                }
                let e = (-uj.value()).exp();
                let h = ingredients.h_at(x);
                let u1 = ingredients.u1_at(x);
                Ok(2.0 / std::f64::consts::PI * curv.sqrt()
                    + e * h * (1.0 + du2.abs().sqrt())
                    + 4.0 * e * u1.exp())
            }
            Functional::Combination { op, parts } => {
                let vals = parts
                    .iter()
                    .map(|p| p.eval(u, x))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(match op {
                    Combine::Sum => vals.iter().sum(),
                    Combine::Max => vals.iter().fold(0.0, |a, v| a.max(*v)),
                    Combine::Sqrt => vals.iter().sum::<f64>().sqrt(),
                    Combine::Scale(s) => s.abs() * vals.iter().sum::<f64>(),
                })
            }
        }
    }
}

/// One monomial of a certificate polynomial with a point-dependent coefficient.
#[derive(Debug, Clone)]
pub struct CertificateTerm {
    pub powers: Vec<u32>,
    pub coeff: Expr,
}

/// `Φ(u)(x) ≤ e^{−αu(x)} P(x)(u(x), |∇¹u|_η, …, |∇^k u|_η)` for `u(x) > u₀(x)`, η Euclidean.
#[derive(Debug, Clone)]
pub struct FlatzoomerBound {
    pub k: usize,
    pub d: u32,
    pub alpha: f64,
    pub floor: Expr,
    pub terms: Vec<CertificateTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub member: usize,
    pub point: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub checked: usize,
    pub skipped_below_floor: usize,
    pub max_ratio: f64,
    pub violations: Vec<Violation>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl FlatzoomerBound {
    pub fn new(
        k: usize,
        d: u32,
        alpha: f64,
        floor: Expr,
        terms: Vec<CertificateTerm>,
    ) -> Result<FlatzoomerBound, GeometryError> {
        if !(alpha > 0.0) {
            return Err(GeometryError::Invalid(format!(
                "certificate exponent must be positive, got {alpha}"
            )));
        }
        for t in &terms {
            if t.powers.len() != k + 1 {
                return Err(GeometryError::Invalid(format!(
                    "monomial has {} powers, expected {}",
                    t.powers.len(),
                    k + 1
                )));
            }
            if t.powers.iter().sum::<u32>() > d {
                return Err(GeometryError::Invalid(format!(
                    "monomial degree exceeds d = {d}"
                )));
            }
        }
        Ok(FlatzoomerBound {
            k,
            d,
            alpha,
            floor,
            terms,
        })
    }

    /// `c·(1 + Σ_j s_j)^d` expanded into monomials.
    pub fn uniform(k: usize, d: u32, alpha: f64, c: Expr, floor: Expr) -> FlatzoomerBound {
        let mut terms: Vec<CertificateTerm> = Vec::new();
        // Multinomial expansion over (1, s_0, …, s_k).
        fn rec(slots: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if cur.len() == slots {
                out.push(cur.clone());
                return;
            }
            for p in 0..=left {
                cur.push(p);
                rec(slots, left - p, cur, out);
                cur.pop();
            }
        }
        let mut powers = Vec::new();
        rec(k + 1, d, &mut Vec::new(), &mut powers);
        for pw in powers {
            let deg: u32 = pw.iter().sum();
            let mut coef =
                crate::jet::factorial(d as usize) / crate::jet::factorial((d - deg) as usize);
            for p in &pw {
                coef /= crate::jet::factorial(*p as usize);
            }
            terms.push(CertificateTerm {
                powers: pw,
                coeff: c.scale(coef),
            });
        }
        FlatzoomerBound {
            k,
            d,
            alpha,
            floor,
            terms,
        }
    }

    /// `P(x)(s)`.
    pub fn polynomial(&self, x: &[f64], s: &[f64]) -> Result<f64, GeometryError> {
        let mut acc = 0.0;
        for t in &self.terms {
            let mut m = t.coeff.eval(x)?;
            for (p, v) in t.powers.iter().zip(s) {
                m *= v.powi(*p as i32);
            }
            acc += m;
        }
        Ok(acc)
    }

    /// `θ(x) = max |coefficient|`, so that `P(x)(s) ≤ θ(x)(1 + Σ|s_j|)^d`.
    pub fn theta(&self, x: &[f64]) -> Result<f64, GeometryError> {
        let mut m = 0.0f64;
        for t in &self.terms {
            m = m.max(t.coeff.eval(x)?.abs());
        }
        Ok(m)
    }

    /// `(u(x), |∇¹u|, …, |∇^k u|)`.
    pub fn arguments(&self, u: &dyn ConformalFactor, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let mut s = u.eta_norms(x, self.k)?;
        let space = JetSpace::get(x.len(), crate::geometry::MAX_METRIC_ORDER);
        s[0] = u.jet(&space, x, 0)?.value();
        Ok(s)
    }

    /// Right-hand side `e^{−αu}P(…)`.
    pub fn rhs(&self, u: &dyn ConformalFactor, x: &[f64]) -> Result<f64, GeometryError> {
        let s = self.arguments(u, x)?;
        Ok((-self.alpha * s[0]).exp() * self.polynomial(x, &s)?)
    }

    /// `e^{−αu}θ(1 + Σ|s_j|)^d`, the normalized integrand.
    pub fn envelope(&self, u: &dyn ConformalFactor, x: &[f64]) -> Result<f64, GeometryError> {
        let s = self.arguments(u, x)?;
        let sum: f64 = 1.0 + s.iter().map(|v| v.abs()).sum::<f64>();
        Ok((-self.alpha * s[0]).exp() * self.theta(x)? * sum.powi(self.d as i32))
    }

    pub fn above_floor(&self, u: &dyn ConformalFactor, x: &[f64]) -> Result<bool, GeometryError> {
        let space = JetSpace::get(x.len(), crate::geometry::MAX_METRIC_ORDER);
        Ok(u.jet(&space, x, 0)?.value() > self.floor.eval(x)?)
    }
}

/// Checks `Φ(u)(x) ≤ e^{−αu}P(x)(…)` for every family member and point above the floor.
pub fn verify_flatzoomer_bound(
    phi: &Functional,
    bound: &FlatzoomerBound,
    family: &[&dyn ConformalFactor],
    points: &[Vec<f64>],
) -> Result<BoundReport, GeometryError> {
    let rows: Vec<Result<Option<(usize, Vec<f64>, f64, f64)>, GeometryError>> = family
        .iter()
        .enumerate()
        .flat_map(|(m, u)| points.iter().map(move |x| (m, *u, x)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(m, u, x)| {
            if !bound.above_floor(u, x)? {
                return Ok(None);
            }
            Ok(Some((m, x.clone(), phi.eval(u, x)?, bound.rhs(u, x)?)))
        })
        .collect();
    let mut report = BoundReport {
        checked: 0,
        skipped_below_floor: 0,
        max_ratio: 0.0,
        violations: Vec::new(),
    };
    for row in rows {
        match row? {
            None => report.skipped_below_floor += 1,
            Some((member, point, value, rhs)) => {
                report.checked += 1;
                if rhs > 0.0 {
                    report.max_ratio = report.max_ratio.max(value / rhs);
                } else if value > 0.0 {
                    report.max_ratio = f64::INFINITY;
                }
                if !(value <= rhs) {
                    report.violations.push(Violation {
                        member,
                        point,
                        value,
                        bound: rhs,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Largest `Φ(u)(x) / (e^{−αu}(1+Σ|s_j|)^d)` over the family; the uniform certificate constant before headroom.
pub fn calibration_ratio(
    phi: &Functional,
    k: usize,
    d: u32,
    alpha: f64,
    family: &[&dyn ConformalFactor],
    points: &[Vec<f64>],
) -> Result<f64, GeometryError> {
    let unit =
        FlatzoomerBound::uniform(k, d, alpha, Expr::one(), Expr::constant(f64::NEG_INFINITY));
    let vals: Vec<Result<f64, GeometryError>> = family
        .iter()
        .flat_map(|u| points.iter().map(move |x| (*u, x)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(u, x)| Ok(phi.eval(u, x)? / unit.envelope(u, x)?))
        .collect();
    let mut m = 0.0f64;
    for v in vals {
        m = m.max(v?);
    }
    Ok(m)
}

/// Ray exhaustion `K_i = [0, r_i]`, with `K_{−1} = K_{−2} = ∅`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExhaustionModel {
    pub radii: Vec<f64>,
}

impl ExhaustionModel {
    /// `r_i = i + 1` for `i = 0..count`.
    pub fn unit(count: usize) -> ExhaustionModel {
        ExhaustionModel {
            radii: (0..count).map(|i| (i + 1) as f64).collect(),
        }
    }

    pub fn new(radii: Vec<f64>) -> Result<ExhaustionModel, GeometryError> {
        if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(GeometryError::Invalid(
                "exhaustion radii must be positive and strictly increasing".into(),
            ));
        }
        Ok(ExhaustionModel { radii })
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// `r_i`, with `r_{−1} = 0`.
    pub fn radius(&self, i: isize) -> f64 {
        if i < 0 {
            0.0
        } else {
            self.radii[i as usize]
        }
    }

    /// `K_i ∖ K_{i−1}` as `(lo, hi)`; block 0 is `[0, r_0]`.
    pub fn block(&self, i: usize) -> (f64, f64) {
        (self.radius(i as isize - 1), self.radii[i])
    }

    /// `K_{i+1} ∖ K_{i−2}`, clipped to the materialized blocks.
    pub fn neighbourhood(&self, i: usize) -> (f64, f64) {
        let hi = self.radii[(i + 1).min(self.radii.len() - 1)];
        (self.radius(i as isize - 2), hi)
    }

    /// Block index of radius `r` (the last block for `r` beyond the horizon).
    pub fn block_of(&self, r: f64) -> usize {
        self.radii
            .iter()
            .position(|&ri| r <= ri)
            .unwrap_or(self.radii.len() - 1)
    }
}

/// `m` equally spaced samples of `[lo, hi]`, endpoints included.
pub fn grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m <= 1 {
        return vec![lo];
    }
    (0..m)
        .map(|j| lo + (hi - lo) * j as f64 / (m - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasiSup {
    pub block: usize,
    /// Sup of the certificate envelope over `K_{i+1} ∖ K_{i−2}`.
    pub envelope_sup: f64,
    /// Sup of `Φ(u)` over `K_i ∖ K_{i−1}`.
    pub functional_sup: f64,
}

/// Block sups along the ray `x = r·direction`.
pub fn quasi_sup(
    phi: &Functional,
    bound: &FlatzoomerBound,
    exhaustion: &ExhaustionModel,
    block: usize,
    u: &dyn ConformalFactor,
    direction: &[f64],
    samples: usize,
) -> Result<QuasiSup, GeometryError> {
    let at = |r: f64| direction.iter().map(|d| d * r).collect::<Vec<f64>>();
    let (nlo, nhi) = exhaustion.neighbourhood(block);
    let (blo, bhi) = exhaustion.block(block);
    let env: Vec<Result<f64, GeometryError>> = grid(nlo, nhi, samples)
        .into_par_iter()
        .map(|r| bound.envelope(u, &at(r)))
        .collect();
    let val: Vec<Result<f64, GeometryError>> = grid(blo, bhi, samples)
        .into_par_iter()
        .map(|r| phi.eval(u, &at(r)))
        .collect();
    let fold = |v: Vec<Result<f64, GeometryError>>| -> Result<f64, GeometryError> {
        let mut m = f64::NEG_INFINITY;
        for x in v {
            m = m.max(x?);
        }
        Ok(m)
    };
    Ok(QuasiSup {
        block,
        envelope_sup: fold(env)?,
        functional_sup: fold(val)?,
    })
}

/// Per-chart constants for the inverse convexity radius bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartIngredients {
    /// Parameter box `[lo_a, hi_a]` per coordinate.
    pub bounds: Vec<(f64, f64)>,
    /// Sampled sup of `max|Γ[u]| / (1 + |du|_g)` over the probe family.
    pub a: f64,
    /// Bi-Lipschitz constant between `g` and the chart-Euclidean metric.
    pub c: f64,
    /// `4n²AC³`.
    pub h: f64,
}

impl ChartIngredients {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds
            .iter()
            .zip(x)
            .all(|((lo, hi), v)| *lo <= *v && *v <= *hi)
    }

    fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        self.bounds
            .iter()
            .zip(x)
            .map(|((lo, hi), v)| (v - lo).min(hi - v))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusIngredients {
    pub charts: Vec<ChartIngredients>,
    pub exhaustion: ExhaustionModel,
    /// Per-block values of the radius profile `u₁`.
    pub u1_blocks: Vec<f64>,
    pub probe_family: Vec<String>,
}

impl RadiusIngredients {
    /// `H(x) = max H_j` over charts containing `x`.
    pub fn h_at(&self, x: &[f64]) -> f64 {
        self.charts
            .iter()
            .filter(|c| c.contains(x))
            .fold(0.0, |a, c| a.max(c.h))
    }

    /// `u₁(x)`: the largest per-block value among the blocks adjacent to the block of `|x|`.
    pub fn u1_at(&self, x: &[f64]) -> f64 {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let i = self.exhaustion.block_of(r);
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(self.u1_blocks.len() - 1);
        self.u1_blocks[lo..=hi]
            .iter()
            .fold(f64::NEG_INFINITY, |a, v| a.max(*v))
    }
}

/// `(A, C)` for one chart box: the sampled Christoffel envelope over `probes` and the bi-Lipschitz constant.
pub fn chart_constants(
    g: &MetricField,
    bounds: &[(f64, f64)],
    probes: &[Expr],
    per_axis: usize,
) -> Result<(f64, f64), GeometryError> {
    let n = g.dim();
    let pts = chart_samples(bounds, per_axis);
    let per_point: Vec<Result<(f64, f64), GeometryError>> = pts
        .par_iter()
        .map(|x| {
            let gm = g.metric_matrix(x)?;
            let eig = nalgebra::SymmetricEigen::new(gm.clone());
            let lmax = eig
                .eigenvalues
                .iter()
                .fold(f64::NEG_INFINITY, |a, v| a.max(*v));
            let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
            let c = lmax.sqrt().max(1.0 / lmin.sqrt());
            let ginv = gm
                .clone()
                .try_inverse()
                .ok_or_else(|| GeometryError::Singular(x.clone()))?;
            let gamma = crate::geometry::christoffels(g, x)?;
            let mut a_best = 0.0f64;
            for u in probes {
                let du: Vec<f64> = (0..n)
                    .map(|v| u.differentiate(v).eval(x))
                    .collect::<Result<_, _>>()?;
                let mut norm2 = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        norm2 += ginv[(p, q)] * du[p] * du[q];
                    }
                }
                let grad: Vec<f64> = (0..n)
                    .map(|cc| (0..n).map(|m| ginv[(cc, m)] * du[m]).sum())
                    .collect();
                let mut gmax = 0.0f64;
                for cc in 0..n {
                    for aa in 0..n {
                        for bb in 0..n {
                            let delta = |p: usize, q: usize| if p == q { 1.0 } else { 0.0 };
                            let v = gamma[cc * n * n + aa * n + bb]
                                + du[aa] * delta(cc, bb)
                                + du[bb] * delta(cc, aa)
                                - gm[(aa, bb)] * grad[cc];
                            gmax = gmax.max(v.abs());
                        }
                    }
                }
                a_best = a_best.max(gmax / (1.0 + norm2.sqrt()));
            }
            Ok((a_best, c))
        })
        .collect();
    let mut a = 0.0f64;
    let mut c = 1.0f64;
    for v in per_point {
        let (pa, pc) = v?;
        a = a.max(pa);
        c = c.max(pc);
    }
    Ok((a, c))
}

fn chart_samples(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for (lo, hi) in bounds {
        let axis = grid(*lo, *hi, per_axis);
        out = out
            .into_iter()
            .flat_map(|p| axis.iter().map(move |v| [p.clone(), vec![*v]].concat()))
            .collect();
    }
    out
}

/// Chart constants `A_j, C_j, H_j` and the block profile `u₁` for a radial exhaustion.
///
/// The probe family for `A_j` is `u = s·(x_a)` for each coordinate and `s ∈ {−4, …, 4}`.
pub fn radius_functional_ingredients(
    g: &MetricField,
    cover: &[Vec<(f64, f64)>],
    exhaustion: &ExhaustionModel,
    per_axis: usize,
) -> Result<RadiusIngredients, GeometryError> {
    let n = g.dim();
    let mut charts = Vec::with_capacity(cover.len());
    let scope = g.scope();
    let mut probes: Vec<Expr> = vec![Expr::zero()];
    let mut probe_names = vec!["0".to_string()];
    for a in 0..n {
        for s in [-4.0, -1.0, 1.0, 4.0] {
            probes.push(Expr::var(a).scale(s));
            probe_names.push(format!("{s}*{}", scope.names()[a]));
        }
    }
    for bounds in cover {
        if bounds.len() != n {
            return Err(GeometryError::Invalid(
                "cover box dimension does not match the metric".into(),
            ));
        }
        for ((lo, hi), (dlo, dhi)) in bounds.iter().zip(g.domain()) {
            if !(lo < hi) || *lo < *dlo || *hi > *dhi {
                return Err(GeometryError::Invalid(format!(
                    "chart box [{lo}, {hi}] is not compact in the domain"
                )));
            }
        }
        let (a, c) = chart_constants(g, bounds, &probes, per_axis)?;
        let h = 4.0 * (n * n) as f64 * a * c.powi(3);
        charts.push(ChartIngredients {
            bounds: bounds.clone(),
            a,
            c,
            h,
        });
    }
    // u₁ per block: unit g[u₁]-balls stay inside one chart and the block neighbourhood.
    let mut u1_blocks = Vec::with_capacity(exhaustion.len());
    let dir: Vec<f64> = (0..n).map(|v| if v == 0 { 1.0 } else { 0.0 }).collect();
    for i in 0..exhaustion.len() {
        let (blo, bhi) = exhaustion.block(i);
        let (nlo, mut nhi) = exhaustion.neighbourhood(i);
        if i + 1 >= exhaustion.len() {
            // Past the last radius, assume one more block of the same width.
            nhi = bhi + (bhi - blo);
        }
        let mut need = f64::NEG_INFINITY;
        for r in grid(blo, bhi, per_axis.max(8)) {
            let x: Vec<f64> = dir.iter().map(|d| d * r).collect();
            let radial = if i >= 2 {
                (r - nlo).min(nhi - r)
            } else {
                nhi - r
            };
            let mut best = f64::NEG_INFINITY;
            for ch in charts.iter().filter(|ch| ch.contains(&x)) {
                let dist = ch.distance_to_boundary(&x).min(radial);
                if dist > 0.0 {
                    best = best.max(dist / ch.c);
                }
            }
            if best == f64::NEG_INFINITY {
                return Err(GeometryError::Invalid(format!(
                    "cover does not cover the point {x:?} with room to spare"
                )));
            }
            need = need.max(-best.ln());
        }
        u1_blocks.push(need + 1e-9);
    }
    Ok(RadiusIngredients {
        charts,
        exhaustion: exhaustion.clone(),
        u1_blocks,
        probe_family: probe_names,
    })
}

/// Scope of one ray variable `r`.
pub fn ray_scope() -> Scope {
    Scope::new(["r"])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ExprFactor;

    fn hyperbolic() -> MetricField {
        MetricField::parse(
            &["x", "y"],
            &[&["1/(y*y)", "0"], &["0", "1/(y*y)"]],
            vec![1, 1],
            vec![(-5.0, 5.0), (0.1, 10.0)],
        )
        .unwrap()
    }

    #[test]
    fn hyperbolic_constant_rescale() {
        let g = hyperbolic();
        let phi = make_curvature_functional(g.clone(), g.clone(), 0).unwrap();
        for c in [0.0, 0.7, 2.0] {
            let u = ExprFactor::new(Expr::constant(c), 2);
            let v = phi.eval(&u, &[0.3, 1.4]).unwrap();
            assert!((v - 2.0 * (-2.0 * c).exp()).abs() < 1e-10);
        }
        assert!(make_curvature_functional(g.clone(), g, 3).is_err());
    }

    #[test]
    fn flat_base_vanishes() {
        let g = MetricField::parse(
            &["x", "y"],
            &[&["1", "0"], &["0", "1"]],
            vec![1, 1],
            vec![(-1.0, 1.0); 2],
        )
        .unwrap();
        let phi = make_curvature_functional(g.clone(), g, 1).unwrap();
        let u = ExprFactor::new(Expr::constant(3.0), 2);
        assert_eq!(phi.eval(&u, &[0.1, 0.2]).unwrap(), 0.0);
    }

    #[test]
    fn uniform_certificate_expansion() {
        let b = FlatzoomerBound::uniform(2, 2, 1.0, Expr::constant(3.0), Expr::zero());
        let s = [0.5, 1.5, 2.0];
        let direct = 3.0 * (1.0f64 + 0.5 + 1.5 + 2.0).powi(2);
        assert!((b.polynomial(&[0.0], &s).unwrap() - direct).abs() < 1e-12);
        assert_eq!(b.theta(&[0.0]).unwrap(), 6.0);
    }

    #[test]
    fn exhaustion_blocks() {
        let e = ExhaustionModel::unit(5);
        assert_eq!(e.block(0), (0.0, 1.0));
        assert_eq!(e.neighbourhood(0), (0.0, 2.0));
        assert_eq!(e.neighbourhood(3), (2.0, 5.0));
        assert_eq!(e.block_of(2.5), 2);
        assert!(ExhaustionModel::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn euclidean_chart_constants() {
        let g = MetricField::parse(
            &["x", "y"],
            &[&["1", "0"], &["0", "1"]],
            vec![1, 1],
            vec![(-10.0, 10.0); 2],
        )
        .unwrap();
        let e = ExhaustionModel::unit(3);
        let ing =
            radius_functional_ingredients(&g, &[vec![(-5.0, 5.0), (-5.0, 5.0)]], &e, 5).unwrap();
        assert_eq!(ing.charts[0].c, 1.0);
        // Only the u-dependent part of Γ[u] contributes; with Γ = 0 it is at most 2 per unit |du|.
        assert!(ing.charts[0].a <= 2.0 + 1e-12);
        let hyp = hyperbolic();
        let (_, c) = chart_constants(&hyp, &[(-1.0, 1.0), (1.0, 2.0)], &[Expr::zero()], 9).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
    }
}
