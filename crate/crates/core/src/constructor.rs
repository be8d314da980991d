//! Plateau-and-climb conformal factors on the ray and the block ledger that sizes them.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::alpinist::{Alpinist, AlpinistError, StepSample};
use crate::error::GeometryError;
use crate::expr::{EvalError, Expr};
use crate::flatzoomer::{grid, ExhaustionModel, FlatzoomerBound, Functional};
use crate::geometry::{LineLift, Profile, RadialLift};

pub type RayFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type RayEvaluator = Arc<dyn Fn(&PiecewiseU, f64) -> Result<f64, GeometryError> + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum ConstructError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Alpinist(#[from] AlpinistError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Invalid(String),
    #[error("plateau values must be nondecreasing: b[{index}] = {value} < {previous}")]
    Decreasing {
        index: usize,
        value: f64,
        previous: f64,
    },
    #[error("requested start value {requested} is below the threshold {mu}")]
    BelowThreshold { requested: f64, mu: f64 },
    #[error("no admissible plateau value found for block {0}")]
    SearchExhausted(usize),
    #[error(
        "climb of height {n} on block {block} has G-sup {measured} above the ledger bound {bound}"
    )]
    BoundExceeded {
        block: usize,
        n: u64,
        measured: f64,
        bound: f64,
    },
}

/// `L = max(1, s, …, s^k)·(k+1)` for the affine collar map of slope `s = 1/ℓ`.
pub fn chain_rule_constant(collar_length: f64, k: usize) -> f64 {
    let s = 1.0 / collar_length;
    let m = (0..=k).map(|j| s.powi(j as i32)).fold(1.0f64, f64::max);
    m * (k + 1) as f64
}

/// `1 + Σ_j s^j|f^{(j)}|` versus `L(1 + Σ_j |f^{(j)}|)` for the given derivative values; returns the slack.
pub fn chain_rule_slack(collar_length: f64, derivs: &[f64], l: f64) -> f64 {
    let s = 1.0 / collar_length;
    let lhs: f64 = 1.0
        + derivs
            .iter()
            .enumerate()
            .map(|(j, d)| s.powi(j as i32) * d.abs())
            .sum::<f64>();
    let rhs: f64 = l * (1.0 + derivs.iter().map(|d| d.abs()).sum::<f64>());
    rhs - lhs
}

/// Inputs of one plateau search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauInput {
    pub lambda_next: f64,
    pub alpha_next: f64,
    pub chain_rule: f64,
    pub alpinist_bound: f64,
    /// Largest `ŵ` on the block; `None` when unconstrained.
    pub floor: Option<f64>,
    pub previous: Option<f64>,
    /// Values are searched in `base + ℕ`.
    pub base: f64,
}

impl PlateauInput {
    pub fn growth_holds(&self, beta: f64) -> bool {
        let rhs = self.lambda_next * (self.alpha_next * beta).exp();
        let lhs = (1.0 + beta).max(self.chain_rule * beta + self.alpinist_bound * self.chain_rule);
        lhs <= rhs
    }

    fn admissible(&self, beta: f64) -> bool {
        self.growth_holds(beta)
            && self.floor.is_none_or(|w| w <= beta)
            && self.previous.is_none_or(|p| p <= beta)
    }

    /// Smallest `β ≥ start` in `base + ℕ` from which the growth clause holds for every larger real value.
    pub fn stable_threshold(&self) -> Option<f64> {
        let start = self.search_start();
        for m in 0..MAX_PLATEAU_STEPS {
            let beta = start + m as f64;
            let e = self.lambda_next * (self.alpha_next * beta).exp();
            let de = self.alpha_next * e;
            if self.admissible(beta) && de >= 1.0 && de >= self.chain_rule {
                return Some(beta);
            }
        }
        None
    }

    fn search_start(&self) -> f64 {
        let mut lo = self.base;
        let lower = self
            .floor
            .into_iter()
            .chain(self.previous)
            .fold(f64::NEG_INFINITY, f64::max);
        if lower > lo {
            lo = self.base + (lower - self.base).ceil();
        }
        lo
    }
}

const MAX_PLATEAU_STEPS: usize = 100_000;

/// The smallest admissible plateau value `b_i`.
pub fn build_b_sequence(input: &PlateauInput) -> Option<f64> {
    let start = input.search_start();
    (0..MAX_PLATEAU_STEPS)
        .map(|m| start + m as f64)
        .find(|b| input.admissible(*b))
}

/// Block and collar placement along the ray.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Layout {
    pub exhaustion: ExhaustionModel,
    /// Collar `A_i` is the top `collar_fraction` of block `i`.
    pub collar_fraction: f64,
}

impl Layout {
    /// `K_i = [0, i+1]`, `A_i = [i+½, i+1]`.
    pub fn od(blocks: usize) -> Layout {
        Layout {
            exhaustion: ExhaustionModel::unit(blocks),
            collar_fraction: 0.5,
        }
    }

    pub fn collar(
        exhaustion: ExhaustionModel,
        collar_fraction: f64,
    ) -> Result<Layout, ConstructError> {
        if !(collar_fraction > 0.0 && collar_fraction <= 1.0) {
            return Err(ConstructError::Invalid(format!(
                "collar fraction {collar_fraction} outside (0, 1]"
            )));
        }
        Ok(Layout {
            exhaustion,
            collar_fraction,
        })
    }

    pub fn blocks(&self) -> usize {
        self.exhaustion.len()
    }

    pub fn collar_of(&self, i: usize) -> (f64, f64) {
        let (lo, hi) = self.exhaustion.block(i);
        (hi - self.collar_fraction * (hi - lo), hi)
    }

    pub fn collar_length(&self, i: usize) -> f64 {
        let (a, b) = self.collar_of(i);
        b - a
    }
}

/// `u = b_i` on the plateau of block `i` and `b_i + φ[c_i](ρ_i)` on its collar.
#[derive(Debug, Clone)]
pub struct PiecewiseU {
    layout: Layout,
    plateaus: Vec<f64>,
    climbs: Vec<Alpinist>,
    heights: Vec<u64>,
}

impl PiecewiseU {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn plateaus(&self) -> &[f64] {
        &self.plateaus
    }

    pub fn heights(&self) -> &[u64] {
        &self.heights
    }

    pub fn climbs(&self) -> &[Alpinist] {
        &self.climbs
    }

    /// End of the materialized range.
    pub fn extent(&self) -> f64 {
        self.layout
            .exhaustion
            .radius(self.heights.len() as isize - 1)
    }

    /// `[u(r), u′(r), …]`; constant beyond the last climb.
    pub fn derivatives_at(&self, r: f64, order: usize) -> Vec<f64> {
        let mut out = vec![0.0; order + 1];
        let blocks = self.heights.len();
        if r > self.extent() || blocks == 0 {
            out[0] = *self.plateaus.last().unwrap_or(&0.0);
            return out;
        }
        let i = self.layout.exhaustion.block_of(r.max(0.0)).min(blocks - 1);
        let (cs, ce) = self.layout.collar_of(i);
        out[0] = self.plateaus[i];
        if r <= cs || self.heights[i] == 0 {
            return out;
        }
        let len = ce - cs;
        let t = ((r - cs) / len).min(1.0);
        let phi = self.climbs[i].phi(self.heights[i], t, order);
        let s = 1.0 / len;
        for j in 0..=order {
            out[j] += phi[j] * s.powi(j as i32);
        }
        out
    }

    pub fn value(&self, r: f64) -> f64 {
        self.derivatives_at(r, 0)[0]
    }

    /// Largest jump of `u^{(j)}`, `j ≤ order`, across plateau/collar junctions at offset `1e−9`.
    pub fn junction_residual(&self, order: usize) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.heights.len() {
            let (cs, ce) = self.layout.collar_of(i);
            for p in [cs, ce] {
                let a = self.derivatives_at(p - 1e-9, order);
                let b = self.derivatives_at(p + 1e-9, order);
                for j in 0..=order {
                    worst = worst.max((a[j] - b[j]).abs() - if j == 0 { 1e-9 * 1e-3 } else { 0.0 });
                }
            }
        }
        worst.max(0.0)
    }

    /// The same profile shifted by a constant.
    pub fn shifted(&self, by: f64) -> PiecewiseU {
        let mut out = self.clone();
        for b in &mut out.plateaus {
            *b += by;
        }
        out
    }
}

impl Profile for PiecewiseU {
    fn derivatives(&self, r: f64, order: usize) -> Vec<f64> {
        self.derivatives_at(r, order)
    }
}

/// Builds `u` from plateau values and one climb family per gap.
///
/// `plateaus` has one more entry than `climbs`; gap `i` climbs from `b_i` to `b_{i+1}` on collar `i`.
pub fn assemble_u(
    plateaus: &[f64],
    climbs: Vec<Alpinist>,
    layout: Layout,
) -> Result<PiecewiseU, ConstructError> {
    if plateaus.len() != climbs.len() + 1 {
        return Err(ConstructError::Invalid(
            "need exactly one climb per gap".into(),
        ));
    }
    if climbs.len() > layout.blocks() {
        return Err(ConstructError::Invalid(
            "more climbs than blocks in the layout".into(),
        ));
    }
    let mut heights = Vec::with_capacity(climbs.len());
    for i in 1..plateaus.len() {
        let c = plateaus[i] - plateaus[i - 1];
        if c < -1e-12 {
            return Err(ConstructError::Decreasing {
                index: i,
                value: plateaus[i],
                previous: plateaus[i - 1],
            });
        }
        let n = c.round();
        if (c - n).abs() > 1e-9 {
            return Err(ConstructError::Invalid(format!(
                "plateau gap {c} at {i} is not a natural number"
            )));
        }
        heights.push(n as u64);
    }
    Ok(PiecewiseU {
        layout,
        plateaus: plateaus.to_vec(),
        climbs,
        heights,
    })
}

/// When an obligation is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    /// On every block `l ≥ first`.
    From(usize),
    /// On block `l` only.
    Only(usize),
}

impl Activity {
    pub fn active(&self, l: usize) -> bool {
        match *self {
            Activity::From(f) => l >= f,
            Activity::Only(b) => l == b,
        }
    }

    pub fn first(&self) -> usize {
        match *self {
            Activity::From(f) | Activity::Only(f) => f,
        }
    }
}

/// A quasi-flatzoomer restricted to the ray with its certificate data.
#[derive(Clone)]
pub struct Obligation {
    pub name: String,
    pub a: f64,
    pub k: usize,
    pub d: u32,
    pub theta: RayFn,
    pub eps: RayFn,
    pub floor: Option<RayFn>,
    pub activity: Activity,
    /// `Φ(u)(r)`, compared against `eps(r)` in the final check.
    pub evaluate: RayEvaluator,
}

#[derive(Debug, Clone)]
pub struct LedgerConfig {
    /// Last block with verified obligations.
    pub horizon: usize,
    pub block_samples: usize,
    pub alpinist_grid: usize,
    pub alpinist_max_n: u64,
    pub headroom: f64,
    pub lambda_decay: f64,
    pub verify_samples: usize,
}

impl Default for LedgerConfig {
    fn default() -> LedgerConfig {
        LedgerConfig {
            horizon: 12,
            block_samples: 257,
            alpinist_grid: 4096,
            alpinist_max_n: 200,
            headroom: 1.05,
            lambda_decay: 0.99,
            verify_samples: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockLedger {
    pub block: usize,
    pub lo: f64,
    pub hi: f64,
    pub active: Vec<usize>,
    pub eps_tilde: Option<f64>,
    pub theta_sup: Option<f64>,
    /// `None` when no obligation constrains the block.
    pub lambda_tilde: Option<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub kappa: usize,
    pub floor_hat: Option<f64>,
    pub chain_rule: f64,
    pub alpinist_bound: f64,
    pub plateau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstructionLedger {
    pub blocks: Vec<BlockLedger>,
    /// Smallest start value from which every larger start is admissible.
    pub mu: f64,
    pub start: f64,
}

impl ConstructionLedger {
    /// Monotonicity of `λ`, `α`, `κ`, `b` and `λ < λ̃`, plus the plateau growth inequality.
    pub fn invariant_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for w in self.blocks.windows(2) {
            let (p, q) = (&w[0], &w[1]);
            if !(q.lambda < p.lambda) {
                out.push(format!("lambda not decreasing at block {}", q.block));
            }
            if q.alpha > p.alpha {
                out.push(format!("alpha increases at block {}", q.block));
            }
            if q.kappa < p.kappa {
                out.push(format!("kappa decreases at block {}", q.block));
            }
            if q.plateau < p.plateau {
                out.push(format!("plateau decreases at block {}", q.block));
            }
            let input = PlateauInput {
                lambda_next: q.lambda,
                alpha_next: q.alpha,
                chain_rule: p.chain_rule,
                alpinist_bound: p.alpinist_bound,
                floor: None,
                previous: None,
                base: 0.0,
            };
            if !input.growth_holds(p.plateau) {
                out.push(format!("growth inequality fails at block {}", p.block));
            }
        }
        for b in &self.blocks {
            if let Some(lt) = b.lambda_tilde {
                if !(b.lambda < lt) {
                    out.push(format!(
                        "lambda not below lambda_tilde at block {}",
                        b.block
                    ));
                }
            }
        }
        out
    }
}

struct Normalized<'a> {
    ob: &'a Obligation,
    a: f64,
    inv_d: f64,
}

impl Normalized<'_> {
    fn theta(&self, r: f64) -> f64 {
        (self.ob.theta)(r).powf(self.inv_d)
    }
    fn eps(&self, r: f64) -> f64 {
        (self.ob.eps)(r).powf(self.inv_d)
    }
}

fn alpinist_key(a: f64, k: usize) -> (u64, usize) {
    (a.to_bits(), k)
}

/// Per-`(a, k)` measured G-sup and the shared grid samples.
struct AlpinistCache {
    grid: usize,
    max_n: u64,
    headroom: f64,
    entries: BTreeMap<(u64, usize), (Alpinist, f64, Arc<Vec<StepSample>>)>,
}

impl AlpinistCache {
    fn get(
        &mut self,
        a: f64,
        k: usize,
    ) -> Result<(Alpinist, f64, Arc<Vec<StepSample>>), ConstructError> {
        let key = alpinist_key(a, k);
        if let Some(e) = self.entries.get(&key) {
            return Ok(e.clone());
        }
        let al = Alpinist::new(a, k)?;
        let samples = Arc::new(al.samples(self.grid, k));
        let sup = al.g_bound_on(self.max_n, &samples).overall_sup;
        let entry = (al, sup * self.headroom, samples);
        self.entries.insert(key, entry.clone());
        Ok(entry)
    }
}

/// Runs the block ledger and assembles `u`.
///
/// `start` fixes `b_0` (searching later plateaus in `start + ℕ`); `None` starts at the minimal admissible natural.
pub fn construct(
    obligations: &[Obligation],
    w: Option<&RayFn>,
    layout: &Layout,
    config: &LedgerConfig,
    start: Option<f64>,
) -> Result<(PiecewiseU, ConstructionLedger), ConstructError> {
    let n = config.horizon;
    // Plateaus b_0..=b_{n+2}, ledger rows 0..=n+3, neighbourhoods up to K_{n+4}.
    let rows = n + 4;
    if layout.blocks() < rows + 1 {
        return Err(ConstructError::Invalid(format!(
            "layout has {} blocks; horizon {n} needs {}",
            layout.blocks(),
            rows + 1
        )));
    }
    for ob in obligations {
        if !(ob.a > 0.0) || ob.d == 0 {
            return Err(ConstructError::Invalid(format!(
                "obligation {} needs a > 0 and d ≥ 1",
                ob.name
            )));
        }
    }
    let norm: Vec<Normalized> = obligations
        .iter()
        .map(|ob| Normalized {
            ob,
            a: ob.a / ob.d as f64,
            inv_d: 1.0 / ob.d as f64,
        })
        .collect();
    let ex = &layout.exhaustion;
    let samples = config.block_samples.max(2);

    let sup_over = |lo: f64, hi: f64, f: &(dyn Fn(f64) -> f64 + Sync)| -> f64 {
        grid(lo, hi, samples)
            .into_par_iter()
            .map(f)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    };
    let inf_over = |lo: f64, hi: f64, f: &(dyn Fn(f64) -> f64 + Sync)| -> f64 {
        grid(lo, hi, samples)
            .into_par_iter()
            .map(f)
            .reduce(|| f64::INFINITY, f64::min)
    };

    // Active sets and running extremes.
    let active: Vec<Vec<usize>> = (0..rows)
        .map(|l| {
            (0..norm.len())
                .filter(|&i| norm[i].ob.activity.active(l))
                .collect()
        })
        .collect();
    let mut alpha = vec![f64::NAN; rows];
    let mut kappa = vec![usize::MAX; rows];
    let mut run_a = f64::INFINITY;
    let mut run_k = None::<usize>;
    for l in 0..rows {
        for nm in norm.iter().filter(|nm| nm.ob.activity.first() <= l) {
            run_a = run_a.min(nm.a);
            run_k = Some(run_k.map_or(nm.ob.k, |k: usize| k.max(nm.ob.k)));
        }
        if let Some(k) = run_k {
            alpha[l] = run_a;
            kappa[l] = k;
        }
    }
    let first_set = (0..rows).find(|&l| kappa[l] != usize::MAX);
    for l in 0..rows {
        if kappa[l] == usize::MAX {
            match first_set {
                Some(f) => {
                    alpha[l] = alpha[f];
                    kappa[l] = kappa[f];
                }
                None => {
                    alpha[l] = 1.0;
                    kappa[l] = 0;
                }
            }
        }
    }

    // ε̃, sup ϑ and λ̃.
    let mut eps_tilde = vec![None; rows];
    let mut theta_sup = vec![None; rows];
    let mut lambda_tilde = vec![None; rows];
    for l in 0..rows {
        if active[l].is_empty() {
            continue;
        }
        let (blo, bhi) = ex.block(l);
        let (nlo, nhi) = ex.neighbourhood(l);
        let e = active[l]
            .iter()
            .map(|&i| inf_over(blo, bhi, &|r| norm[i].eps(r)))
            .fold(f64::INFINITY, f64::min);
        let t = active[l]
            .iter()
            .map(|&i| sup_over(nlo, nhi, &|r| norm[i].theta(r)))
            .fold(0.0, f64::max);
        if !(e > 0.0) || !e.is_finite() {
            return Err(ConstructError::Invalid(format!(
                "tolerance on block {l} is not positive and finite"
            )));
        }
        eps_tilde[l] = Some(e);
        theta_sup[l] = Some(t);
        if t > 0.0 {
            lambda_tilde[l] = Some(e / t);
        }
    }
    let decay = config.lambda_decay;
    let mut lambda = vec![0.0; rows];
    let first_finite = (0..rows).find(|&l| lambda_tilde[l].is_some());
    let anchor = first_finite.unwrap_or(0);
    let anchor_value = first_finite
        .and_then(|l| lambda_tilde[l])
        .map_or(1.0, |v| v / 2.0);
    for l in 0..rows {
        lambda[l] = if l <= anchor {
            anchor_value * decay.powi(l as i32 - anchor as i32)
        } else {
            let prev = decay * lambda[l - 1];
            lambda_tilde[l].map_or(prev, |lt| prev.min(lt / 2.0))
        };
    }

    // ŵ per block: strictly above w and the floors relevant to the neighbouring rows.
    let mut floor_hat = vec![None; rows];
    for l in 0..rows {
        let (blo, bhi) = ex.block(l);
        let mut m = 0.0f64;
        if let Some(w) = w {
            m = m.max(sup_over(blo, bhi, &|r| w(r)));
        }
        let lo_row = l.saturating_sub(1);
        for row in active.iter().take((l + 2).min(rows)).skip(lo_row) {
            for &i in row {
                if let Some(f) = &norm[i].ob.floor {
                    m = m.max(sup_over(blo, bhi, &|r| f(r)));
                }
            }
        }
        floor_hat[l] = Some(m + 1e-9 * m.abs().max(1.0));
    }

    let mut cache = AlpinistCache {
        grid: config.alpinist_grid,
        max_n: config.alpinist_max_n,
        headroom: config.headroom,
        entries: BTreeMap::new(),
    };
    let plateau_count = n + 3;
    let mut plateaus = Vec::with_capacity(plateau_count);
    let mut climbs = Vec::with_capacity(plateau_count - 1);
    let mut ledger_rows = Vec::with_capacity(plateau_count);
    let base = start.map_or(0.0, |s| s - s.floor());
    let mut mu = 0.0;
    for l in 0..plateau_count {
        let (al, c_bound, _) = cache.get(alpha[l + 1], kappa[l + 1])?;
        let chain = chain_rule_constant(layout.collar_length(l), kappa[l + 1]);
        let input = PlateauInput {
            lambda_next: lambda[l + 1],
            alpha_next: alpha[l + 1],
            chain_rule: chain,
            alpinist_bound: c_bound,
            floor: floor_hat[l],
            previous: plateaus.last().copied(),
            base,
        };
        let b = if l == 0 {
            let thr = PlateauInput { base, ..input }
                .stable_threshold()
                .ok_or(ConstructError::SearchExhausted(0))?;
            mu = thr;
            match start {
                Some(s) if s < thr => {
                    return Err(ConstructError::BelowThreshold {
                        requested: s,
                        mu: thr,
                    })
                }
                Some(s) => s,
                None => build_b_sequence(&input).ok_or(ConstructError::SearchExhausted(0))?,
            }
        } else {
            build_b_sequence(&input).ok_or(ConstructError::SearchExhausted(l))?
        };
        let (blo, bhi) = ex.block(l);
        ledger_rows.push(BlockLedger {
            block: l,
            lo: blo,
            hi: bhi,
            active: active[l].clone(),
            eps_tilde: eps_tilde[l],
            theta_sup: theta_sup[l],
            lambda_tilde: lambda_tilde[l],
            lambda: lambda[l],
            alpha: alpha[l],
            kappa: kappa[l],
            floor_hat: floor_hat[l],
            chain_rule: chain,
            alpinist_bound: c_bound,
            plateau: b,
        });
        plateaus.push(b);
        if l + 1 < plateau_count {
            climbs.push(al);
        }
    }
    let u = assemble_u(&plateaus, climbs, layout.clone())?;
    // Heights beyond the measured range are checked individually.
    for (i, &h) in u.heights().iter().enumerate() {
        if h > config.alpinist_max_n {
            let (al, bound, samples) = cache.get(alpha[i + 1], kappa[i + 1])?;
            let measured = al.g_report(h, &samples).sup;
            if measured > bound {
                return Err(ConstructError::BoundExceeded {
                    block: i,
                    n: h,
                    measured,
                    bound,
                });
            }
        }
    }
    let ledger = ConstructionLedger {
        blocks: ledger_rows,
        mu,
        start: plateaus[0],
    };
    Ok((u, ledger))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockCheck {
    pub block: usize,
    /// Obligation index, or `None` for the intermediate inequality.
    pub obligation: Option<usize>,
    pub sup: f64,
    pub limit: f64,
    /// `1 − sup/limit`; strictly positive when passing.
    pub margin: f64,
    pub witness: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub intermediate: Vec<BlockCheck>,
    pub obligations: Vec<BlockCheck>,
    pub floor_violations: Vec<f64>,
    pub junction_residual: f64,
    pub passed: bool,
}

fn sup_with_witness(
    points: &[f64],
    f: &(dyn Fn(f64) -> Result<f64, GeometryError> + Sync),
) -> Result<(f64, f64), GeometryError> {
    let vals: Vec<Result<(f64, f64), GeometryError>> =
        points.par_iter().map(|&r| Ok((f(r)?, r))).collect();
    let mut best = (f64::NEG_INFINITY, points.first().copied().unwrap_or(0.0));
    for v in vals {
        let (val, r) = v?;
        if val > best.0 || val.is_nan() {
            best = (val, r);
        }
    }
    Ok(best)
}

/// Checks the intermediate inequality per block, every obligation on its active blocks, the floor, and junction smoothness.
pub fn verify_construction(
    u: &PiecewiseU,
    ledger: &ConstructionLedger,
    obligations: &[Obligation],
    w: Option<&RayFn>,
    horizon: usize,
    samples: usize,
) -> Result<VerificationReport, GeometryError> {
    let ex = &u.layout().exhaustion;
    let mut intermediate = Vec::new();
    let last = horizon.min(ledger.blocks.len().saturating_sub(1));
    for row in ledger.blocks.iter().take(last + 1) {
        let (lo, hi) = ex.neighbourhood(row.block);
        let pts = grid(lo, hi, samples);
        let (alpha, kappa) = (row.alpha, row.kappa);
        let (sup, witness) = sup_with_witness(&pts, &|r| {
            let d = u.derivatives_at(r, kappa);
            Ok((-alpha * d[0]).exp() * (1.0 + d.iter().map(|v| v.abs()).sum::<f64>()))
        })?;
        intermediate.push(BlockCheck {
            block: row.block,
            obligation: None,
            sup,
            limit: row.lambda,
            margin: 1.0 - sup / row.lambda,
            witness,
            passed: sup <= row.lambda,
        });
    }
    let mut checks = Vec::new();
    for (i, ob) in obligations.iter().enumerate() {
        for l in 0..=horizon.min(ex.len() - 1) {
            if !ob.activity.active(l) {
                continue;
            }
            let (lo, hi) = ex.block(l);
            let pts = grid(lo, hi, samples);
            let (worst, witness) =
                sup_with_witness(&pts, &|r| Ok((ob.evaluate)(u, r)? / (ob.eps)(r)))?;
            let sup = (ob.evaluate)(u, witness)?;
            let limit = (ob.eps)(witness);
            checks.push(BlockCheck {
                block: l,
                obligation: Some(i),
                sup,
                limit,
                margin: 1.0 - worst,
                witness,
                passed: worst < 1.0,
            });
        }
    }
    let mut floor_violations = Vec::new();
    if let Some(w) = w {
        let end = ex.radius(horizon.min(ex.len() - 1) as isize);
        for r in grid(0.0, end, samples * (horizon + 1)) {
            if !(u.value(r) > w(r)) {
                floor_violations.push(r);
            }
        }
    }
    let junction_residual = u.junction_residual(3);
    let passed = intermediate.iter().all(|c| c.passed)
        && checks.iter().all(|c| c.passed)
        && floor_violations.is_empty()
        && junction_residual <= 1e-6;
    Ok(VerificationReport {
        intermediate,
        obligations: checks,
        floor_violations,
        junction_residual,
        passed,
    })
}

/// Monomial `coeff · Π X_j^{powers[j]}`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Polynomial {
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn nvars(&self) -> usize {
        self.terms.iter().map(|t| t.powers.len()).max().unwrap_or(1)
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|t| t.coeff != 0.0)
            .map(|t| t.powers.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.powers.iter().enumerate().fold(t.coeff, |acc, (j, p)| {
                    acc * x.get(j).copied().unwrap_or(0.0).powi(*p as i32)
                })
            })
            .sum()
    }

    /// Every monomial has a nonnegative coefficient and only even powers.
    pub fn certified_nonnegative(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.coeff >= 0.0 && t.powers.iter().all(|p| p % 2 == 0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let n = self.nvars().max(other.nvars());
        let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for a in &self.terms {
            for b in &other.terms {
                let mut p = vec![0; n];
                for (j, v) in a.powers.iter().enumerate() {
                    p[j] += v;
                }
                for (j, v) in b.powers.iter().enumerate() {
                    p[j] += v;
                }
                *acc.entry(p).or_insert(0.0) += a.coeff * b.coeff;
            }
        }
        Polynomial {
            terms: acc
                .into_iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|(powers, coeff)| Monomial { coeff, powers })
                .collect(),
        }
    }

    /// `P` itself if certified nonnegative, else `P² + 1`.
    pub fn sign_normalized(&self) -> Polynomial {
        if self.certified_nonnegative() {
            return self.clone();
        }
        let mut sq = self.mul(self);
        let n = self.nvars();
        sq.terms.push(Monomial {
            coeff: 1.0,
            powers: vec![0; n],
        });
        sq
    }

    /// Largest absolute coefficient.
    pub fn max_coefficient(&self) -> f64 {
        self.terms.iter().fold(0.0, |a, t| a.max(t.coeff.abs()))
    }
}

/// `P_i(u, u′, …, u^{(m_i)}) < ε_i e^{α_i u}` on `[i, i+1]` with `u > w`.
#[derive(Debug, Clone)]
pub struct OdProblem {
    pub eps: Vec<f64>,
    pub alpha: Vec<f64>,
    pub polys: Vec<Polynomial>,
    pub w: Option<Expr>,
    pub horizon: usize,
}

fn pick<T: Clone>(v: &[T], i: usize) -> T {
    v[i.min(v.len() - 1)].clone()
}

impl OdProblem {
    pub fn new(
        eps: Vec<f64>,
        alpha: Vec<f64>,
        polys: Vec<Polynomial>,
        w: Option<Expr>,
        horizon: usize,
    ) -> Result<OdProblem, ConstructError> {
        if eps.is_empty() || alpha.is_empty() || polys.is_empty() {
            return Err(ConstructError::Invalid(
                "eps, alpha and P must be non-empty".into(),
            ));
        }
        if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(ConstructError::Invalid(
                "every eps must be positive and finite".into(),
            ));
        }
        if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(ConstructError::Invalid(
                "every alpha must be positive and finite".into(),
            ));
        }
        Ok(OdProblem {
            eps,
            alpha,
            polys,
            w,
            horizon,
        })
    }

    pub fn eps_at(&self, i: usize) -> f64 {
        pick(&self.eps, i)
    }

    pub fn alpha_at(&self, i: usize) -> f64 {
        pick(&self.alpha, i)
    }

    pub fn poly_at(&self, i: usize) -> Polynomial {
        pick(&self.polys, i)
    }

    pub fn floor(&self) -> Option<RayFn> {
        self.w.clone().map(|e| {
            let f: RayFn = Arc::new(move |x: f64| e.eval(&[x]).unwrap_or(f64::INFINITY));
            f
        })
    }

    /// One pointwise obligation per block after sign normalization.
    pub fn obligations(&self) -> Vec<Obligation> {
        (0..self.horizon + 4)
            .map(|i| {
                let p = self.poly_at(i).sign_normalized();
                let m = p.nvars() - 1;
                let alpha = self.alpha_at(i);
                let eps = self.eps_at(i);
                let theta = p.max_coefficient();
                let poly = p.clone();
                let evaluate: RayEvaluator = Arc::new(move |u: &PiecewiseU, r: f64| {
                    let d = u.derivatives_at(r, m);
                    Ok((-alpha * d[0]).exp() * poly.eval(&d))
                });
                Obligation {
                    name: format!("P{i}"),
                    a: alpha,
                    k: m,
                    d: p.degree().max(1),
                    theta: Arc::new(move |_| theta),
                    eps: Arc::new(move |_| eps),
                    floor: None,
                    activity: Activity::Only(i),
                    evaluate,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdBlockMargin {
    pub block: usize,
    /// `min (1 − P_i/(ε_i e^{α_i u}))` over the block grid, for the original polynomial.
    pub margin: f64,
    pub witness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdReport {
    pub u0: f64,
    pub start_ok: bool,
    pub plateaus_constant: bool,
    pub above_floor: bool,
    pub blocks: Vec<OdBlockMargin>,
    pub construction: VerificationReport,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct OdSolution {
    pub mu: f64,
    pub u: PiecewiseU,
    pub ledger: ConstructionLedger,
}

/// Solves an OD problem; `u0 = None` starts at `μ`.
pub fn solve_od(
    problem: &OdProblem,
    u0: Option<f64>,
    config: &LedgerConfig,
) -> Result<OdSolution, ConstructError> {
    let layout = Layout::od(problem.horizon + 5);
    let config = LedgerConfig {
        horizon: problem.horizon,
        ..config.clone()
    };
    let obligations = problem.obligations();
    let floor = problem.floor();
    // Resolve μ first when no start is given.
    let start = match u0 {
        Some(s) => Some(s),
        None => {
            let (_, ledger) = construct(&obligations, floor.as_ref(), &layout, &config, None)?;
            Some(ledger.mu)
        }
    };
    let (u, ledger) = construct(&obligations, floor.as_ref(), &layout, &config, start)?;
    Ok(OdSolution {
        mu: ledger.mu,
        u,
        ledger,
    })
}

/// Properties (start value, constancy on `[i, i+½]`, floor, inequality) on grids of `samples` points per block.
pub fn verify_od(
    problem: &OdProblem,
    sol: &OdSolution,
    u0: f64,
    samples: usize,
) -> Result<OdReport, GeometryError> {
    let u = &sol.u;
    let start_ok = u.value(0.0) == u0;
    let mut plateaus_constant = true;
    let mut blocks = Vec::new();
    let mut above_floor = true;
    let w = problem.floor();
    for i in 0..=problem.horizon {
        let b = u.value(i as f64);
        for r in grid(i as f64, i as f64 + 0.5, samples) {
            let d = u.derivatives_at(r, 3);
            if d[0] != b || d[1..].iter().any(|v| *v != 0.0) {
                plateaus_constant = false;
            }
        }
        let p = problem.poly_at(i);
        let m = p.nvars() - 1;
        let (eps, alpha) = (problem.eps_at(i), problem.alpha_at(i));
        let pts = grid(i as f64, (i + 1) as f64, samples);
        let margins: Vec<(f64, f64)> = pts
            .par_iter()
            .map(|&r| {
                let d = u.derivatives_at(r, m);
                (1.0 - p.eval(&d) / (eps * (alpha * d[0]).exp()), r)
            })
            .collect();
        let (margin, witness) = margins.into_iter().fold((f64::INFINITY, 0.0), |a, b| {
            if b.0 < a.0 || b.0.is_nan() {
                b
            } else {
                a
            }
        });
        blocks.push(OdBlockMargin {
            block: i,
            margin,
            witness,
        });
        if let Some(w) = &w {
            if pts.iter().any(|&r| !(u.value(r) > w(r))) {
                above_floor = false;
            }
        }
    }
    let construction = verify_construction(
        u,
        &sol.ledger,
        &problem.obligations(),
        w.as_ref(),
        problem.horizon,
        samples,
    )?;
    let passed = start_ok
        && plateaus_constant
        && above_floor
        && blocks.iter().all(|b| b.margin > 0.0)
        && construction.passed;
    Ok(OdReport {
        u0,
        start_ok,
        plateaus_constant,
        above_floor,
        blocks,
        construction,
        passed,
    })
}

/// How a ray profile becomes a conformal factor on the chart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Lift {
    /// One-dimensional chart, `x = r`.
    Line,
    /// `U(x) = u(|x|)` on an `dim`-dimensional chart, sampled at `angles` directions in the first coordinate plane.
    Radial { dim: usize, angles: usize },
}

impl Lift {
    pub fn points(&self, r: f64) -> Vec<Vec<f64>> {
        match *self {
            Lift::Line => vec![vec![r]],
            Lift::Radial { dim, angles } => (0..angles.max(1))
                .map(|m| {
                    let th = std::f64::consts::FRAC_PI_2 * m as f64 / angles.max(1) as f64;
                    let mut x = vec![0.0; dim];
                    x[0] = r * th.cos();
                    if dim > 1 {
                        x[1] = r * th.sin();
                    }
                    x
                })
                .collect(),
        }
    }

    pub fn eval(&self, phi: &Functional, u: &PiecewiseU, x: &[f64]) -> Result<f64, GeometryError> {
        match *self {
            Lift::Line => phi.eval(&LineLift { profile: u }, x),
            Lift::Radial { dim, .. } => phi.eval(&RadialLift { profile: u, n: dim }, x),
        }
    }
}

/// A functional, its certificate and tolerance `ε(r)`.
#[derive(Clone)]
pub struct ZoomTarget {
    pub functional: Functional,
    pub certificate: FlatzoomerBound,
    pub eps: RayFn,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZoomReport {
    pub ledger: ConstructionLedger,
    pub verification: VerificationReport,
    pub ledger_failures: Vec<String>,
    pub passed: bool,
}

/// Turns each target into a ray obligation active on blocks `l ≥ i+1`.
pub fn zoom_obligations(targets: &[ZoomTarget], lift: &Lift) -> Vec<Obligation> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let cert = Arc::new(t.certificate.clone());
            let lift_t = lift.clone();
            let c1 = cert.clone();
            let theta: RayFn = Arc::new(move |r| {
                lift_t
                    .points(r)
                    .iter()
                    .map(|x| c1.theta(x).unwrap_or(f64::INFINITY))
                    .fold(0.0, f64::max)
            });
            let lift_f = lift.clone();
            let c2 = cert.clone();
            let floor: RayFn = Arc::new(move |r| {
                lift_f
                    .points(r)
                    .iter()
                    .map(|x| c2.floor.eval(x).unwrap_or(f64::INFINITY))
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            let lift_e = lift.clone();
            let phi = t.functional.clone();
            let evaluate: RayEvaluator = Arc::new(move |u: &PiecewiseU, r: f64| {
                let mut m = 0.0f64;
                for x in lift_e.points(r) {
                    m = m.max(lift_e.eval(&phi, u, &x)?);
                }
                Ok(m)
            });
            Obligation {
                name: format!("Phi{i}"),
                a: cert.alpha,
                k: cert.k,
                d: cert.d.max(1),
                theta,
                eps: t.eps.clone(),
                floor: Some(floor),
                activity: Activity::From(i + 1),
                evaluate,
            }
        })
        .collect()
}

/// Builds `u` so that every target satisfies `Φ_i(u) < ε_i` on blocks `l ≥ i+1` up to the horizon.
pub fn flatzoom_all(
    targets: &[ZoomTarget],
    w: Option<&RayFn>,
    layout: &Layout,
    lift: &Lift,
    config: &LedgerConfig,
) -> Result<(PiecewiseU, ZoomReport), ConstructError> {
    let obligations = zoom_obligations(targets, lift);
    let (u, ledger) = construct(&obligations, w, layout, config, None)?;
    let verification = verify_construction(
        &u,
        &ledger,
        &obligations,
        w,
        config.horizon,
        config.verify_samples,
    )?;
    let ledger_failures = ledger.invariant_failures();
    let passed = verification.passed && ledger_failures.is_empty();
    Ok((
        u,
        ZoomReport {
            ledger,
            verification,
            ledger_failures,
            passed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(lambda: f64, floor: Option<f64>, previous: Option<f64>) -> PlateauInput {
        PlateauInput {
            lambda_next: lambda,
            alpha_next: 1.0,
            chain_rule: 1.0,
            alpinist_bound: 1.0,
            floor,
            previous,
            base: 0.0,
        }
    }

    #[test]
    fn plateau_search_examples() {
        assert_eq!(build_b_sequence(&input(1.0, Some(0.0), None)), Some(0.0));
        assert_eq!(build_b_sequence(&input(0.1, None, None)), Some(4.0));
        assert_eq!(build_b_sequence(&input(1.0, None, Some(7.0))), Some(7.0));
    }

    #[test]
    fn chain_rule_examples() {
        assert_eq!(chain_rule_constant(1.0, 3), 4.0);
        assert!(chain_rule_constant(0.5, 2) >= 4.0);
        // f(t) = t² at t = 1: derivatives (1, 2, 2).
        assert!(chain_rule_slack(0.5, &[1.0, 2.0, 2.0], chain_rule_constant(0.5, 2)) >= 0.0);
    }

    #[test]
    fn constant_and_staircase_profiles() {
        let layout = Layout::od(6);
        let climbs: Vec<Alpinist> = (0..5).map(|_| Alpinist::new(1.0, 1).unwrap()).collect();
        let u = assemble_u(&[5.0; 6], climbs.clone(), layout.clone()).unwrap();
        for r in [0.0, 0.7, 2.6, 4.9] {
            let d = u.derivatives_at(r, 3);
            assert_eq!(d, vec![5.0, 0.0, 0.0, 0.0]);
        }
        let stairs: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let u = assemble_u(&stairs, climbs, layout).unwrap();
        for i in 0..5 {
            let fi = i as f64;
            assert_eq!(u.value(fi), fi);
            assert_eq!(u.value(fi + 0.25), fi);
            assert!((u.value(fi + 1.0) - (fi + 1.0)).abs() < 1e-12);
        }
        assert!(u.junction_residual(3) <= 1e-6);
        let err = assemble_u(
            &[1.0, 0.0],
            vec![Alpinist::new(1.0, 1).unwrap()],
            Layout::od(2),
        );
        assert!(matches!(err, Err(ConstructError::Decreasing { .. })));
    }

    #[test]
    fn sign_normalization() {
        let p = Polynomial {
            terms: vec![Monomial {
                coeff: 1.0,
                powers: vec![0, 2],
            }],
        };
        assert!(p.certified_nonnegative());
        let q = Polynomial {
            terms: vec![Monomial {
                coeff: -1.0,
                powers: vec![1],
            }],
        };
        let n = q.sign_normalized();
        assert_eq!(n.eval(&[3.0]), 10.0);
        for x in [-2.0, 0.0, 5.0] {
            assert!(q.eval(&[x]) < n.eval(&[x]));
        }
    }
}
