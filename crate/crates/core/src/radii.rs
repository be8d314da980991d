//! Geodesic shooting, injectivity/convexity radius lower bounds, and the lightlike blow-up experiment.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::GeometryError;
use crate::expr::Expr;
use crate::geometry::curvature::sectional_from;
use crate::geometry::{riemann, MetricField};

pub const BLOWUP_SPEED: f64 = 1e12;
pub const LOOP_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    LeftDomain,
    BlowUp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicTrajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl GeodesicTrajectory {
    /// Largest relative deviation of `|γ′|_g` from its initial value.
    pub fn speed_drift(&self, g: &MetricField) -> Result<f64, GeometryError> {
        let s0 = speed(g, &self.positions[0], &self.velocities[0])?;
        let mut worst = 0.0f64;
        for (x, v) in self.positions.iter().zip(&self.velocities) {
            worst = worst.max((speed(g, x, v)? - s0).abs() / s0);
        }
        Ok(worst)
    }
}

fn wrap(g: &MetricField, x: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g.periods())
        .zip(g.domain())
        .map(|((v, p), (lo, _))| match p {
            Some(p) => lo + (v - lo).rem_euclid(*p),
            None => *v,
        })
        .collect()
}

fn speed(g: &MetricField, x: &[f64], v: &[f64]) -> Result<f64, GeometryError> {
    let m = g.metric_matrix(&wrap(g, x))?;
    let mut s = 0.0;
    for a in 0..v.len() {
        for b in 0..v.len() {
            s += m[(a, b)] * v[a] * v[b];
        }
    }
    Ok(s.abs().sqrt())
}

/// Christoffel symbols from cached first partials of the components.
struct ChristoffelField<'a> {
    g: &'a MetricField,
    values: Vec<Expr>,
    partials: Vec<Expr>,
}

impl<'a> ChristoffelField<'a> {
    fn new(g: &'a MetricField) -> ChristoffelField<'a> {
        let n = g.dim();
        let mut values = Vec::with_capacity(n * n);
        let mut partials = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                values.push(g.component(i, j).clone());
                for k in 0..n {
                    let mut alpha = vec![0u8; n];
                    alpha[k] = 1;
                    partials.push(g.partial_expr(i, j, &alpha));
                }
            }
        }
        ChristoffelField {
            g,
            values,
            partials,
        }
    }

    fn acceleration(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let n = x.len();
        let x = wrap(self.g, x);
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.values[i * n + j].eval(&x)?;
            }
        }
        let inv = m
            .try_inverse()
            .ok_or_else(|| GeometryError::Singular(x.clone()))?;
        let mut dg = vec![0.0; n * n * n];
        for (slot, e) in dg.iter_mut().zip(&self.partials) {
            *slot = e.eval(&x)?;
        }
        let d = |i: usize, j: usize, k: usize| dg[(i * n + j) * n + k];
        // Γ_{l,ij} v^i v^j with Γ_{l,ij} = ½(∂_i g_jl + ∂_j g_il − ∂_l g_ij).
        let mut lower = vec![0.0; n];
        for (l, low) in lower.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += 0.5 * (d(j, l, i) + d(i, l, j) - d(i, j, l)) * v[i] * v[j];
                }
            }
            *low = s;
        }
        Ok((0..n)
            .map(|c| -(0..n).map(|l| inv[(c, l)] * lower[l]).sum::<f64>())
            .collect())
    }
}

fn axpy(x: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + h * b).collect()
}

/// Fixed-step RK4 for `γ″ = −Γ(γ′, γ′)`. Positions on periodic axes are left unwrapped.
pub fn integrate_geodesic(
    g: &MetricField,
    x: &[f64],
    v: &[f64],
    horizon: f64,
    step: f64,
) -> Result<GeodesicTrajectory, GeometryError> {
    if !g.contains(x) {
        return Err(GeometryError::OutsideDomain(x.to_vec()));
    }
    if v.iter().all(|c| *c == 0.0) {
        return Err(GeometryError::Invalid("initial velocity is zero".into()));
    }
    if !(step > 0.0) {
        return Err(GeometryError::Invalid("step must be positive".into()));
    }
    let steps = (horizon / step).ceil() as usize;
    let mut out = GeodesicTrajectory {
        times: vec![0.0],
        positions: vec![x.to_vec()],
        velocities: vec![v.to_vec()],
        termination: Termination::Horizon,
    };
    let field = ChristoffelField::new(g);
    let acceleration = |p: &[f64], q: &[f64]| field.acceleration(p, q);
    let (mut p, mut q) = (x.to_vec(), v.to_vec());
    for m in 0..steps {
        let h = step.min(horizon - m as f64 * step);
        let k1x = q.clone();
        let k1v = acceleration(&p, &q)?;
        let k2x = axpy(&q, h / 2.0, &k1v);
        let k2v = acceleration(&axpy(&p, h / 2.0, &k1x), &k2x)?;
        let k3x = axpy(&q, h / 2.0, &k2v);
        let k3v = acceleration(&axpy(&p, h / 2.0, &k2x), &k3x)?;
        let k4x = axpy(&q, h, &k3v);
        let k4v = acceleration(&axpy(&p, h, &k3x), &k4x)?;
        for a in 0..p.len() {
            p[a] += h / 6.0 * (k1x[a] + 2.0 * k2x[a] + 2.0 * k3x[a] + k4x[a]);
            q[a] += h / 6.0 * (k1v[a] + 2.0 * k2v[a] + 2.0 * k3v[a] + k4v[a]);
        }
        if !g.contains(&p) || p.iter().any(|c| !c.is_finite()) {
            out.termination = Termination::LeftDomain;
            break;
        }
        out.times.push(out.times.last().unwrap() + h);
        out.positions.push(p.clone());
        out.velocities.push(q.clone());
        if q.iter().map(|c| c * c).sum::<f64>().sqrt() > BLOWUP_SPEED {
            out.termination = Termination::BlowUp;
            break;
        }
    }
    Ok(out)
}

/// `g`-orthonormal frame at `x` by Gram–Schmidt on the coordinate basis.
pub fn orthonormal_frame(g: &MetricField, x: &[f64]) -> Result<Vec<Vec<f64>>, GeometryError> {
    let m = g.metric_matrix(&wrap(g, x))?;
    let n = g.dim();
    let ip = |a: &[f64], b: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += m[(i, j)] * a[i] * b[j];
            }
        }
        s
    };
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        for f in &frame {
            let c = ip(&e, f);
            e = axpy(&e, -c, f);
        }
        let norm = ip(&e, &e);
        if !(norm > 0.0) {
            return Err(GeometryError::Singular(x.to_vec()));
        }
        frame.push(e.iter().map(|c| c / norm.sqrt()).collect());
    }
    Ok(frame)
}

/// Unit directions in `T_xM`: a circle in the first frame plane for 2D, axis and diagonal directions otherwise.
fn directions(frame: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    let n = frame.len();
    if n == 1 {
        return vec![frame[0].clone(), frame[0].iter().map(|c| -c).collect()];
    }
    if n == 2 {
        return (0..count)
            .map(|m| {
                let t = 2.0 * PI * m as f64 / count as f64;
                (0..2)
                    .map(|a| t.cos() * frame[0][a] + t.sin() * frame[1][a])
                    .collect()
            })
            .collect();
    }
    let mut out = Vec::new();
    for i in 0..n {
        for sgn in [1.0, -1.0] {
            out.push(frame[i].iter().map(|c| sgn * c).collect());
        }
        for j in (i + 1)..n {
            for sgn in [1.0, -1.0] {
                out.push(
                    (0..n)
                        .map(|a| (frame[i][a] + sgn * frame[j][a]) / 2f64.sqrt())
                        .collect(),
                );
            }
        }
    }
    out
}

fn coordinate_planes(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let mut v = vec![0.0; n];
            let mut w = vec![0.0; n];
            v[i] = 1.0;
            w[j] = 1.0;
            out.push((v.clone(), w.clone()));
            for k in 0..n {
                if k != i && k != j {
                    let mut vk = v.clone();
                    vk[k] = 1.0;
                    out.push((vk, w.clone()));
                }
            }
        }
    }
    out
}

/// Geodesics of length `radius` from `center` in the standard set of unit directions.
pub fn shoot(
    g: &MetricField,
    center: &[f64],
    radius: f64,
    rays: usize,
    step: f64,
) -> Result<Vec<GeodesicTrajectory>, GeometryError> {
    let frame = orthonormal_frame(g, center)?;
    directions(&frame, rays)
        .par_iter()
        .map(|d| integrate_geodesic(g, center, d, radius, step))
        .collect()
}

/// Empirical sup of sectional curvature over points reached by shooting to distance `radius`.
pub fn sup_sectional(
    g: &MetricField,
    center: &[f64],
    radius: f64,
    rays: usize,
    per_ray: usize,
    step: f64,
) -> Result<f64, GeometryError> {
    sup_sectional_on(g, center, &shoot(g, center, radius, rays, step)?, per_ray)
}

fn sup_sectional_on(
    g: &MetricField,
    center: &[f64],
    rays: &[GeodesicTrajectory],
    per_ray: usize,
) -> Result<f64, GeometryError> {
    let mut points = vec![center.to_vec()];
    for tr in rays {
        let stride = (tr.positions.len() / per_ray.max(1)).max(1);
        points.extend(tr.positions.iter().skip(stride).step_by(stride).cloned());
        points.push(tr.positions.last().unwrap().clone());
    }
    let planes = coordinate_planes(g.dim());
    let vals: Vec<Result<f64, GeometryError>> = points
        .par_iter()
        .map(|p| {
            let x = wrap(g, p);
            let riem = riemann(g, &x)?;
            let gm = g.metric_matrix(&x)?;
            let mut m = f64::NEG_INFINITY;
            for (v, w) in &planes {
                m = m.max(sectional_from(&riem, &gm, v, w)?);
            }
            Ok(m)
        })
        .collect();
    let mut sup = f64::NEG_INFINITY;
    for v in vals {
        sup = sup.max(v?);
    }
    Ok(sup)
}

fn chart_delta(g: &MetricField, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(g.periods())
        .map(|((x, y), p)| {
            let mut d = x - y;
            if let Some(p) = p {
                d -= p * (d / p).round();
            }
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Cubic Hermite position at time `t` on a uniformly sampled trajectory.
fn hermite(tr: &GeodesicTrajectory, t: f64) -> Vec<f64> {
    let last = tr.times.len() - 1;
    let mut i = tr.times.partition_point(|s| *s <= t).saturating_sub(1);
    if i >= last {
        i = last.saturating_sub(1);
    }
    if last == 0 {
        return tr.positions[0].clone();
    }
    let (t0, t1) = (tr.times[i], tr.times[i + 1]);
    let h = t1 - t0;
    let s = ((t - t0) / h).clamp(0.0, 1.0);
    let (h00, h10, h01, h11) = (
        2.0 * s.powi(3) - 3.0 * s * s + 1.0,
        s.powi(3) - 2.0 * s * s + s,
        -2.0 * s.powi(3) + 3.0 * s * s,
        s.powi(3) - s * s,
    );
    (0..tr.positions[i].len())
        .map(|a| {
            h00 * tr.positions[i][a]
                + h10 * h * tr.velocities[i][a]
                + h01 * tr.positions[i + 1][a]
                + h11 * h * tr.velocities[i + 1][a]
        })
        .collect()
}

fn golden_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let m = (a + b) / 2.0;
    [lo, hi, m]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap()
}

/// Local refinement of a near self-crossing around sample indices `(i, j)`; returns `(s, t, gap)`.
fn refine_crossing(
    g: &MetricField,
    tr: &GeodesicTrajectory,
    i: usize,
    j: usize,
) -> (f64, f64, f64) {
    let last = tr.times.len() - 1;
    let (slo, shi) = (tr.times[i.saturating_sub(1)], tr.times[(i + 1).min(last)]);
    let (tlo, thi) = (tr.times[j.saturating_sub(1)], tr.times[(j + 1).min(last)]);
    let dist = |s: f64, t: f64| chart_delta(g, &hermite(tr, s), &hermite(tr, t));
    let (mut s, mut t) = (tr.times[i], tr.times[j]);
    for _ in 0..8 {
        s = golden_min(slo, shi, |v| dist(v, t));
        t = golden_min(tlo, thi, |v| dist(s, v));
    }
    (s, t, dist(s, t))
}

/// Self-crossings of one trajectory with arc length at most `max_len`, as geodesic loop lengths.
pub fn trajectory_loops(
    g: &MetricField,
    tr: &GeodesicTrajectory,
    speed0: f64,
    max_len: f64,
    min_gap: usize,
) -> Vec<f64> {
    let n = tr.positions.len();
    let h = if n > 1 {
        tr.times[1] - tr.times[0]
    } else {
        return Vec::new();
    };
    let coord_speed: Vec<f64> = tr
        .velocities
        .iter()
        .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
        .collect();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + min_gap)..n {
            if tr.times[j] > max_len / speed0 {
                break;
            }
            let coarse = 2.0 * h * coord_speed[i].max(coord_speed[j]);
            let d = chart_delta(g, &tr.positions[i], &tr.positions[j]);
            if d < coarse {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut refined: Vec<(usize, usize)> = Vec::new();
    for &(_, i, j) in &candidates {
        if refined.len() >= 8 {
            break;
        }
        if refined
            .iter()
            .any(|&(a, b)| a.abs_diff(i) <= 3 && b.abs_diff(j) <= 3)
        {
            continue;
        }
        refined.push((i, j));
        let (s, t, gap) = refine_crossing(g, tr, i, j);
        if gap < LOOP_TOLERANCE && t - s >= min_gap as f64 * h * 0.5 {
            // Remaining closing gap measured in g.
            let gm = g
                .metric_matrix(&wrap(g, &hermite(tr, s)))
                .map(|m| m.symmetric_eigenvalues().max())
                .unwrap_or(1.0);
            out.push(speed0 * (t - s) - gap * gm.abs().sqrt());
        }
    }
    out
}

/// Shortest detected self-intersecting geodesic in the ball of radius `radius` (∞ if none); 2D charts only.
pub fn shortest_self_intersecting(
    g: &MetricField,
    center: &[f64],
    radius: f64,
    rays: usize,
    step: f64,
) -> Result<f64, GeometryError> {
    if g.dim() != 2 {
        return Err(GeometryError::Dimension(g.dim()));
    }
    Ok(shortest_loop_on(
        g,
        &shoot(g, center, radius, rays, step)?,
        radius,
    ))
}

fn shortest_loop_on(g: &MetricField, rays: &[GeodesicTrajectory], radius: f64) -> f64 {
    rays.par_iter()
        .map(|tr| {
            trajectory_loops(g, tr, 1.0, radius, 20)
                .into_iter()
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadiusBounds {
    pub inj: f64,
    /// `½ min{π/√δ, ℓ/2, r/2}`.
    pub conv: f64,
    /// `min{π/(2√δ), ι/2, r}` when an injectivity lower bound `ι` on the ball is supplied.
    pub conv_whitehead: Option<f64>,
}

fn pi_over_sqrt(delta: f64) -> f64 {
    if delta <= 0.0 {
        f64::INFINITY
    } else {
        PI / delta.sqrt()
    }
}

pub fn radius_bounds(delta: f64, ell: f64, r: f64, iota: Option<f64>) -> RadiusBounds {
    let conj = pi_over_sqrt(delta);
    RadiusBounds {
        inj: conj.min(ell / 2.0).min(r),
        conv: 0.5 * conj.min(ell / 2.0).min(r / 2.0),
        conv_whitehead: iota.map(|i| (conj / 2.0).min(i / 2.0).min(r)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusEstimate {
    pub center: Vec<f64>,
    pub delta: f64,
    /// `None` when no self-intersection was detected.
    pub ell: Option<f64>,
    pub radius: f64,
    pub inj: f64,
    pub conv: f64,
    /// The loop search is not exhaustive.
    pub heuristic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    pub rays: usize,
    pub per_ray: usize,
    pub step: f64,
}

impl Default for Resolution {
    fn default() -> Resolution {
        Resolution {
            rays: 96,
            per_ray: 16,
            step: 0.01,
        }
    }
}

pub fn inj_conv_estimate(
    g: &MetricField,
    center: &[f64],
    radius: f64,
    res: Resolution,
) -> Result<RadiusEstimate, GeometryError> {
    let rays = shoot(g, center, radius, res.rays, res.step)?;
    let delta = sup_sectional_on(g, center, &rays, res.per_ray)?;
    let ell = if g.dim() == 2 {
        shortest_loop_on(g, &rays, radius)
    } else {
        f64::INFINITY
    };
    let b = radius_bounds(delta, ell, radius, None);
    Ok(RadiusEstimate {
        center: center.to_vec(),
        delta,
        ell: ell.is_finite().then_some(ell),
        radius,
        inj: b.inj,
        conv: b.conv,
        heuristic: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowupReport {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub speeds: Vec<f64>,
    pub blowup_time: f64,
    /// `C = sup(w − w(0))` over one period.
    pub c: f64,
    pub bound: f64,
    pub reached_threshold: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlowupConfig {
    /// Largest increment of `γ₂` per step.
    pub step: f64,
    pub threshold: f64,
    pub max_steps: usize,
    pub sup_grid: usize,
}

impl Default for BlowupConfig {
    fn default() -> BlowupConfig {
        BlowupConfig {
            step: 1e-3,
            threshold: BLOWUP_SPEED,
            max_steps: 10_000_000,
            sup_grid: 100_000,
        }
    }
}

/// Integrates `γ″ = (½ − w′(γ))γ′²`, `γ(0) = 0`, `γ′(0) = 1` until `γ′` exceeds the threshold.
///
/// The time step is `step/γ′`, so each step advances `γ` by about `step`.
pub fn lorentz_blowup(w: &Expr, config: BlowupConfig) -> Result<BlowupReport, GeometryError> {
    let dw = w.differentiate(0);
    let w0 = w.eval(&[0.0])?;
    let mut c = f64::NEG_INFINITY;
    for m in 0..=config.sup_grid {
        c = c.max(w.eval(&[m as f64 / config.sup_grid as f64])? - w0);
    }
    let rhs = |y: f64, p: f64| -> Result<f64, GeometryError> { Ok((0.5 - dw.eval(&[y])?) * p * p) };
    let (mut y, mut p) = (0.0f64, 1.0f64);
    let mut t = 0.0f64;
    let mut comp = 0.0f64;
    let mut out_t = vec![0.0];
    let mut out_y = vec![0.0];
    let mut out_p = vec![1.0];
    let mut reached = false;
    let record_every = 64;
    for m in 0..config.max_steps {
        let h = config.step / p.max(1.0);
        let k1y = p;
        let k1p = rhs(y, p)?;
        let k2y = p + h / 2.0 * k1p;
        let k2p = rhs(y + h / 2.0 * k1y, k2y)?;
        let k3y = p + h / 2.0 * k2p;
        let k3p = rhs(y + h / 2.0 * k2y, k3y)?;
        let k4y = p + h * k3p;
        let k4p = rhs(y + h * k3y, k4y)?;
        let ny = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        let np = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        if !np.is_finite() || !(np > 0.0) {
            break;
        }
        // Compensated time accumulation.
        let adj = h - comp;
        let nt = t + adj;
        comp = (nt - t) - adj;
        t = nt;
        y = ny;
        p = np;
        if m % record_every == 0 {
            out_t.push(t);
            out_y.push(y);
            out_p.push(p);
        }
        if p > config.threshold {
            reached = true;
            break;
        }
    }
    out_t.push(t);
    out_y.push(y);
    out_p.push(p);
    let bound = 2.0 * c.exp();
    Ok(BlowupReport {
        times: out_t,
        positions: out_y,
        speeds: out_p,
        blowup_time: t,
        c,
        bound,
        reached_threshold: reached,
        passed: reached && t < bound,
    })
}

/// `Σ_m a_m sin(2πm y + φ_m)`, `m = 1..=3`, with `Σ|a_m| ≤ amplitude`.
pub fn random_periodic(rng: &mut impl rand::Rng, amplitude: f64) -> Expr {
    let total = amplitude * rng.gen_range(0.2..1.0);
    let weights: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm: f64 = weights
        .iter()
        .map(|w: &f64| w.abs())
        .sum::<f64>()
        .max(1e-12);
    let mut w = Expr::zero();
    for (m, a) in weights.iter().enumerate() {
        let phase = rng.gen_range(0.0..2.0 * PI);
        let arg = Expr::var(0)
            .scale(2.0 * PI * (m + 1) as f64)
            .add(&Expr::constant(phase));
        w = w.add(&arg.sin().scale(total * a / norm));
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> MetricField {
        MetricField::parse(
            &["x", "y"],
            &[&["1", "0"], &["0", "1"]],
            vec![1, 1],
            vec![(-50.0, 50.0); 2],
        )
        .unwrap()
    }

    fn half_plane() -> MetricField {
        MetricField::parse(
            &["x", "y"],
            &[&["1/(y*y)", "0"], &["0", "1/(y*y)"]],
            vec![1, 1],
            vec![(-50.0, 50.0), (1e-3, 1e3)],
        )
        .unwrap()
    }

    fn sphere() -> MetricField {
        let f = "4/(1 + x^2 + y^2)^2";
        MetricField::parse(
            &["x", "y"],
            &[&[f, "0"], &["0", f]],
            vec![1, 1],
            vec![(-60.0, 60.0); 2],
        )
        .unwrap()
    }

    #[test]
    fn flat_line() {
        let tr = integrate_geodesic(&flat(), &[0.0, 0.0], &[0.6, 0.8], 10.0, 0.01).unwrap();
        let end = tr.positions.last().unwrap();
        assert!((end[0] - 6.0).abs() < 1e-10 * 10.0 && (end[1] - 8.0).abs() < 1e-10 * 10.0);
    }

    #[test]
    fn great_circle_and_vertical_ray() {
        let s = sphere();
        // The unit circle is the equator; coordinate speed 1 there.
        let tr = integrate_geodesic(&s, &[1.0, 0.0], &[0.0, 1.0], 2.0 * PI, 0.01).unwrap();
        let end = tr.positions.last().unwrap();
        assert!((end[0] - 1.0).abs() < 1e-5 && end[1].abs() < 1e-5);
        assert!(tr.speed_drift(&s).unwrap() < 1e-6);
        let tr = integrate_geodesic(&half_plane(), &[0.0, 1.0], &[0.0, 1.0], 3.0, 0.01).unwrap();
        for (t, p) in tr.times.iter().zip(&tr.positions) {
            assert!(p[0].abs() < 1e-12 && (p[1] - t.exp()).abs() < 1e-6 * t.exp());
        }
    }

    #[test]
    fn bound_formulas() {
        let b = radius_bounds(1.0, PI, 10.0, None);
        assert!((b.inj - PI / 2.0).abs() < 1e-15);
        let b = radius_bounds(0.0, 2.0 * PI, 10.0, None);
        assert_eq!(b.inj, PI);
        assert_eq!(b.conv, PI / 2.0);
        let flat = radius_bounds(0.0, f64::INFINITY, 10.0, Some(10.0));
        assert_eq!(flat.inj, 10.0);
        assert_eq!(flat.conv_whitehead, Some(5.0));
    }

    #[test]
    fn closed_form_blowup() {
        let w = crate::expr::Scope::new(["y"]).parse("0").unwrap();
        let r = lorentz_blowup(&w, BlowupConfig::default()).unwrap();
        assert!(r.passed);
        assert!(
            r.blowup_time < 2.0 && r.blowup_time > 2.0 - 1e-3,
            "{}",
            r.blowup_time
        );
    }
}
