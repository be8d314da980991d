//! End-to-end acceptance checks, one line of output per criterion.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flatzoom::alpinist::{naive_counterexample, Alpinist};
use flatzoom::checks::{conformal_identity_suite, SuiteConfig};
use flatzoom::constructor::Layout;
use flatzoom::constructor::{
    flatzoom_all, solve_od, verify_od, LedgerConfig, Monomial, OdProblem, Polynomial, RayFn,
    ZoomTarget,
};
use flatzoom::expr::{Expr, Scope};
use flatzoom::geometry::{inner_and_norm, riemann, sectional_curvature, MetricField};
use flatzoom::io::{read_json, ConstructFile, RadiiFile};
use flatzoom::radii::{
    inj_conv_estimate, lorentz_blowup, random_periodic, BlowupConfig, Resolution,
};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn within_time(elapsed: Duration, limit_secs: u64, detail: &mut String, passed: &mut bool) {
    if elapsed > Duration::from_secs(limit_secs) {
        *passed = false;
        detail.push_str(&format!(
            "; runtime {:.1}s exceeds {limit_secs}s",
            elapsed.as_secs_f64()
        ));
    }
}

fn conformal_identity() -> Outcome {
    let t = Instant::now();
    let cfg = SuiteConfig::default();
    let r = conformal_identity_suite(&cfg).expect("suite runs");
    let elapsed = t.elapsed();
    let mut passed = r.max_riemann_error <= 1e-7 && r.max_sff_error <= 1e-7 && r.samples == 70 * 50;
    let mut detail = format!(
        "{} samples, max relative error riemann {:.2e}, sff {:.2e}, {:.1}s",
        r.samples,
        r.max_riemann_error,
        r.max_sff_error,
        elapsed.as_secs_f64()
    );
    within_time(elapsed, 60, &mut detail, &mut passed);
    Outcome { passed, detail }
}

fn scaling_identity() -> Outcome {
    let r = conformal_identity_suite(&SuiteConfig::default()).expect("suite runs");
    let passed = r.max_scaling_error.iter().all(|e| *e <= 1e-12);
    Outcome {
        passed,
        detail: format!(
            "max relative error k=0 {:.2e}, k=1 {:.2e}",
            r.max_scaling_error[0], r.max_scaling_error[1]
        ),
    }
}

fn constant_curvature() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hyp = MetricField::parse(
        &["x", "y"],
        &[&["1/y^2", "0"], &["0", "1/y^2"]],
        vec![1, 1],
        vec![(-5.0, 5.0), (0.1, 10.0)],
    )
    .unwrap();
    let sphere = MetricField::parse(
        &["t", "p"],
        &[&["1", "0"], &["0", "sin(t)^2"]],
        vec![1, 1],
        vec![(0.2, PI - 0.2), (-PI, PI)],
    )
    .unwrap();
    let mut hyp_err: f64 = 0.0;
    let mut sec_err: f64 = 0.0;
    for _ in 0..200 {
        let x = hyp.random_interior_point(&mut rng);
        let norm = inner_and_norm(&riemann(&hyp, &x).unwrap(), &hyp.metric_matrix(&x).unwrap())
            .unwrap()
            .1;
        hyp_err = hyp_err.max((norm - 2.0).abs());
        let s = sphere.random_interior_point(&mut rng);
        let sec = sectional_curvature(&sphere, &s, &[1.0, 0.3], &[-0.2, 1.0]).unwrap();
        sec_err = sec_err.max((sec - 1.0).abs());
    }
    Outcome {
        passed: hyp_err <= 1e-9 && sec_err <= 1e-9,
        detail: format!("hyperbolic |Riem| error {hyp_err:.2e}, sphere sec error {sec_err:.2e}"),
    }
}

fn alpinist_boundedness() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (a, k) in [(1.0, 1usize), (2.0, 2), (0.5, 3)] {
        let al = Alpinist::new(a, k).unwrap();
        let rep = al.g_bound(200, 4096);
        let (s50, s200) = (rep.sup_up_to(50), rep.sup_up_to(200));
        let flat = (1..=200)
            .map(|n| al.endpoint_residual(n, k + 2))
            .fold(0.0, f64::max);
        passed &= s200 <= 1.001 * s50 && flat <= 1e-6;
        parts.push(format!(
            "(a={a},k={k}) sup ratio {:.6} flatness {flat:.1e}",
            s200 / s50
        ));
    }
    let v3 = naive_counterexample(1_000).unwrap();
    let v4 = naive_counterexample(10_000).unwrap();
    let v5 = naive_counterexample(100_000).unwrap();
    let oracle = (1e4f64).ln().powi(2) / std::f64::consts::E;
    passed &= v5 / v3 >= 2.0 && v4 >= 31.0 && v4 >= oracle;
    parts.push(format!("naive ratio {:.2}, value(1e4) {v4:.2}", v5 / v3));
    Outcome {
        passed,
        detail: parts.join("; "),
    }
}

fn od_end_to_end() -> Outcome {
    let t = Instant::now();
    let horizon = 12;
    let eps: Vec<f64> = (0..horizon + 5).map(|i| (-(i as f64)).exp()).collect();
    let p = Polynomial {
        terms: vec![Monomial {
            coeff: 1.0,
            powers: vec![0, 2],
        }],
    };
    let problem = OdProblem::new(eps, vec![1.0], vec![p], Some(Expr::zero()), horizon).unwrap();
    let config = LedgerConfig {
        verify_samples: 1024,
        ..LedgerConfig::default()
    };
    let sol = solve_od(&problem, None, &config).unwrap();
    let rep = verify_od(&problem, &sol, sol.mu, 1024).unwrap();
    let elapsed = t.elapsed();

    // Direct grid check of the inequality, positivity and plateaus from the profile values.
    let mut margin = f64::INFINITY;
    let mut plateau_drift: f64 = 0.0;
    let mut min_u = f64::INFINITY;
    for i in 0..=horizon {
        let u_i = sol.u.value(i as f64);
        for s in 0..1024 {
            let x = i as f64 + s as f64 / 1023.0;
            let d = sol.u.derivatives_at(x, 1);
            let allowed = (-(i as f64)).exp() * d[0].exp();
            margin = margin.min(1.0 - d[1] * d[1] / allowed);
            min_u = min_u.min(d[0]);
            if x <= i as f64 + 0.5 {
                plateau_drift = plateau_drift.max((d[0] - u_i).abs()).max(d[1].abs());
            }
        }
    }
    let start_ok = sol.u.value(0.0) == sol.mu;
    let mut passed = rep.passed && margin > 0.0 && min_u > 0.0 && plateau_drift == 0.0 && start_ok;
    let mut detail = format!(
        "mu {}, min margin {margin:.3e}, min u {min_u:.3}, plateau drift {plateau_drift:e}, {:.1}s",
        sol.mu,
        elapsed.as_secs_f64()
    );
    within_time(elapsed, 30, &mut detail, &mut passed);
    Outcome { passed, detail }
}

fn flagship() -> Outcome {
    let t = Instant::now();
    let file: ConstructFile = read_json(&data("flagship.json")).unwrap();
    let g = file.metric.build().unwrap();
    let target = &file.targets[0];
    let eps: RayFn = Arc::new(|_| 0.01);
    let targets = vec![ZoomTarget {
        functional: target.functional.build(&g).unwrap(),
        certificate: target.certificate.build(g.scope()).unwrap(),
        eps,
    }];
    let layout = Layout::collar(file.exhaustion().unwrap(), file.collar_fraction).unwrap();
    let config = LedgerConfig {
        horizon: file.horizon,
        ..LedgerConfig::default()
    };
    let (u, report) = flatzoom_all(&targets, None, &layout, &file.lift(), &config).unwrap();
    let elapsed = t.elapsed();

    // Gauss curvature of e^{2(u + sin r²)}δ from the radial Laplacian u'' + u'/r.
    let mut worst: f64 = 0.0;
    let mut at = 0.0;
    let samples = 200_000;
    for s in 0..=samples {
        let r = 1.0 + 11.0 * s as f64 / samples as f64;
        let d = u.derivatives_at(r, 2);
        let lap_u = d[2] + d[1] / r;
        let lap_f = 4.0 * (r * r).cos() - 4.0 * r * r * (r * r).sin();
        let k = -(-2.0 * (d[0] + (r * r).sin())).exp() * (lap_u + lap_f);
        if k.abs() > worst {
            worst = k.abs();
            at = r;
        }
    }
    let intermediate_ok = report.verification.intermediate.iter().all(|a| a.passed)
        && report.verification.intermediate.len() >= file.horizon;
    let mut passed = worst < 0.01 && intermediate_ok && report.passed;
    let mut detail = format!(
        "max |K| {worst:.3e} at r = {at:.3}, intermediate inequality on {} blocks: {}, {:.1}s",
        report.verification.intermediate.len(),
        if intermediate_ok { "ok" } else { "fails" },
        elapsed.as_secs_f64()
    );
    within_time(elapsed, 300, &mut detail, &mut passed);
    Outcome { passed, detail }
}

fn radius_bounds() -> Outcome {
    let res = Resolution::default();
    let cyl: RadiiFile = read_json(&data("radii_cylinder.json")).unwrap();
    let sph: RadiiFile = read_json(&data("radii_sphere.json")).unwrap();
    let c = inj_conv_estimate(&cyl.metric.build().unwrap(), &cyl.center, cyl.radius, res).unwrap();
    let s = inj_conv_estimate(&sph.metric.build().unwrap(), &sph.center, sph.radius, res).unwrap();
    let flat = MetricField::parse(
        &["x", "y"],
        &[&["1", "0"], &["0", "1"]],
        vec![1, 1],
        vec![(-50.0, 50.0), (-50.0, 50.0)],
    )
    .unwrap();
    let hyp = MetricField::parse(
        &["x", "y"],
        &[&["1/y^2", "0"], &["0", "1/y^2"]],
        vec![1, 1],
        vec![(-200.0, 200.0), (1e-3, 1e3)],
    )
    .unwrap();
    let f = inj_conv_estimate(&flat, &[0.0, 0.0], 5.0, res).unwrap();
    let h = inj_conv_estimate(&hyp, &[0.0, 1.0], 2.0, res).unwrap();

    let in_range = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
    let mut passed = in_range(c.inj, 0.95 * PI, PI)
        && in_range(c.conv, 0.95 * PI / 2.0, PI / 2.0)
        && in_range(s.inj, 0.95 * PI, PI);
    // True radii: cylinder (π, π/2), sphere (π, π/2), flat and hyperbolic plane (∞, ∞).
    passed &= c.inj <= PI && c.conv <= PI / 2.0 && s.inj <= PI && s.conv <= PI / 2.0;
    passed &= [f.inj, f.conv, h.inj, h.conv]
        .iter()
        .all(|v| *v > 0.0 && !v.is_nan());
    Outcome {
        passed,
        detail: format!(
            "cylinder inj {:.4} conv {:.4}; sphere inj {:.4} conv {:.4}; flat inj {:.3} conv {:.3}; hyperbolic inj {:.3} conv {:.3}",
            c.inj, c.conv, s.inj, s.conv, f.inj, f.conv, h.inj, h.conv
        ),
    }
}

fn lorentz() -> Outcome {
    let config = BlowupConfig::default();
    let zero = lorentz_blowup(&Expr::zero(), config).unwrap();
    let mut passed = zero.blowup_time >= 2.0 - 1e-3 && zero.blowup_time < 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scope = Scope::new(["y"]);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_shift = (zero.blowup_time
        - lorentz_blowup(
            &Expr::zero(),
            BlowupConfig {
                threshold: 1e9,
                ..config
            },
        )
        .unwrap()
        .blowup_time)
        .abs();
    for _ in 0..20 {
        let w = random_periodic(&mut rng, 0.5);
        let w0 = w.eval(&[0.0]).unwrap();
        let c = (0..=200_000)
            .map(|s| w.eval(&[s as f64 / 200_000.0]).unwrap() - w0)
            .fold(f64::NEG_INFINITY, f64::max);
        let amp = (0..=2000)
            .map(|s| w.eval(&[s as f64 / 2000.0]).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(
            amp <= 0.5 + 1e-12,
            "amplitude {amp} for {}",
            w.display(&scope)
        );
        let rep = lorentz_blowup(&w, config).unwrap();
        let early = lorentz_blowup(
            &w,
            BlowupConfig {
                threshold: 1e9,
                ..config
            },
        )
        .unwrap();
        worst_ratio = worst_ratio.max(rep.blowup_time / (2.0 * c.exp()));
        worst_shift = worst_shift.max((rep.blowup_time - early.blowup_time).abs());
        passed &= rep.reached_threshold && rep.blowup_time < 2.0 * c.exp();
    }
    passed &= worst_shift <= 1e-4;
    Outcome {
        passed,
        detail: format!("t*(w=0) = {:.6}, max t*/(2e^C) {worst_ratio:.4}, max threshold shift {worst_shift:.2e}", zero.blowup_time),
    }
}

fn determinism() -> Outcome {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_periodic(&mut rng, 0.5);
        let rep = lorentz_blowup(&w, BlowupConfig::default()).unwrap();
        let cyl: RadiiFile = read_json(&data("radii_cylinder.json")).unwrap();
        let est = inj_conv_estimate(
            &cyl.metric.build().unwrap(),
            &cyl.center,
            cyl.radius,
            Resolution::default(),
        )
        .unwrap();
        let suite = conformal_identity_suite(&SuiteConfig {
            metrics_2d: 3,
            metrics_3d: 2,
            points: 5,
            ..SuiteConfig::default()
        })
        .unwrap();
        let eps: Vec<f64> = (0..10).map(|i| (-(i as f64)).exp()).collect();
        let p = Polynomial {
            terms: vec![Monomial {
                coeff: 1.0,
                powers: vec![0, 2],
            }],
        };
        let problem = OdProblem::new(eps, vec![1.0], vec![p], None, 5).unwrap();
        let sol = solve_od(&problem, None, &LedgerConfig::default()).unwrap();
        let od = verify_od(&problem, &sol, sol.mu, 256).unwrap();
        serde_json::to_string(&serde_json::json!({
            "lorentz": [rep.blowup_time, rep.c],
            "radii": est,
            "suite": suite,
            "od": od,
            "ledger": sol.ledger,
        }))
        .unwrap()
    };
    let (a, b) = (run(), run());
    Outcome {
        passed: a == b,
        detail: format!("{} report bytes compared", a.len()),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("conformal identity suite", conformal_identity),
        ("norm scaling identity", scaling_identity),
        ("constant curvature oracles", constant_curvature),
        (
            "alpinist boundedness and naive divergence",
            alpinist_boundedness,
        ),
        ("differential inequality end to end", od_end_to_end),
        ("flagship flattening", flagship),
        ("radius bounds", radius_bounds),
        ("lorentzian blow-up", lorentz),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!(
            "criterion {} {}: {} ({})",
            i + 1,
            name,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
