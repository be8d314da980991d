use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use flatzoom::alpinist::{naive_counterexample, Alpinist};
use flatzoom::checks::{conformal_identity_suite, metric_identity_suite, SuiteConfig};
use flatzoom::constructor::{
    flatzoom_all, solve_od, verify_od, zoom_obligations, Layout, LedgerConfig, RayFn, ZoomTarget,
};
use flatzoom::expr::Scope;
use flatzoom::flatzoomer::{grid, verify_flatzoomer_bound};
use flatzoom::geometry::curvature::sectional_from;
use flatzoom::geometry::{inner_and_norm, riemann, ConformalFactor, ExprFactor};
use flatzoom::io::{
    read_json, ConstructFile, FlatzoomFile, LorentzFile, MetricFile, OdFile, RadiiFile,
};
use flatzoom::radii::{
    inj_conv_estimate, integrate_geodesic, lorentz_blowup, orthonormal_frame, random_periodic,
    BlowupConfig, Resolution,
};
use flatzoom::InputError;

#[derive(Parser)]
#[command(
    name = "flatzoom",
    version,
    about = "Conformal flattening demos and verification suites"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Clone)]
struct Common {
    /// Input JSON file.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory for the JSON report and CSV data.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Grid resolution (points, samples or cells, depending on the subcommand).
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Number of verified blocks.
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Tolerance override for the subcommand's main check.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// Curvature tensors of a metric file at seeded sample points.
    Curvature,
    /// Closed-form conformal transformation laws against direct recomputation.
    ConformalCheck,
    /// Uniform bounds for the climb family; `--naive` prints the divergent scaling instead.
    Alpinist {
        #[arg(long)]
        naive: bool,
    },
    /// Verify a certificate over a family of factors.
    Flatzoom,
    /// Build a conformal factor meeting every target on a radial chart.
    Construct,
    /// Solve a differential-inequality problem.
    OdSolve,
    /// Injectivity and convexity radius bounds.
    Radii,
    /// Blow-up of the lightlike geodesic.
    Lorentz,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Curvature => "curvature",
            Command::ConformalCheck => "conformal-check",
            Command::Alpinist { .. } => "alpinist",
            Command::Flatzoom => "flatzoom",
            Command::Construct => "construct",
            Command::OdSolve => "od-solve",
            Command::Radii => "radii",
            Command::Lorentz => "lorentz",
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("{0}")]
    Run(String),
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

#[derive(Serialize)]
struct Report {
    command: String,
    seed: u64,
    passed: bool,
    violations: Vec<String>,
    details: Value,
}

struct Outcome {
    violations: Vec<String>,
    details: Value,
    csv_header: Vec<String>,
    csv_rows: Vec<Vec<String>>,
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn need_input(c: &Common) -> Result<&Path, CliError> {
    c.input
        .as_deref()
        .ok_or_else(|| CliError::Input(InputError::Invalid("--input is required".into())))
}

fn check_config(c: &Common) -> Result<(), CliError> {
    if let Some(g) = c.grid {
        if g < 16 {
            return Err(InputError::Invalid(format!("--grid must be at least 16, got {g}")).into());
        }
    }
    if let Some(h) = c.horizon {
        if h < 2 {
            return Err(
                InputError::Invalid(format!("--horizon must be at least 2, got {h}")).into(),
            );
        }
    }
    Ok(())
}

fn curvature(c: &Common) -> Result<Outcome, CliError> {
    let file: MetricFile = read_json(need_input(c)?)?;
    let g = file.build()?;
    let n = g.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let points: Vec<Vec<f64>> = (0..c.grid.unwrap_or(16))
        .map(|_| g.random_interior_point(&mut rng))
        .collect();
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    let mut violations = Vec::new();
    for x in &points {
        let res = riemann(&g, x).and_then(|r| {
            let gm = g.metric_matrix(x)?;
            let norm = inner_and_norm(&r, &gm)?.1;
            let sec = if n >= 2 {
                let mut v = vec![0.0; n];
                let mut w = vec![0.0; n];
                v[0] = 1.0;
                w[1] = 1.0;
                sectional_from(&r, &gm, &v, &w)?
            } else {
                0.0
            };
            Ok((norm, sec, r.comps))
        });
        match res {
            Ok((norm, sec, comps)) => {
                let mut row: Vec<String> = x.iter().map(|v| num(*v)).collect();
                row.push(num(norm));
                row.push(num(sec));
                rows.push(row);
                samples.push(json!({"point": x, "riemann_norm": norm, "sectional_01": sec, "riemann": comps}));
            }
            Err(e) => violations.push(format!("evaluation failed at {x:?}: {e}")),
        }
    }
    let mut header: Vec<String> = g.scope().names().iter().map(|s| s.to_string()).collect();
    header.push("riemann_norm".into());
    header.push("sectional_01".into());
    Ok(Outcome {
        violations,
        details: json!({"dimension": n, "samples": samples}),
        csv_header: header,
        csv_rows: rows,
    })
}

fn conformal_check(c: &Common) -> Result<Outcome, CliError> {
    let mut cfg = SuiteConfig {
        seed: c.seed,
        ..SuiteConfig::default()
    };
    if let Some(t) = c.tol {
        cfg.identity_tol = t;
    }
    if let Some(gp) = c.grid {
        cfg.points = gp;
    }
    let report = match &c.input {
        Some(p) => {
            let g = read_json::<MetricFile>(p)?.build()?;
            metric_identity_suite(&g, 20, &cfg).map_err(run_err)?
        }
        None => conformal_identity_suite(&cfg).map_err(run_err)?,
    };
    let violations = report
        .failures
        .iter()
        .map(|f| {
            format!(
                "{:?} dim {} metric {} at {:?}: error {:e}",
                f.identity, f.dim, f.metric, f.point, f.error
            )
        })
        .collect();
    let rows = vec![
        vec![
            "riemann".into(),
            num(report.max_riemann_error),
            num(cfg.identity_tol),
        ],
        vec![
            "second_fundamental_form".into(),
            num(report.max_sff_error),
            num(cfg.identity_tol),
        ],
        vec![
            "scaling_order_0".into(),
            num(report.max_scaling_error[0]),
            num(cfg.scaling_tol),
        ],
        vec![
            "scaling_order_1".into(),
            num(report.max_scaling_error[1]),
            num(cfg.scaling_tol),
        ],
    ];
    Ok(Outcome {
        violations,
        details: serde_json::to_value(&report).map_err(run_err)?,
        csv_header: vec!["identity".into(), "max_error".into(), "tolerance".into()],
        csv_rows: rows,
    })
}

fn alpinist(c: &Common, naive: bool) -> Result<Outcome, CliError> {
    if naive {
        let mut rows = Vec::new();
        let mut curve = Vec::new();
        for e in 2..=5 {
            for m in [1u64, 2, 5] {
                let n = m * 10u64.pow(e);
                let v = naive_counterexample(n).map_err(run_err)?;
                rows.push(vec![n.to_string(), num(v)]);
                curve.push(json!({"n": n, "value": v}));
            }
        }
        let v3 = naive_counterexample(1_000).map_err(run_err)?;
        let v4 = naive_counterexample(10_000).map_err(run_err)?;
        let v5 = naive_counterexample(100_000).map_err(run_err)?;
        let details = json!({"curve": curve, "ratio_1e5_1e3": v5 / v3, "value_1e4": v4, "divergent": v5 / v3 >= 2.0});
        return Ok(Outcome {
            violations: Vec::new(),
            details,
            csv_header: vec!["n".into(), "value".into()],
            csv_rows: rows,
        });
    }
    let grid_n = c.grid.unwrap_or(4096);
    let tol = c.tol.unwrap_or(1e-6);
    let mut rows = Vec::new();
    let mut sweeps = Vec::new();
    let mut violations = Vec::new();
    for (a, k) in [(1.0, 1usize), (2.0, 2), (0.5, 3)] {
        let al = Alpinist::new(a, k).map_err(run_err)?;
        let rep = al.g_bound(200, grid_n);
        let (s50, s200) = (rep.sup_up_to(50), rep.sup_up_to(200));
        let flat = (1..=200)
            .map(|n| al.endpoint_residual(n, k + 2))
            .fold(0.0, f64::max);
        if s200 > 1.001 * s50 {
            violations.push(format!(
                "a={a} k={k}: sup over n<=200 {s200:e} exceeds 1.001 x sup over n<=50 {s50:e}"
            ));
        }
        if flat > tol {
            violations.push(format!(
                "a={a} k={k}: endpoint residual {flat:e} above {tol:e}"
            ));
        }
        for r in &rep.per_n {
            rows.push(vec![
                a.to_string(),
                k.to_string(),
                r.n.to_string(),
                num(r.sup),
            ]);
        }
        sweeps.push(json!({"a": a, "k": k, "c": al.c(), "sup_50": s50, "sup_200": s200, "endpoint_residual": flat}));
    }
    Ok(Outcome {
        violations,
        details: json!({"grid": grid_n, "sweeps": sweeps}),
        csv_header: vec!["a".into(), "k".into(), "n".into(), "g_sup".into()],
        csv_rows: rows,
    })
}

fn flatzoom_cmd(c: &Common) -> Result<Outcome, CliError> {
    let file: FlatzoomFile = read_json(need_input(c)?)?;
    let g = file.metric.build()?;
    let phi = file.functional.build(&g)?;
    let bound = file.certificate.build(g.scope())?;
    let mut family = Vec::new();
    for (i, src) in file.family.iter().enumerate() {
        let e = g.scope().parse(src).map_err(|source| InputError::Parse {
            context: format!("family member {i}"),
            source,
        })?;
        family.push(ExprFactor::new(e, g.dim()));
    }
    let refs: Vec<&dyn ConformalFactor> =
        family.iter().map(|f| f as &dyn ConformalFactor).collect();
    let points = match &file.points {
        Some(p) => p.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            (0..c.grid.unwrap_or(64))
                .map(|_| g.random_interior_point(&mut rng))
                .collect()
        }
    };
    let rep = verify_flatzoomer_bound(&phi, &bound, &refs, &points).map_err(run_err)?;
    let violations = rep
        .violations
        .iter()
        .map(|v| {
            format!(
                "member {} at {:?}: {:e} > {:e}",
                v.member, v.point, v.value, v.bound
            )
        })
        .collect();
    let rows = rep
        .violations
        .iter()
        .map(|v| {
            vec![
                v.member.to_string(),
                format!("{:?}", v.point),
                num(v.value),
                num(v.bound),
            ]
        })
        .collect();
    Ok(Outcome {
        violations,
        details: serde_json::to_value(&rep).map_err(run_err)?,
        csv_header: vec![
            "member".into(),
            "point".into(),
            "value".into(),
            "bound".into(),
        ],
        csv_rows: rows,
    })
}

fn construct(c: &Common) -> Result<Outcome, CliError> {
    let file: ConstructFile = read_json(need_input(c)?)?;
    let g = file.metric.build()?;
    let horizon = c.horizon.unwrap_or(file.horizon);
    let r_scope = Scope::new(["r"]);
    let mut targets = Vec::new();
    for (i, t) in file.targets.iter().enumerate() {
        let phi = t.functional.build(&g)?;
        let cert = t.certificate.build(g.scope())?;
        let eps = r_scope.parse(&t.eps).map_err(|source| InputError::Parse {
            context: format!("target {i} eps"),
            source,
        })?;
        let eps: RayFn = Arc::new(move |r| eps.eval(&[r]).unwrap_or(f64::NAN));
        targets.push(ZoomTarget {
            functional: phi,
            certificate: cert,
            eps,
        });
    }
    let w: Option<RayFn> = match &file.w {
        Some(src) => {
            let e = r_scope.parse(src).map_err(|source| InputError::Parse {
                context: "w".into(),
                source,
            })?;
            Some(Arc::new(move |r| e.eval(&[r]).unwrap_or(f64::INFINITY)))
        }
        None => None,
    };
    let mut exhaustion = file.exhaustion()?;
    if exhaustion.len() < horizon + 5 {
        if file.radii.is_some() {
            return Err(InputError::Invalid(format!(
                "horizon {horizon} needs at least {} radii",
                horizon + 5
            ))
            .into());
        }
        exhaustion = flatzoom::flatzoomer::ExhaustionModel::unit(horizon + 5);
    }
    let layout = Layout::collar(exhaustion, file.collar_fraction).map_err(run_err)?;
    let lift = file.lift();
    let mut config = LedgerConfig {
        horizon,
        ..LedgerConfig::default()
    };
    if let Some(gs) = c.grid {
        config.verify_samples = gs;
    }
    let (u, report) =
        flatzoom_all(&targets, w.as_ref(), &layout, &lift, &config).map_err(run_err)?;
    let mut violations: Vec<String> = report.ledger_failures.clone();
    for a in report
        .verification
        .intermediate
        .iter()
        .filter(|a| !a.passed)
    {
        violations.push(format!(
            "intermediate inequality fails on block {} at r = {}: {:e} > {:e}",
            a.block, a.witness, a.sup, a.limit
        ));
    }
    for o in report.verification.obligations.iter().filter(|o| !o.passed) {
        violations.push(format!(
            "target {:?} fails on block {} at r = {}: {:e} >= {:e}",
            o.obligation, o.block, o.witness, o.sup, o.limit
        ));
    }
    for r in &report.verification.floor_violations {
        violations.push(format!("u is not above the floor at r = {r}"));
    }
    if report.verification.junction_residual > 1e-6 {
        violations.push(format!(
            "junction residual {:e}",
            report.verification.junction_residual
        ));
    }
    let obligations = zoom_obligations(&targets, &lift);
    let end = layout.exhaustion.radius(horizon as isize);
    let mut rows = Vec::new();
    for r in grid(0.0, end, 64 * (horizon + 1)) {
        let d = u.derivatives_at(r, 2);
        let mut row = vec![num(r), num(d[0]), num(d[1]), num(d[2])];
        for ob in &obligations {
            row.push(num((ob.evaluate)(&u, r).unwrap_or(f64::NAN)));
        }
        rows.push(row);
    }
    let mut header = vec!["r".into(), "u".into(), "du".into(), "d2u".into()];
    header.extend((0..obligations.len()).map(|i| format!("phi_{i}")));
    let details = json!({"plateaus": u.plateaus(), "heights": u.heights(), "report": report});
    Ok(Outcome {
        violations,
        details,
        csv_header: header,
        csv_rows: rows,
    })
}

fn od_solve(c: &Common) -> Result<Outcome, CliError> {
    let mut file: OdFile = read_json(need_input(c)?)?;
    if let Some(h) = c.horizon {
        file.horizon = h;
    }
    let problem = file.build()?;
    let samples = c.grid.unwrap_or(1024);
    let config = LedgerConfig {
        verify_samples: samples,
        ..LedgerConfig::default()
    };
    let sol = solve_od(&problem, None, &config).map_err(run_err)?;
    let rep = verify_od(&problem, &sol, sol.mu, samples).map_err(run_err)?;
    let mut violations = Vec::new();
    if !rep.start_ok {
        violations.push("u(0) differs from the requested start".into());
    }
    if !rep.plateaus_constant {
        violations.push("u is not constant on some [i, i+1/2]".into());
    }
    if !rep.above_floor {
        violations.push("u is not above w".into());
    }
    for b in rep.blocks.iter().filter(|b| b.margin.is_nan() || b.margin <= 0.0) {
        violations.push(format!(
            "block {} margin {:e} at x = {}",
            b.block, b.margin, b.witness
        ));
    }
    for a in rep.construction.intermediate.iter().filter(|a| !a.passed) {
        violations.push(format!(
            "intermediate inequality fails on block {} at x = {}",
            a.block, a.witness
        ));
    }
    let mut rows = Vec::new();
    for x in grid(
        0.0,
        (problem.horizon + 1) as f64,
        64 * (problem.horizon + 1),
    ) {
        let i = (x.floor() as usize).min(problem.horizon);
        let p = problem.poly_at(i);
        let d = sol.u.derivatives_at(x, p.nvars().max(2) - 1);
        let lhs = p.eval(&d);
        let rhs = problem.eps_at(i) * (problem.alpha_at(i) * d[0]).exp();
        rows.push(vec![num(x), num(d[0]), num(d[1]), num(lhs), num(rhs)]);
    }
    let details =
        json!({"mu": sol.mu, "plateaus": sol.u.plateaus(), "ledger": sol.ledger, "report": rep});
    Ok(Outcome {
        violations,
        details,
        csv_header: vec![
            "x".into(),
            "u".into(),
            "du".into(),
            "p".into(),
            "eps_exp_alpha_u".into(),
        ],
        csv_rows: rows,
    })
}

fn radii_cmd(c: &Common) -> Result<Outcome, CliError> {
    let file: RadiiFile = read_json(need_input(c)?)?;
    let g = file.metric.build()?;
    let mut res = Resolution::default();
    if let Some(gs) = c.grid {
        res.rays = gs;
    }
    let est = inj_conv_estimate(&g, &file.center, file.radius, res).map_err(run_err)?;
    let mut violations = Vec::new();
    if let Some(t) = file.true_inj {
        if est.inj > t {
            violations.push(format!(
                "injectivity bound {} exceeds the true value {t}",
                est.inj
            ));
        }
    }
    if let Some(t) = file.true_conv {
        if est.conv > t {
            violations.push(format!(
                "convexity bound {} exceeds the true value {t}",
                est.conv
            ));
        }
    }
    let frame = orthonormal_frame(&g, &file.center).map_err(run_err)?;
    let tr =
        integrate_geodesic(&g, &file.center, &frame[0], file.radius, res.step).map_err(run_err)?;
    let n = g.dim();
    let rows = tr
        .times
        .iter()
        .zip(&tr.positions)
        .zip(&tr.velocities)
        .map(|((t, p), v)| {
            std::iter::once(num(*t))
                .chain(p.iter().map(|x| num(*x)))
                .chain(v.iter().map(|x| num(*x)))
                .collect()
        })
        .collect();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|a| format!("x{a}")));
    header.extend((0..n).map(|a| format!("v{a}")));
    Ok(Outcome {
        violations,
        details: serde_json::to_value(&est).map_err(run_err)?,
        csv_header: header,
        csv_rows: rows,
    })
}

fn lorentz(c: &Common) -> Result<Outcome, CliError> {
    let scope = Scope::new(["y"]);
    let mut family = Vec::new();
    match &c.input {
        Some(p) => {
            let f: LorentzFile = read_json(p)?;
            family.push(scope.parse(&f.w).map_err(|source| InputError::Parse {
                context: "w".into(),
                source,
            })?);
        }
        None => {
            family.push(flatzoom::expr::Expr::zero());
            let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
            for _ in 0..20 {
                family.push(random_periodic(&mut rng, 0.5));
            }
        }
    }
    let mut config = BlowupConfig::default();
    if let Some(gs) = c.grid {
        config.sup_grid = gs;
    }
    let tol = c.tol.unwrap_or(1e-4);
    let mut violations = Vec::new();
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for (i, w) in family.iter().enumerate() {
        let rep = lorentz_blowup(w, config).map_err(run_err)?;
        let early = lorentz_blowup(
            w,
            BlowupConfig {
                threshold: 1e9,
                ..config
            },
        )
        .map_err(run_err)?;
        let shift = (rep.blowup_time - early.blowup_time).abs();
        if !rep.passed {
            violations.push(format!(
                "w {i}: t* = {} not below 2e^C = {}",
                rep.blowup_time, rep.bound
            ));
        }
        if shift > tol {
            violations.push(format!("w {i}: threshold shift {shift:e} above {tol:e}"));
        }
        if i == 0 {
            for ((t, y), p) in rep.times.iter().zip(&rep.positions).zip(&rep.speeds) {
                rows.push(vec![num(*t), num(*y), num(*p)]);
            }
        }
        runs.push(json!({
            "w": w.display(&scope).to_string(),
            "blowup_time": rep.blowup_time,
            "c": rep.c,
            "bound": rep.bound,
            "threshold_shift": shift,
            "passed": rep.passed,
        }));
    }
    Ok(Outcome {
        violations,
        details: json!({"runs": runs}),
        csv_header: vec!["t".into(), "gamma".into(), "dgamma".into()],
        csv_rows: rows,
    })
}

fn write_outputs(
    out: &Path,
    name: &str,
    report: &Report,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| run_err(format!("{}: {e}", out.display())))?;
    let mut text = serde_json::to_string_pretty(report).map_err(run_err)?;
    text.push('\n');
    let json_path = out.join(format!("{name}.json"));
    std::fs::write(&json_path, text)
        .map_err(|e| run_err(format!("{}: {e}", json_path.display())))?;
    let csv_path = out.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| run_err(format!("{}: {e}", csv_path.display())))?;
    w.write_record(header).map_err(run_err)?;
    for r in rows {
        w.write_record(r).map_err(run_err)?;
    }
    w.flush().map_err(run_err)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, CliError> {
    let c = &cli.common;
    check_config(c)?;
    let outcome = match &cli.command {
        Command::Curvature => curvature(c)?,
        Command::ConformalCheck => conformal_check(c)?,
        Command::Alpinist { naive } => alpinist(c, *naive)?,
        Command::Flatzoom => flatzoom_cmd(c)?,
        Command::Construct => construct(c)?,
        Command::OdSolve => od_solve(c)?,
        Command::Radii => radii_cmd(c)?,
        Command::Lorentz => lorentz(c)?,
    };
    let name = cli.command.name();
    let report = Report {
        command: name.to_string(),
        seed: c.seed,
        passed: outcome.violations.is_empty(),
        violations: outcome.violations,
        details: outcome.details,
    };
    write_outputs(
        &c.out,
        name,
        &report,
        &outcome.csv_header,
        &outcome.csv_rows,
    )?;
    for v in &report.violations {
        eprintln!("violation: {v}");
    }
    println!("{name}: {}", if report.passed { "pass" } else { "FAIL" });
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
