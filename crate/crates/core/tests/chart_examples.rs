use flatzoom::geometry::curvature::christoffels;
use flatzoom::geometry::{wick_rotation, MetricField};

fn gamma(g: &MetricField, x: &[f64], c: usize, a: usize, b: usize) -> f64 {
    let n = g.dim();
    christoffels(g, x).unwrap()[c * n * n + a * n + b]
}

fn null_line_metric(u: &str) -> MetricField {
    let comps = [
        ["0".to_string(), u.to_string(), "0".to_string()],
        [u.to_string(), format!("x*({u})"), "0".to_string()],
        ["0".to_string(), "0".to_string(), u.to_string()],
    ];
    let rows: Vec<Vec<&str>> = comps
        .iter()
        .map(|r| r.iter().map(String::as_str).collect())
        .collect();
    let rows: Vec<&[&str]> = rows.iter().map(|r| r.as_slice()).collect();
    MetricField::parse(
        &["x", "y", "z"],
        &rows,
        vec![-1, 1, 1],
        vec![(-1.0, 1.0), (-3.0, 3.0), (-1.0, 1.0)],
    )
    .unwrap()
}

#[test]
fn null_line_geodesic_coefficient() {
    let g = null_line_metric("1");
    for y in [-2.0, 0.0, 0.7] {
        let x = [0.0, y, 0.0];
        assert!((gamma(&g, &x, 1, 1, 1) + 0.5).abs() < 1e-14);
        assert!(gamma(&g, &x, 0, 1, 1).abs() < 1e-14);
        assert!(gamma(&g, &x, 2, 1, 1).abs() < 1e-14);
    }
}

#[test]
fn null_line_coefficient_after_rescaling() {
    // u = e^{w(y)} with w = 0.3 sin y; on the line the coefficient is ∂_y u / u − ½ = w′ − ½.
    let g = null_line_metric("exp(0.3*sin(y) + 0.2*z^2)");
    for y in [-1.3, 0.0, 2.1] {
        let x = [0.0, y, 0.0];
        let expect = 0.3 * f64::cos(y) - 0.5;
        assert!((gamma(&g, &x, 1, 1, 1) - expect).abs() < 1e-13);
        assert!(gamma(&g, &x, 0, 1, 1).abs() < 1e-13);
        assert!(gamma(&g, &x, 2, 1, 1).abs() < 1e-13);
    }
}

fn bilinear(m: &nalgebra::DMatrix<f64>, v: &[f64], w: &[f64]) -> f64 {
    (0..v.len())
        .flat_map(|i| (0..w.len()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)] * v[i] * w[j])
        .sum()
}

#[test]
fn wick_rotation_flips_gradient_and_keeps_level_sets() {
    let g = MetricField::parse(
        &["t", "x"],
        &[&["-(1 + 0.2*x^2)", "0.1*t"], &["0.1*t", "1 + 0.3*t^2"]],
        vec![-1, 1],
        vec![(-1.0, 1.0), (-1.0, 1.0)],
    )
    .unwrap();
    let time = g.scope().parse("t + 0.1*x").unwrap();
    let w = wick_rotation(&g, &time, 20, 5).unwrap();
    for p in [[0.2, -0.4], [-0.6, 0.5], [0.0, 0.0]] {
        let gm = g.metric_matrix(&p).unwrap();
        let wm = w.metric_matrix(&p).unwrap();
        let dt = [1.0, 0.1];
        let grad: Vec<f64> = {
            let inv = gm.clone().try_inverse().unwrap();
            (0..2)
                .map(|a| (0..2).map(|b| inv[(a, b)] * dt[b]).sum())
                .collect()
        };
        let tangent = [-0.1, 1.0];
        assert!((bilinear(&wm, &grad, &grad) + bilinear(&gm, &grad, &grad)).abs() < 1e-12);
        assert!(
            (bilinear(&wm, &tangent, &tangent) - bilinear(&gm, &tangent, &tangent)).abs() < 1e-12
        );
        assert!(wm.symmetric_eigenvalues().iter().all(|e| *e > 0.0));
    }
}
