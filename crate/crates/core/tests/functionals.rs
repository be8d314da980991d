use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use flatzoom::checks::{random_factor, random_metric};
use flatzoom::flatzoomer::{combine, make_curvature_functional, make_sff_functional, Combine};
use flatzoom::geometry::ExprFactor;

#[test]
fn sum_bound_controls_each_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let g = random_metric(3, &mut rng).unwrap();
        let parts = vec![
            make_curvature_functional(g.clone(), g.clone(), 0).unwrap(),
            make_curvature_functional(g.clone(), g.clone(), 1).unwrap(),
            make_sff_functional(g.clone(), g.clone(), 2, 0).unwrap(),
        ];
        let total = combine(Combine::Sum, parts.clone());
        let u = ExprFactor::new(random_factor(3, &mut rng), 3);
        for _ in 0..5 {
            let x = g.random_interior_point(&mut rng);
            let eps = total.eval(&u, &x).unwrap();
            let vals: Vec<f64> = parts.iter().map(|p| p.eval(&u, &x).unwrap()).collect();
            assert!(vals.iter().all(|v| *v <= eps * (1.0 + 1e-12)));
            assert!((vals.iter().sum::<f64>() - eps).abs() <= 1e-12 * eps.max(1.0));
        }
    }
}
