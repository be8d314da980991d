use proptest::prelude::*;

use flatzoom::alpinist::Alpinist;
use flatzoom::constructor::{
    build_b_sequence, chain_rule_constant, chain_rule_slack, solve_od, verify_od, LedgerConfig,
    Monomial, OdProblem, PlateauInput, Polynomial,
};
use flatzoom::radii::radius_bounds;

fn polynomial(nvars: usize) -> impl Strategy<Value = Polynomial> {
    prop::collection::vec((-3.0..3.0f64, prop::collection::vec(0u32..4, nvars)), 1..5).prop_map(
        |ts| Polynomial {
            terms: ts
                .into_iter()
                .map(|(coeff, powers)| Monomial { coeff, powers })
                .collect(),
        },
    )
}

fn plateau_input() -> impl Strategy<Value = PlateauInput> {
    (
        1e-6..1.0f64,
        0.2..3.0f64,
        1.0..20.0f64,
        0.5..50.0f64,
        prop::option::of(-5.0..30.0f64),
        prop::option::of(-5.0..30.0f64),
        -3.0..3.0f64,
    )
        .prop_map(
            |(lambda_next, alpha_next, chain_rule, alpinist_bound, floor, previous, base)| {
                PlateauInput {
                    lambda_next,
                    alpha_next,
                    chain_rule,
                    alpinist_bound,
                    floor,
                    previous,
                    base,
                }
            },
        )
}

proptest! {
    #[test]
    fn radius_bounds_respect_their_inputs(delta in -2.0..4.0f64, ell in 0.1..20.0f64, r in 0.1..20.0f64) {
        let b = radius_bounds(delta, ell, r, None);
        prop_assert!(b.inj <= r && b.inj <= ell / 2.0);
        prop_assert!(b.conv <= b.inj / 2.0 + 1e-15);
        prop_assert!(b.conv <= r / 4.0 + 1e-15);
        if delta > 0.0 {
            prop_assert!(b.inj <= std::f64::consts::PI / delta.sqrt() + 1e-12);
        }
    }

    #[test]
    fn radius_bounds_are_monotone(delta in -2.0..4.0f64, dd in 0.0..2.0f64, ell in 0.1..20.0f64, dl in 0.0..5.0f64, r in 0.1..20.0f64) {
        let b = radius_bounds(delta, ell, r, None);
        let curved = radius_bounds(delta + dd, ell, r, None);
        let longer = radius_bounds(delta, ell + dl, r, None);
        prop_assert!(curved.inj <= b.inj && curved.conv <= b.conv);
        prop_assert!(longer.inj >= b.inj && longer.conv >= b.conv);
    }

    #[test]
    fn chain_rule_inequality_is_certified(len in 0.05..5.0f64, derivs in prop::collection::vec(-1e3..1e3f64, 1..5)) {
        let k = derivs.len() - 1;
        let l = chain_rule_constant(len, k);
        let lhs: f64 = 1.0 + derivs.iter().enumerate().map(|(j, d)| len.powi(-(j as i32)) * d.abs()).sum::<f64>();
        let rhs = l * (1.0 + derivs.iter().map(|d| d.abs()).sum::<f64>());
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        prop_assert!(chain_rule_slack(len, &derivs, l) >= -1e-9 * rhs);
    }

    #[test]
    fn plateau_search_is_minimal(input in plateau_input()) {
        let b = build_b_sequence(&input).expect("search terminates");
        prop_assert!(input.growth_holds(b));
        prop_assert!(input.floor.is_none_or(|w| w <= b));
        prop_assert!(input.previous.is_none_or(|p| p <= b));
        let steps = b - input.base;
        prop_assert!((steps - steps.round()).abs() < 1e-9 && steps > -1e-9);
        let before = b - 1.0;
        let admissible =
            input.growth_holds(before) && input.floor.is_none_or(|w| w <= before) && input.previous.is_none_or(|p| p <= before);
        prop_assert!(before < input.base - 1e-9 || !admissible);
    }

    #[test]
    fn stable_threshold_keeps_growth(input in plateau_input(), offsets in prop::collection::vec(0.0..60.0f64, 8)) {
        let t = input.stable_threshold().expect("threshold exists");
        prop_assert!(t >= build_b_sequence(&input).unwrap());
        for x in offsets {
            prop_assert!(input.growth_holds(t + x), "growth fails at {}", t + x);
        }
    }

    #[test]
    fn sign_normalization_dominates(p in polynomial(3), x in prop::collection::vec(-3.0..3.0f64, 3)) {
        let q = p.sign_normalized();
        prop_assert!(q.certified_nonnegative() || q.eval(&x) >= 1.0 - 1e-9);
        prop_assert!(q.eval(&x) >= p.eval(&x).abs() * (1.0 - 1e-12) - 1e-12);
        if p.certified_nonnegative() {
            prop_assert_eq!(q, p);
        }
    }

    #[test]
    fn product_evaluates_pointwise(p in polynomial(2), q in polynomial(2), x in prop::collection::vec(-2.0..2.0f64, 2)) {
        let direct = p.eval(&x) * q.eval(&x);
        let prod = p.mul(&q).eval(&x);
        let scale = 1.0 + p.terms.iter().chain(&q.terms).map(|t| t.coeff.abs()).sum::<f64>().powi(2) * 2f64.powi(12);
        prop_assert!((direct - prod).abs() <= 1e-12 * scale);
        prop_assert!(p.mul(&q).degree() <= p.degree() + q.degree());
    }

    #[test]
    fn alpinist_endpoints(a in 0.2..3.0f64, k in 0usize..4, n in 0u64..300) {
        let al = Alpinist::new(a, k).unwrap();
        let q = al.q(n);
        prop_assert!((0.0..=1.0).contains(&q));
        let ln_comp = al.ln_q_complement(n);
        prop_assert!(ln_comp.is_finite() && ln_comp <= 0.0);
        prop_assert!((q + ln_comp.exp() - 1.0).abs() <= 1e-15);
        prop_assert!(al.phi(n, 0.0, 0)[0].abs() <= 1e-10);
        prop_assert!((al.phi(n, 1.0, 0)[0] - n as f64).abs() <= 1e-10 * (1.0 + n as f64));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn od_solutions_keep_ledger_invariants(
        scale in 0.05..2.0f64,
        decay in 0.0..1.5f64,
        alpha in 0.5..2.0f64,
        second in 0.0..1.0f64,
        horizon in 2usize..5,
    ) {
        let eps: Vec<f64> = (0..horizon + 5).map(|i| scale * (-decay * i as f64).exp()).collect();
        let mut terms = vec![Monomial { coeff: 1.0, powers: vec![0, 2] }];
        if second > 0.5 {
            terms.push(Monomial { coeff: second, powers: vec![0, 0, 2] });
        }
        let problem = OdProblem::new(eps, vec![alpha], vec![Polynomial { terms }], None, horizon).unwrap();
        let config = LedgerConfig { horizon, verify_samples: 256, ..LedgerConfig::default() };
        let sol = solve_od(&problem, None, &config).unwrap();
        prop_assert!(sol.ledger.invariant_failures().is_empty(), "{:?}", sol.ledger.invariant_failures());
        let report = verify_od(&problem, &sol, sol.mu, 256).unwrap();
        prop_assert!(report.passed);
        prop_assert!(report.blocks.iter().all(|b| b.margin > 0.0));
    }
}
