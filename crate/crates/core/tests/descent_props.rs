mod common;

use common::*;
use maxweight::descent::{
    beta_bound, frank_wolfe_step, greedy_direct_step, run_sequence, DescentState, UpdateRule,
};
use maxweight::oracle::{brute_argmin, minimize_over_hull, OracleOptions};
use maxweight::{diameter, ConvexFunctionSpec};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(1000)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn greedy_step_matches_brute_force(
        d in action_set(),
        entries in prop::collection::vec(-1.0..1.0f64, 16),
        c in prop::collection::vec(-1.0..1.0f64, 4),
        raw in raw_weights(),
        beta in 0.01..1.0f64,
    ) {
        let n = d.dim();
        let f = quadratic(psd(n, &entries, 0.0), c[..n].to_vec());
        let z = hull_point(&d, &raw);
        let state = DescentState::new(z.clone(), beta).unwrap();
        let chosen = greedy_direct_step(&f, &state, &d).unwrap();
        let (expected, _) = brute_argmin(|x| f.value(&mix(&z, x, beta)), &d).unwrap();
        prop_assert_eq!(chosen, expected);
    }

    #[test]
    fn frank_wolfe_step_attains_the_linear_minimum(
        d in action_set(),
        entries in prop::collection::vec(-1.0..1.0f64, 16),
        c in prop::collection::vec(-1.0..1.0f64, 4),
        raw in raw_weights(),
    ) {
        let n = d.dim();
        let f = quadratic(psd(n, &entries, 0.0), c[..n].to_vec());
        let z = hull_point(&d, &raw);
        let state = DescentState::new(z.clone(), 0.5).unwrap();
        let chosen = frank_wolfe_step(&f, &state, &d).unwrap();
        let grad = f.subgradient(&z);
        let (expected, best) = brute_argmin(|x| dot(&grad, x), &d).unwrap();
        prop_assert_eq!(chosen, expected);
        let scores: Vec<f64> = d.iter().map(|x| dot(&grad, x)).collect();
        prop_assert!((dot(&grad, d.point(chosen)) - best).abs() <= 1e-12);
        prop_assert!(scores.iter().all(|s| *s >= best));
    }

    #[test]
    fn linear_objectives_give_the_same_action_under_both_rules(
        d in action_set(),
        c in prop::collection::vec(-1.0..1.0f64, 4),
        raw in raw_weights(),
        beta in 0.01..1.0f64,
    ) {
        let n = d.dim();
        let f = ConvexFunctionSpec::linear(c[..n].to_vec(), 0.3);
        let z = hull_point(&d, &raw);
        let state = DescentState::new(z.clone(), beta).unwrap();
        let direct = greedy_direct_step(&f, &state, &d).unwrap();
        let fw = frank_wolfe_step(&f, &state, &d).unwrap();
        let scores: Vec<f64> = d.iter().map(|x| dot(&c[..n], x)).collect();
        let (_, best, second) = best_two(&scores);
        if second - best > 1e-9 {
            prop_assert_eq!(direct, fw);
        } else {
            // Near-ties may break differently after rounding; both must be optimal.
            prop_assert!(scores[direct] - best <= 1e-9 && scores[fw] - best <= 1e-9);
        }
    }

    #[test]
    fn some_action_is_no_worse_than_any_hull_point(
        d in action_set(),
        w in prop::collection::vec(-5.0..5.0f64, 4),
        raw in raw_weights(),
    ) {
        let y = hull_point(&d, &raw);
        let w = &w[..d.dim()];
        let best = d.iter().map(|x| dot(w, x) - dot(w, &y)).fold(f64::INFINITY, f64::min);
        prop_assert!(best <= 1e-12, "{best}");
    }

    #[test]
    fn hull_points_lie_within_the_diameter(
        d in action_set(),
        r1 in raw_weights(),
        r2 in raw_weights(),
    ) {
        let z = hull_point(&d, &r1);
        let y = hull_point(&d, &r2);
        let dist = z.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist <= diameter(&d) + 1e-12);
    }

    #[test]
    fn iterates_stay_convex_combinations(
        d in action_set(),
        entries in prop::collection::vec(-1.0..1.0f64, 16),
        raw in raw_weights(),
        beta in 0.01..0.9f64,
        steps in 1usize..200,
    ) {
        let n = d.dim();
        let f = quadratic(psd(n, &entries, 0.1), vec![0.0; n]);
        let z1 = hull_point(&d, &raw);
        let mut state = DescentState::tracking(z1.clone(), beta, d.len()).unwrap();
        run_sequence(&f, &d, &mut state, steps, UpdateRule::Direct, 50).unwrap();
        let w = state.weights().unwrap();
        prop_assert!(w.initial >= 0.0 && w.actions.iter().all(|v| *v >= 0.0));
        prop_assert!((w.initial + w.actions.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let rebuilt = state.reconstruct(&z1, &d).unwrap();
        for (a, b) in rebuilt.iter().zip(&state.z) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn greedy_step_decreases_by_gamma_beta_epsilon(
        d in action_set(),
        entries in prop::collection::vec(-1.0..1.0f64, 16),
        c in prop::collection::vec(-2.0..2.0f64, 4),
        raw in raw_weights(),
        epsilon in 0.01..0.5f64,
        gamma in 0.1..0.9f64,
    ) {
        let n = d.dim();
        let f = quadratic(psd(n, &entries, 0.05), c[..n].to_vec());
        let z = hull_point(&d, &raw);
        let reference = minimize_over_hull(
            d.points(),
            |x| f.value(x),
            |x, out| f.subgradient_into(x, out),
            OracleOptions::with_tolerance(1e-10),
            None,
        )
        .unwrap();
        let gap = f.value(&z) - reference.value;
        prop_assume!(gap >= epsilon);
        let beta = beta_bound(epsilon, gamma, f.curvature(), diameter(&d)).unwrap();
        let state = DescentState::new(z.clone(), beta).unwrap();
        let x = greedy_direct_step(&f, &state, &d).unwrap();
        let after = f.value(&mix(&z, d.point(x), beta));
        prop_assert!(after <= f.value(&z) - gamma * beta * epsilon + 1e-12,
            "decrease {} < {}", f.value(&z) - after, gamma * beta * epsilon);
    }
}
