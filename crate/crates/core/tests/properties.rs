use std::collections::BTreeMap;

use mediator::dataset::VariableRoles;
use mediator::engine::derive_seed;
use mediator::engine::inference::{contrast, falsification_test, onestep, EffectEstimate};
use mediator::estimands::{apply_policy, effects_to_contrasts, EffectFamily, Policy};
use mediator::learners::{convex_weights, project_simplex};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn sum_of(rows: &[&EffectEstimate], field: fn(&EffectEstimate) -> f64) -> f64 {
    rows.iter().map(|r| field(r)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rt_rows_telescope_to_ate(
        has_moc in any::<bool>(),
        raw in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 12), 8),
    ) {
        let table = effects_to_contrasts(EffectFamily::RT, has_moc, false).unwrap();
        let mut estimates = BTreeMap::new();
        for (k, f) in table.functionals().into_iter().enumerate() {
            let v = Array1::from(raw[k % raw.len()].clone());
            let plugin = v.mean().unwrap() * 0.9;
            estimates.insert(f, onestep(&f.to_string(), plugin, &v).unwrap());
        }
        let rows = contrast(&estimates, &table).unwrap();
        let get = |n: &str| rows.iter().find(|r| r.name == n).unwrap();
        let parts: Vec<_> = ["P1", "P2", "P3", "P4", "R"].iter().map(|n| get(n)).collect();
        let ate = get("ATE");
        prop_assert!((sum_of(&parts, |r| r.estimate) - ate.estimate).abs() < 1e-10);
        prop_assert!((sum_of(&parts, |r| r.plugin) - ate.plugin).abs() < 1e-10);
        for i in 0..ate.eif.len() {
            let s: f64 = parts.iter().map(|r| r.eif[i]).sum();
            prop_assert!((s - ate.eif[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn onestep_centers_and_covers(v in prop::collection::vec(-100.0f64..100.0, 2..200)) {
        let e = onestep("x", 0.0, &Array1::from(v.clone())).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((e.estimate - mean).abs() < 1e-9);
        prop_assert!(e.eif.iter().sum::<f64>().abs() < 1e-7);
        prop_assert!(e.se >= 0.0);
        prop_assert!(e.covers(e.estimate));
        prop_assert!(((e.ci_high - e.estimate) - (e.estimate - e.ci_low)).abs() < 1e-9);
    }

    #[test]
    fn falsification_rejects_only_large_statistics(v in prop::collection::vec(-3.0f64..3.0, 3..100), shift in -2.0f64..2.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        let e = onestep("R", 0.0, &Array1::from(shifted)).unwrap();
        prop_assume!(e.se > 1e-9);
        let t = falsification_test(&e).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.p_value));
        prop_assert_eq!(t.reject, t.p_value < 0.05);
        prop_assert_eq!(t.reject, !e.covers(0.0));
    }

    #[test]
    fn simplex_projection_is_a_projection(v in prop::collection::vec(-10.0f64..10.0, 1..12)) {
        let p = project_simplex(&v);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let q = project_simplex(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn convex_weights_stay_on_simplex(
        cols in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 20), 2..5),
        y in prop::collection::vec(-3.0f64..3.0, 20),
    ) {
        let k = cols.len();
        let z = Array2::from_shape_fn((20, k), |(i, j)| cols[j][i]);
        let w = convex_weights(&z, &Array1::from(y), 0);
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn policies_are_pure(a in 0.0f64..6.0, w0 in -3.0f64..3.0, cutoff in 0.0f64..5.0, delta in -2.0f64..2.0, level in 0.0f64..5.0) {
        let roles = VariableRoles::new(&["w0"], "a", &[], &["m"], "y");
        let w = Array1::from(vec![w0]);
        let constant = Policy::constant(level).bind(&roles).unwrap();
        prop_assert_eq!(apply_policy(&constant, a, w.view()), level);
        let natural = Policy::Natural.bind(&roles).unwrap();
        prop_assert_eq!(apply_policy(&natural, a, w.view()), a);
        let shift = Policy::threshold_shift("w0", cutoff, delta, Some(0.0)).bind(&roles).unwrap();
        let d = apply_policy(&shift, a, w.view());
        prop_assert_eq!(d, apply_policy(&shift, a, w.view()));
        if w0 >= cutoff {
            prop_assert_eq!(d, (a + delta).max(0.0));
        } else {
            prop_assert_eq!(d, a);
        }
    }

    #[test]
    fn derived_seeds_are_deterministic(base in any::<u64>(), key in "[a-z]{1,8}") {
        prop_assert_eq!(derive_seed(base, &key), derive_seed(base, &key));
        prop_assert_ne!(derive_seed(base, &key), derive_seed(base, &format!("{key}!")));
    }
}
