mod common;

use common::{enumerate_empty, enumerate_success, exact_success, monte_carlo_success, ratio, to_f64};
use proptest::prelude::*;
use replica_access::occupancy::{
    build_policy_table, optimal_replicas, prob_exactly_n_empty, prob_success, prob_success_recursive, PolicyTable,
    SuccessParams,
};

fn params(n: u32, m: u32, g: f64, k: u32) -> SuccessParams {
    SuccessParams::new(n, m, g, k).unwrap()
}

#[test]
fn success_matches_enumeration() {
    for m in 1..=5 {
        for n in 1..=4 {
            for k in 1..=m.min(3) {
                for g in [0.0, 0.3] {
                    let want = enumerate_success(n, m, k, g);
                    let got = prob_success(&params(n, m, g, k)).unwrap();
                    assert!((got - want).abs() < 1e-12, "N={n} M={m} K={k} g={g}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn empty_count_matches_enumeration() {
    for m in 2..=6 {
        for n in 2..=4 {
            for k in 1..=m.min(3) {
                let hist = enumerate_empty(n - 1, m, k);
                for (e, want) in hist.iter().enumerate() {
                    let got = prob_exactly_n_empty(e as u32, &params(n, m, 0.0, k)).unwrap();
                    assert!((got - want).abs() < 1e-12, "n={e} N={n} M={m} K={k}");
                }
            }
        }
    }
}

#[test]
fn both_routes_match_exact_rationals() {
    let g = ratio(1, 5);
    for m in [6u32, 11, 20] {
        for n in [2u32, 3, 7, 12] {
            for k in 1..=m.min(5) {
                let want = to_f64(&exact_success(n, m, k, &g));
                let p = params(n, m, 0.2, k);
                assert!((prob_success_recursive(&p) - want).abs() < 1e-12, "recursion N={n} M={m} K={k}");
                if let Ok(v) = prob_success(&p) {
                    assert!((v - want).abs() < 1e-9, "inclusion-exclusion N={n} M={m} K={k}");
                }
            }
        }
    }
}

#[test]
fn success_agrees_with_monte_carlo() {
    for k in 1..=3 {
        let (p, se) = monte_carlo_success(6, 10, k, 0.2, 200_000, 17 + u64::from(k));
        let want = prob_success(&params(6, 10, 0.2, k)).unwrap();
        assert!((p - want).abs() <= 3.0 * se, "K={k}: {p} vs {want} (se {se})");
    }
}

#[test]
fn table_entry_examples() {
    let t = build_policy_table(4, 0.0, 8).unwrap();
    assert_eq!(t.replicas_for(2), 2);
    let single = build_policy_table(1, 0.3, 6).unwrap();
    assert!(single.entries().iter().all(|e| e.replicas == 1));
    let text = t.to_json();
    assert_eq!(PolicyTable::from_json_for(&text, 4, 0.0).unwrap(), t);
    assert!(PolicyTable::from_json_for(&text, 4, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn success_is_a_probability(n in 1u32..40, m in 1u32..40, k in 1u32..40, g in 0.0f64..0.99) {
        prop_assume!(k <= m);
        let p = prob_success_recursive(&params(n, m, g, k));
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn success_falls_with_erasures(n in 1u32..30, m in 1u32..30, k in 1u32..30, g in 0.0f64..0.9, dg in 0.001f64..0.09) {
        prop_assume!(k <= m);
        let a = prob_success_recursive(&params(n, m, g, k));
        let b = prob_success_recursive(&params(n, m, g + dg, k));
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn success_falls_with_crowding(n in 1u32..30, m in 1u32..30, k in 1u32..30, g in 0.0f64..0.9) {
        prop_assume!(k <= m);
        let a = prob_success_recursive(&params(n, m, g, k));
        let b = prob_success_recursive(&params(n + 1, m, g, k));
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn empty_count_is_normalised(n in 1u32..9, m in 1u32..13, k in 1u32..4) {
        prop_assume!(k <= m);
        let p = params(n, m, 0.0, k);
        let total: f64 = (0..=m).map(|e| prob_exactly_n_empty(e, &p).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn optimum_beats_every_replica_count(n in 1u32..25, m in 1u32..16, g in 0.0f64..0.9) {
        let best = optimal_replicas(n, m, g).unwrap();
        for k in 1..=m {
            let p = prob_success_recursive(&params(n, m, g, k));
            prop_assert!(p <= best.success_prob + 1e-14);
            if k < best.replicas {
                prop_assert!(p < best.success_prob);
            }
        }
    }
}
