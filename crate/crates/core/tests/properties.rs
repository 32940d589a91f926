use proptest::prelude::*;
use upmi::forest::{fit_forest, LabeledRow, RfConfig};
use upmi::gmm::{class_split, synthetic_count};
use upmi::meta::build_meta_vector;
use upmi::metrics::roc_auc;
use upmi::stats::ks_two_sample;

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..6, n).prop_map(|v| v.into_iter().map(|s| s as f64 / 5.0).collect()),
            prop::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn auc_matches_pair_count((scores, mut labels) in labeled_scores()) {
        labels[0] = 0;
        labels[1] = 1;
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi == 1 && yj == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        prop_assert!((auc - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn meta_vector_identities_hold(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let m = build_meta_vector(a, b).unwrap();
        prop_assert!(m.satisfies_identities());
        prop_assert_eq!(m.p_max, a.max(b));
        prop_assert_eq!(m.p_min, a.min(b));
        prop_assert_eq!(m.d, (a - b).abs());
    }

    #[test]
    fn synthetic_split_is_balanced(n_real in 0usize..500, pct in 0u32..400) {
        let total = synthetic_count(n_real, pct);
        let (c0, c1) = class_split(total);
        prop_assert_eq!(c0 + c1, total);
        prop_assert!(c1 >= c0 && c1 - c0 <= 1);
        let exact = n_real as f64 * pct as f64 / 100.0;
        prop_assert!((total as f64 - exact).abs() <= 0.5);
    }

    #[test]
    fn ks_is_symmetric(x in prop::collection::vec(-5.0f64..5.0, 1..30), y in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let a = ks_two_sample(&x, &y).unwrap();
        let b = ks_two_sample(&y, &x).unwrap();
        prop_assert_eq!(a.d, b.d);
        prop_assert_eq!(a.p, b.p);
        prop_assert!((0.0..=1.0).contains(&a.p));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forest_ignores_row_order(seed in any::<u64>(), rot in 0usize..30) {
        let rows: Vec<LabeledRow> = (0..30)
            .map(|i| {
                let y = (i % 3 == 0) as u8;
                let x = vec![(i * 7 % 11) as f64 + y as f64 * 3.0, (i * 5 % 13) as f64];
                LabeledRow { key: format!("real:{i:03}"), x, y }
            })
            .collect();
        let mut shuffled = rows.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        let config = RfConfig { n_trees: 15, ..RfConfig::meta_learner() };
        let a = fit_forest(&rows, &[], &config, seed).unwrap();
        let b = fit_forest(&shuffled, &[], &config, seed).unwrap();
        for r in &rows {
            prop_assert_eq!(a.predict_proba(&r.x), b.predict_proba(&r.x));
        }
    }
}
