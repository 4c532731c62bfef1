//! Property tests for the crate's structural invariants.

use proptest::prelude::*;

use fedforget::data::{inject_backdoor, make_blobs, partition_iid, select_class, BackdoorSpec};
use fedforget::federation::aggregate;
use fedforget::nn::{forward, xavier_init, ModelSpec, ParamVector};
use fedforget::unlearning::debias_label;
use fedforget::Matrix;

fn simplex_row(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter_map("degenerate", |v| {
        let sum: f64 = v.iter().sum();
        (sum > 1e-6).then(|| v.into_iter().map(|x| x / sum).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Partitions are exact covers with near-equal sizes.
    #[test]
    fn partition_law(classes in 2usize..5, per_class in 2usize..12, clients in 1usize..6, seed in 0u64..500) {
        let ds = make_blobs(classes, per_class, 3, 0.1, seed).unwrap();
        prop_assume!(clients <= ds.len());
        let p = partition_iid(&ds, clients, seed).unwrap();
        let mut all: Vec<usize> = (0..clients).flat_map(|k| p.client(k).to_vec()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
        let sizes = p.sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    // Union of class selections is the whole index range.
    #[test]
    fn class_selection_partitions(classes in 2usize..6, per_class in 1usize..10, seed in 0u64..100) {
        let ds = make_blobs(classes, per_class, 4, 0.2, seed).unwrap();
        let mut all: Vec<usize> = (0..classes).flat_map(|c| select_class(&ds, c)).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    // Poisoning changes exactly the chosen rows, and only at the trigger
    // coordinates and the label.
    #[test]
    fn backdoor_touches_only_poisoned_rows(
        seed in 0u64..200,
        fraction in 0.2f64..=1.0,
        offset in 1usize..3,
    ) {
        let ds = make_blobs(3, 8, 6, 0.2, seed).unwrap();
        let spec = BackdoorSpec::new(vec![1, 4], 1.0, offset, fraction).unwrap();
        let targets = select_class(&ds, 0);
        let (poisoned, chosen) = inject_backdoor(&ds, &targets, &spec, seed).unwrap();
        let expected = ((fraction * targets.len() as f64).round() as usize).min(targets.len());
        prop_assert_eq!(chosen.len(), expected);
        for i in 0..ds.len() {
            if chosen.contains(&i) {
                for d in 0..ds.feature_dim() {
                    if spec.trigger_coords.contains(&d) {
                        prop_assert_eq!(poisoned.features().get(i, d), 1.0);
                    } else {
                        prop_assert_eq!(poisoned.features().get(i, d), ds.features().get(i, d));
                    }
                }
                prop_assert_ne!(poisoned.class_of(i), ds.class_of(i));
            } else {
                prop_assert_eq!(poisoned.features().row(i), ds.features().row(i));
                prop_assert_eq!(poisoned.labels().row(i), ds.labels().row(i));
            }
        }
    }

    // Softmax rows always land on the simplex.
    #[test]
    fn forward_rows_are_stochastic(seed in 0u64..300, rows in 1usize..6) {
        let spec = ModelSpec::new(vec![4, 6, 5]).unwrap();
        let params = xavier_init(&spec, seed);
        let mut features = Matrix::zeros(rows, 4);
        let mut s = seed;
        for r in 0..rows {
            for c in 0..4 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                features.set(r, c, (s >> 11) as f64 / (1u64 << 53) as f64);
            }
        }
        let probs = forward(&params, &spec, &features).unwrap();
        for r in 0..rows {
            let sum: f64 = probs.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    // Debias keeps simplex inputs on the simplex for every sigma, is the
    // identity at sigma = 1, and strictly shrinks a positive target
    // coordinate for sigma < 1.
    #[test]
    fn debias_simplex_laws(
        y_hat in simplex_row(6),
        target in 0usize..6,
        sigma in 0.0f64..=1.0,
    ) {
        let mut y = vec![0.0; 6];
        y[target] = 1.0;
        let scaled_mass: f64 = y_hat
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == target { sigma * p } else { p })
            .sum();
        prop_assume!(scaled_mass > 0.0);
        let out = debias_label(&y_hat, &y, sigma).unwrap();
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|&v| v >= 0.0));
        if sigma == 1.0 {
            for (a, b) in out.iter().zip(&y_hat) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        } else if y_hat[target] > 1e-12 {
            prop_assert!(out[target] < y_hat[target]);
        }
    }

    // Aggregation is affine-equivariant and stays inside the coordinatewise
    // convex hull of the client parameters.
    #[test]
    fn aggregation_affine_and_hull(seed in 0u64..200, a in -2.0f64..2.0, b in -1.0f64..1.0) {
        let spec = ModelSpec::new(vec![3, 4, 2]).unwrap();
        let clients: Vec<ParamVector> = (0..3).map(|i| xavier_init(&spec, seed + i)).collect();
        let weights = vec![0.5, 0.3, 0.2];
        let agg = aggregate(&clients, &weights).unwrap();

        let shifted: Vec<ParamVector> = clients
            .iter()
            .map(|p| {
                ParamVector::new(
                    p.values().iter().map(|v| a * v + b).collect(),
                    p.shapes().to_vec(),
                )
                .unwrap()
            })
            .collect();
        let agg_shifted = aggregate(&shifted, &weights).unwrap();
        for (s, v) in agg_shifted.values().iter().zip(agg.values()) {
            prop_assert!((s - (a * v + b)).abs() < 1e-9);
        }

        for i in 0..agg.len() {
            let lo = clients.iter().map(|p| p.values()[i]).fold(f64::INFINITY, f64::min);
            let hi = clients.iter().map(|p| p.values()[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg.values()[i] >= lo - 1e-12 && agg.values()[i] <= hi + 1e-12);
        }
    }
}
