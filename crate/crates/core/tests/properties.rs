use hgomics::autodiff::segment_softmax;
use hgomics::dataset::{make_splits, MinMaxScaler};
use hgomics::fusion::discovery_vector;
use hgomics::similarity::{build_feature_net, build_patient_net, kept_edge_count, pearson_abs};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #[test]
    fn segment_softmax_normalises_each_group(
        logits in prop::collection::vec(-50.0f64..50.0, 1..40),
        groups in 1usize..6,
    ) {
        let seg: Vec<usize> = (0..logits.len()).map(|i| (i * 7 + 3) % groups).collect();
        let a = segment_softmax(&logits, &seg);
        let mut sums = vec![0.0; groups];
        for (v, &s) in a.iter().zip(&seg) {
            prop_assert!(*v > 0.0 && *v <= 1.0);
            sums[s] += v;
        }
        for (g, s) in sums.iter().enumerate() {
            if seg.contains(&g) {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pearson_is_symmetric_and_bounded(x in prop::collection::vec(-10.0f64..10.0, 3..20), shift in -3.0f64..3.0) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.3 + (i as f64).sin() + shift).collect();
        if let (Ok(a), Ok(b)) = (pearson_abs(&x, &y), pearson_abs(&y, &x)) {
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn feature_net_keeps_the_configured_edge_count(m in matrix(12, 7), rate in 0.0f64..1.0) {
        let rows: Vec<usize> = (0..12).collect();
        let g = build_feature_net(&m, &rows, rate).unwrap();
        prop_assert_eq!(g.edges.len(), kept_edge_count(21, rate));
        for e in &g.edges {
            prop_assert!(e.u < e.v && e.weight >= 0.0 && e.weight <= 1.0);
        }
    }

    #[test]
    fn patient_net_respects_threshold(m in matrix(9, 5), thr in 0.0f64..1.0) {
        let rows: Vec<usize> = (0..9).collect();
        let g = build_patient_net(&m, &rows, thr).unwrap();
        for e in &g.edges {
            prop_assert!(e.weight >= thr);
        }
    }

    #[test]
    fn scaled_fit_rows_land_in_unit_interval(m in matrix(10, 4)) {
        let rows = [0, 2, 3, 5, 7, 9];
        let s = MinMaxScaler::fit(&m, &rows).transform(&m);
        for &r in &rows {
            for c in 0..4 {
                prop_assert!((0.0..=1.0).contains(&s[[r, c]]));
            }
        }
    }

    #[test]
    fn splits_partition_patients(counts in prop::collection::vec(10usize..30, 2..4), k in 2usize..6, seed in any::<u64>()) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
        let plan = make_splits(&labels, counts.len(), k, seed).unwrap();
        let mut seen = vec![0usize; labels.len()];
        for f in &plan.folds {
            for &r in &f.test {
                seen[r] += 1;
            }
            let mut all: Vec<usize> = f.train.iter().chain(&f.valid).chain(&f.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn discovery_vector_is_a_distribution(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 2..4)) {
        let probs: Vec<Vec<f64>> = raw.iter().map(|p| { let s: f64 = p.iter().sum(); p.iter().map(|v| v / s).collect() }).collect();
        let v = discovery_vector(&probs).unwrap();
        prop_assert_eq!(v.len(), 3usize.pow(probs.len() as u32));
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
