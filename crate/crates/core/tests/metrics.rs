use std::collections::BTreeMap;

use hgomics::metrics::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// AUROC as the fraction of (positive, negative) pairs ordered correctly.
fn pairwise_auroc(scores: &[f64], pos: &[bool]) -> f64 {
    let (mut good, mut pairs) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                good += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    good / pairs
}

#[test]
fn random_scores_give_auroc_near_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    let pos: Vec<bool> = (0..1000).map(|_| rng.random::<bool>()).collect();
    let a = auroc(&scores, &pos).unwrap();
    assert!((a - 0.5).abs() < 0.05, "{a}");
}

#[test]
fn three_class_weighted_scores_match_per_class_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let n = rng.random_range(5..60);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let m = multiclass_metrics(&pred, &truth, 3).unwrap();
        let (mut wf1, mut wp, mut wr) = (0.0, 0.0, 0.0);
        for c in 0..3 {
            let tp = (0..n).filter(|&i| pred[i] == c && truth[i] == c).count() as f64;
            let npred = pred.iter().filter(|&&p| p == c).count() as f64;
            let nt = truth.iter().filter(|&&t| t == c).count() as f64;
            let p = if npred > 0.0 { tp / npred } else { 0.0 };
            let r = if nt > 0.0 { tp / nt } else { 0.0 };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            assert!((m.per_class_f1[c] - f).abs() < 1e-12);
            wf1 += nt / n as f64 * f;
            wp += nt / n as f64 * p;
            wr += nt / n as f64 * r;
        }
        assert!((m.weighted_f1 - wf1).abs() < 1e-12);
        assert!((m.weighted_precision - wp).abs() < 1e-12);
        assert!((m.weighted_recall - wr).abs() < 1e-12);
        assert_eq!(m.micro_f1, m.accuracy);
    }
}

#[test]
fn aggregate_matches_hand_computed_mean_and_std() {
    let folds: Vec<BTreeMap<String, Option<f64>>> = [Some(0.9), Some(0.7), None, Some(0.8)]
        .iter()
        .map(|v| BTreeMap::from([("auroc".to_string(), *v), ("accuracy".to_string(), Some(0.5))]))
        .collect();
    let s = aggregate(&folds);
    assert!((s["auroc"].mean - 0.8).abs() < 1e-12);
    assert!((s["auroc"].std - 0.1).abs() < 1e-12);
    assert_eq!(s["auroc"].undefined_folds, 1);
    assert_eq!(s["accuracy"].std, 0.0);
    assert_eq!(s.keys().collect::<Vec<_>>(), vec!["accuracy", "auroc"]);
}

proptest! {
    #[test]
    fn auroc_equals_pairwise_definition(data in prop::collection::vec((0u8..6, any::<bool>()), 2..40)) {
        let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 / 5.0).collect();
        let pos: Vec<bool> = data.iter().map(|d| d.1).collect();
        match auroc(&scores, &pos) {
            Some(a) => prop_assert!((a - pairwise_auroc(&scores, &pos)).abs() < 1e-12),
            None => prop_assert!(pos.iter().all(|&p| p) || pos.iter().all(|&p| !p)),
        }
    }

    #[test]
    fn binary_ratios_stay_in_unit_interval(data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..50), thr in 0.0f64..1.0) {
        let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
        let pos: Vec<bool> = data.iter().map(|d| d.1).collect();
        let b = binary_metrics(&scores, &pos, thr).unwrap();
        for v in [b.accuracy, b.ppv, b.npv, b.sensitivity, b.specificity] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn micro_f1_is_accuracy(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = multiclass_metrics(&pred, &truth, 4).unwrap();
        prop_assert_eq!(m.micro_f1, m.accuracy);
        prop_assert!(m.weighted_f1 >= 0.0 && m.weighted_f1 <= 1.0);
    }
}
