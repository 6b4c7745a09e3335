//! Binary and multiclass evaluation metrics and fold aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rank-based AUROC with half credit for tied scores; `None` when one class
/// is absent.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub ppv: f64,
    pub npv: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Names of ratios whose denominator was zero (reported as 0).
    pub undefined: Vec<String>,
}

/// `scores` are positive-class probabilities; predicted positive iff
/// `score >= threshold`.
pub fn binary_metrics(scores: &[f64], positive: &[bool], threshold: f64) -> Result<BinaryMetrics> {
    if scores.len() != positive.len() || scores.is_empty() {
        return Err(Error::shape("binary metrics need equally many non-zero scores and labels"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(positive) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let mut undefined = Vec::new();
    let mut take = |name: &str, (v, undef): (f64, bool)| {
        if undef {
            undefined.push(name.to_string());
        }
        v
    };
    let ppv = take("ppv", ratio(tp, tp + fp));
    let npv = take("npv", ratio(tn, tn + fn_));
    let sensitivity = take("sensitivity", ratio(tp, tp + fn_));
    let specificity = take("specificity", ratio(tn, tn + fp));
    Ok(BinaryMetrics {
        auroc: auroc(scores, positive),
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        ppv,
        npv,
        sensitivity,
        specificity,
        undefined,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub weighted_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub per_class_f1: Vec<f64>,
    /// Classes absent from both predictions and truth.
    pub absent_classes: Vec<usize>,
}

/// Row-wise argmax, ties to the lowest class.
pub fn argmax_rows(probs: &ndarray::Array2<f64>) -> Vec<usize> {
    probs
        .rows()
        .into_iter()
        .map(|r| r.iter().enumerate().fold(0, |best, (i, &v)| if v > r[best] { i } else { best }))
        .collect()
}

pub fn multiclass_metrics(pred: &[usize], truth: &[usize], classes: usize) -> Result<MulticlassMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape("multiclass metrics need equally many non-zero predictions and labels"));
    }
    if pred.iter().chain(truth).any(|&c| c >= classes) {
        return Err(Error::shape("class index out of range"));
    }
    let mut cm = vec![vec![0usize; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    let n = pred.len() as f64;
    let correct: usize = (0..classes).map(|c| cm[c][c]).sum();
    let mut per_class_f1 = Vec::with_capacity(classes);
    let mut absent_classes = Vec::new();
    let (mut wf1, mut wp, mut wr) = (0.0, 0.0, 0.0);
    let (mut tp_all, mut fp_all, mut fn_all) = (0usize, 0usize, 0usize);
    for c in 0..classes {
        let tp = cm[c][c];
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..classes).map(|t| cm[t][c]).sum();
        let (fp, fn_) = (predicted - tp, support - tp);
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        if support == 0 && predicted == 0 {
            absent_classes.push(c);
        }
        let precision = ratio(tp, predicted).0;
        let recall = ratio(tp, support).0;
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_).0;
        per_class_f1.push(f1);
        let w = support as f64 / n;
        wf1 += w * f1;
        wp += w * precision;
        wr += w * recall;
    }
    Ok(MulticlassMetrics {
        accuracy: correct as f64 / n,
        macro_f1: per_class_f1.iter().sum::<f64>() / classes as f64,
        micro_f1: ratio(2 * tp_all, 2 * tp_all + fp_all + fn_all).0,
        weighted_f1: wf1,
        weighted_precision: wp,
        weighted_recall: wr,
        per_class_f1,
        absent_classes,
    })
}

/// Mean and sample standard deviation (n−1; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// `None` where the metric was undefined for the fold.
    pub per_fold: Vec<Option<f64>>,
    pub undefined_folds: usize,
}

/// Aggregates per-fold metric values; undefined folds are excluded from the
/// mean and counted.
pub fn aggregate(per_fold: &[BTreeMap<String, Option<f64>>]) -> BTreeMap<String, MetricSummary> {
    let mut names: Vec<&String> = per_fold.iter().flat_map(|m| m.keys()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let vals: Vec<Option<f64>> = per_fold.iter().map(|m| m.get(name).copied().flatten()).collect();
            let defined: Vec<f64> = vals.iter().flatten().copied().collect();
            let (mean, std) = mean_std(&defined);
            let undefined_folds = vals.len() - defined.len();
            (name.clone(), MetricSummary { mean, std, per_fold: vals, undefined_folds })
        })
        .collect()
}

/// Per-fold metric map for a fused prediction.
pub fn fold_metrics(
    probs: &ndarray::Array2<f64>,
    truth: &[usize],
    classes: usize,
    positive_class: usize,
    threshold: f64,
) -> Result<BTreeMap<String, Option<f64>>> {
    let pred = argmax_rows(probs);
    let mc = multiclass_metrics(&pred, truth, classes)?;
    let mut out = BTreeMap::new();
    out.insert("accuracy".to_string(), Some(mc.accuracy));
    out.insert("macro_f1".to_string(), Some(mc.macro_f1));
    out.insert("micro_f1".to_string(), Some(mc.micro_f1));
    out.insert("weighted_f1".to_string(), Some(mc.weighted_f1));
    out.insert("weighted_precision".to_string(), Some(mc.weighted_precision));
    out.insert("weighted_recall".to_string(), Some(mc.weighted_recall));
    if classes == 2 {
        if positive_class >= 2 {
            return Err(Error::Config(format!("positive class {positive_class} for a binary task")));
        }
        let scores: Vec<f64> = probs.column(positive_class).to_vec();
        let pos: Vec<bool> = truth.iter().map(|&t| t == positive_class).collect();
        let b = binary_metrics(&scores, &pos, threshold)?;
        out.insert("auroc".to_string(), b.auroc);
        out.insert("ppv".to_string(), Some(b.ppv));
        out.insert("npv".to_string(), Some(b.npv));
        out.insert("sensitivity".to_string(), Some(b.sensitivity));
        out.insert("specificity".to_string(), Some(b.specificity));
    }
    Ok(out)
}
