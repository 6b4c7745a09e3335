//! Biomarker ranking by feature ablation: each selected feature is zeroed in
//! the evaluation graph and the drop of the fused test metric is recorded.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Params;
use crate::config::Config;
use crate::dataset::read_json;
use crate::error::{Error, Result};
use crate::fusion::FusionNet;
use crate::gat::OmicModel;
use crate::hetero::HeteroGraph;
use crate::metrics::{argmax_rows, auroc, multiclass_metrics};
use crate::pipeline::{fold_dir, FoldRecord, FoldRun, RunInfo};
use crate::trainer::predict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropMetric {
    Auroc,
    WeightedF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiomarkerRow {
    pub rank: usize,
    pub feature_id: String,
    pub omic: String,
    pub score: f64,
    pub folds_present: usize,
}

fn drop_metric(probs: &Array2<f64>, labels: &[usize], metric: DropMetric, positive: usize) -> Result<Option<f64>> {
    match metric {
        DropMetric::Auroc => {
            if probs.ncols() != 2 {
                return Err(Error::Config("AUROC ablation needs a binary task; use weighted-f1".into()));
            }
            let scores = probs.column(positive).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&l| l == positive).collect();
            Ok(auroc(&scores, &pos))
        }
        DropMetric::WeightedF1 => Ok(Some(multiclass_metrics(&argmax_rows(probs), labels, probs.ncols())?.weighted_f1)),
    }
}

/// Drop of the test metric when each feature is ablated, per omic; `None`
/// when the metric is undefined on this fold.
pub fn feature_drops(
    models: &[OmicModel],
    fusion: Option<&FusionNet>,
    graphs: &[HeteroGraph],
    test_nodes: &[usize],
    labels: &[usize],
    metric: DropMetric,
    positive: usize,
) -> Result<Option<Vec<Vec<f64>>>> {
    let (full, _) = predict(models, fusion, graphs, test_nodes)?;
    let Some(base) = drop_metric(&full, labels, metric, positive)? else {
        return Ok(None);
    };
    let mut out = Vec::with_capacity(graphs.len());
    for m in 0..graphs.len() {
        let drops = (0..graphs[m].patient_x.ncols())
            .into_par_iter()
            .map(|f| {
                let mut g = graphs.to_vec();
                g[m] = graphs[m].ablate_feature(f)?;
                let (p, _) = predict(models, fusion, &g, test_nodes)?;
                let v = drop_metric(&p, labels, metric, positive)?.unwrap_or(base);
                Ok((base - v).max(0.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(drops);
    }
    Ok(Some(out))
}

/// Sums clamped drops per `(omic, feature id)`, divides by the number of
/// folds the feature was selected in, and ranks descending (ties by id).
pub fn rank_drops(entries: impl IntoIterator<Item = (String, String, f64)>) -> Vec<BiomarkerRow> {
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for (omic, id, drop) in entries {
        let e = acc.entry((omic, id)).or_insert((0.0, 0));
        e.0 += drop.max(0.0);
        e.1 += 1;
    }
    let mut rows: Vec<BiomarkerRow> = acc
        .into_iter()
        .map(|((omic, feature_id), (sum, n))| BiomarkerRow { rank: 0, feature_id, omic, score: sum / n as f64, folds_present: n })
        .collect();
    rows.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.feature_id.cmp(&b.feature_id)).then_with(|| a.omic.cmp(&b.omic)));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

/// Biomarker ranking from in-memory fold runs.
pub fn rank_runs(runs: &[FoldRun], metric: DropMetric, positive: usize) -> Result<Vec<BiomarkerRow>> {
    let mut entries = Vec::new();
    for r in runs {
        let drops = feature_drops(&r.models.omics, r.models.fusion.as_ref(), &r.graphs.eval, &r.test_nodes, &r.test_labels, metric, positive)?;
        if let Some(d) = drops {
            for (m, per) in d.into_iter().enumerate() {
                for (f, v) in per.into_iter().enumerate() {
                    entries.push((r.omic_names[m].clone(), r.feature_ids[m][f].clone(), v));
                }
            }
        }
    }
    Ok(rank_drops(entries))
}

/// Display name of a feature id: the part before any `|`.
pub fn feature_name(id: &str) -> &str {
    id.split('|').next().unwrap_or(id)
}

/// Ranks biomarkers of a trained run directory and writes `biomarkers.csv`
/// and `top30.csv`.
pub fn run_biomarkers(run_dir: &Path, metric: DropMetric) -> Result<Vec<BiomarkerRow>> {
    let info_path = run_dir.join("run.json");
    if !info_path.is_file() {
        return Err(Error::Usage(format!("{} is not a run directory", run_dir.display())));
    }
    let info: RunInfo = read_json(&info_path)?;
    let cfg = Config::load_resolved(run_dir)?;
    let classes = info.classes.len();
    let mut entries = Vec::new();
    for k in 0..info.folds {
        let dir = fold_dir(run_dir, k);
        let rec: FoldRecord = read_json(&dir.join("fold.json"))?;
        let mut models = Vec::new();
        let mut graphs = Vec::new();
        for (m, name) in info.omics.iter().enumerate() {
            let params = Params::load(&dir, &format!("model_{name}"))?;
            models.push(OmicModel::from_params(rec.patient_dims[m], rec.feature_dims[m], classes, &cfg.gat, params)?);
            graphs.push(HeteroGraph::read(&dir, &format!("graph_{name}_eval"))?);
        }
        let fusion = if info.omics.len() >= 2 {
            let params = Params::load(&dir, "vcdn")?;
            Some(FusionNet::from_params(classes, info.omics.len(), cfg.gat.leaky_slope, params)?)
        } else {
            None
        };
        let drops = feature_drops(&models, fusion.as_ref(), &graphs, &rec.test_nodes, &rec.test_labels, metric, cfg.eval.positive_class)?;
        match drops {
            Some(d) => {
                for (m, per) in d.into_iter().enumerate() {
                    for (f, v) in per.into_iter().enumerate() {
                        entries.push((info.omics[m].clone(), rec.feature_ids[m][f].clone(), v));
                    }
                }
            }
            None => log::warn!("fold {k}: metric undefined on the test set, skipped"),
        }
    }
    let rows = rank_drops(entries);
    let mut w = csv::Writer::from_path(run_dir.join("biomarkers.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(run_dir, e))?;
    let mut w = csv::Writer::from_path(run_dir.join("top30.csv"))?;
    w.write_record(["rank", "id", "name", "omic"])?;
    for r in rows.iter().take(30) {
        w.write_record([r.rank.to_string().as_str(), &r.feature_id, feature_name(&r.feature_id), &r.omic])?;
    }
    w.flush().map_err(|e| Error::io(run_dir, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_drops_scores_and_order() {
        let rows = rank_drops(vec![
            ("a".to_string(), "g2".to_string(), 0.2),
            ("a".to_string(), "g1".to_string(), 0.1),
            ("a".to_string(), "g1".to_string(), 0.3),
            ("b".to_string(), "g3".to_string(), -0.5),
            ("b".to_string(), "g0".to_string(), 0.2),
        ]);
        let order: Vec<&str> = rows.iter().map(|r| r.feature_id.as_str()).collect();
        assert_eq!(order, vec!["g0", "g1", "g2", "g3"]);
        assert!((rows[1].score - 0.2).abs() < 1e-15);
        assert_eq!(rows[1].folds_present, 2);
        assert_eq!(rows[3].score, 0.0);
        assert!(rows.iter().all(|r| r.score >= 0.0));
        assert_eq!(rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn feature_name_strips_suffix() {
        assert_eq!(feature_name("TP53|7157"), "TP53");
        assert_eq!(feature_name("hsa-mir-21"), "hsa-mir-21");
    }
}
