//! End-to-end stages. Each stage reads and writes a directory so the CLI can
//! run them separately; [`cross_validate`] runs selection and training in
//! memory for experiments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aco::{agent_seed, run_selection, write_selected_json, SelectionProblem, SelectionResult};
use crate::config::{Config, EvalConfig};
use crate::dataset::{load_dataset, make_splits, preprocess, read_json, write_dataset, write_json, Fold, MinMaxScaler, OmicsDataset, PreprocessReport, Provenance, SplitPlan};
use crate::error::{Error, Result};
use crate::hetero::{assemble, Ablation, GraphInputs, HeteroGraph};
use crate::metrics::{aggregate, argmax_rows, fold_metrics, multiclass_metrics, MetricSummary};
use crate::similarity::{anova_relevance, build_feature_net, build_patient_net, patient_threshold_for_rate, Edge, NetKind, SimilarityGraph};
use crate::trainer::{predict, train_fold, FoldModels, FoldTask, LogRow};

pub fn fold_dir(base: &Path, fold: usize) -> PathBuf {
    base.join(format!("fold_{fold:02}"))
}

fn stage_seed(seed: u64, fold: usize, stage: usize) -> u64 {
    agent_seed(seed, fold, stage, usize::MAX - 1)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// 0.04 for every omic except miRNA, which is left unfiltered.
pub fn default_variance_thresholds(ds: &OmicsDataset) -> Vec<f64> {
    ds.omics.iter().map(|o| if o.name.eq_ignore_ascii_case("mirna") { 0.0 } else { 0.04 }).collect()
}

pub fn run_preprocess(manifest: &Path, out: &Path, thresholds: Option<&[f64]>) -> Result<PreprocessReport> {
    if !manifest.is_file() {
        return Err(Error::Usage(format!("manifest {} not found", manifest.display())));
    }
    let raw = load_dataset(manifest)?;
    raw.validate()?;
    let thr = match thresholds {
        Some(t) if t.len() == 1 => vec![t[0]; raw.omics.len()],
        Some(t) => t.to_vec(),
        None => default_variance_thresholds(&raw),
    };
    let (ds, report) = preprocess(&raw, &thr)?;
    write_dataset(&ds, out)?;
    Provenance::from_report(&report, None).write(out)?;
    Ok(report)
}

/// Loads a preprocessed data directory (its `manifest.json`).
pub fn load_data_dir(dir: &Path) -> Result<OmicsDataset> {
    let manifest = dir.join("manifest.json");
    if !manifest.is_file() {
        return Err(Error::Usage(format!("{} has no manifest.json", dir.display())));
    }
    let ds = load_dataset(&manifest)?;
    ds.validate()?;
    Ok(ds)
}

/// Every omic min-max scaled with bounds fitted on `fit_rows`.
pub fn scale_fold(ds: &OmicsDataset, fit_rows: &[usize]) -> Vec<Array2<f64>> {
    ds.omics.iter().map(|o| MinMaxScaler::fit(&o.matrix, fit_rows).transform(&o.matrix)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
    pub tau: f64,
}

/// Kept features of one omic with everything the graph stage needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmicSelection {
    pub omic: String,
    /// Column indices in the dataset, ascending.
    pub features: Vec<usize>,
    pub feature_ids: Vec<String>,
    pub relevance: Vec<f64>,
    pub node_tau: Vec<f64>,
    pub score: Vec<f64>,
    /// Feature-net edges among kept features, in local indices.
    pub edges: Vec<SelectedEdge>,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSelection {
    pub fold: usize,
    pub omics: Vec<OmicSelection>,
    pub best_fitness: Vec<f64>,
    pub omic_importance: Vec<f64>,
}

pub struct SelectionOutput {
    pub selection: FoldSelection,
    pub result: SelectionResult,
    pub nets: Vec<SimilarityGraph>,
    pub relevance: Vec<Vec<f64>>,
}

/// Feature nets, relevance and the colony run of one fold, all fitted on the
/// fold's non-test patients.
pub fn select_fold(ds: &OmicsDataset, fold: &Fold, index: usize, cfg: &Config) -> Result<SelectionOutput> {
    let fit = fold.fit_rows();
    let scaled = scale_fold(ds, &fit);
    let n = ds.omics.len();
    let mut nets = Vec::with_capacity(n);
    let mut relevance = Vec::with_capacity(n);
    for (m, x) in scaled.iter().enumerate() {
        nets.push(build_feature_net(x, &fit, cfg.feature_sparsity_for(m, n)?)?);
        relevance.push(anova_relevance(x, &fit, &ds.labels, ds.class_count())?);
    }
    let mut aco = cfg.aco.clone();
    aco.seed = stage_seed(cfg.seed, index, 0);
    let problem = SelectionProblem {
        matrices: scaled.iter().collect(),
        labels: &ds.labels,
        class_count: ds.class_count(),
        train: &fold.train,
        valid: &fold.valid,
        nets: &nets,
        relevance: &relevance,
    };
    let result = run_selection(&problem, &aco)?;
    let kept = result.selected_sorted();
    let mut omics = Vec::with_capacity(n);
    for m in 0..n {
        let features = kept[m].clone();
        let mut local = vec![usize::MAX; nets[m].node_count];
        for (i, &f) in features.iter().enumerate() {
            local[f] = i;
        }
        let edges = nets[m]
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| local[e.u] != usize::MAX && local[e.v] != usize::MAX)
            .map(|(k, e)| SelectedEdge { u: local[e.u], v: local[e.v], weight: e.weight, tau: result.state.edge_tau[m][k] })
            .collect();
        omics.push(OmicSelection {
            omic: ds.omics[m].name.clone(),
            feature_ids: features.iter().map(|&f| ds.omics[m].feature_ids[f].clone()).collect(),
            relevance: features.iter().map(|&f| relevance[m][f]).collect(),
            node_tau: features.iter().map(|&f| result.state.node_tau[m][f]).collect(),
            score: features.iter().map(|&f| result.scores[m][f]).collect(),
            features,
            edges,
            sparsity: cfg.feature_sparsity_for(m, n)?,
        });
    }
    let selection = FoldSelection {
        fold: index,
        omics,
        best_fitness: result.history.iter().map(|h| h.best_fitness).collect(),
        omic_importance: result.state.p.clone(),
    };
    Ok(SelectionOutput { selection, result, nets, relevance })
}

fn make_plan(ds: &OmicsDataset, cfg: &Config) -> Result<SplitPlan> {
    make_splits(&ds.labels, ds.class_count(), cfg.folds, cfg.seed).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{msg}; class names: {:?}", ds.class_names)),
        other => other,
    })
}

/// Selected columns of the fold-scaled matrix, one row per patient.
fn write_reduced(path: &Path, scaled: &Array2<f64>, sel: &OmicSelection, patients: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("patient_id").chain(sel.feature_ids.iter().map(String::as_str)))?;
    for (r, id) in patients.iter().enumerate() {
        let row = sel.features.iter().map(|&f| scaled[[r, f]].to_string());
        w.write_record(std::iter::once(id.clone()).chain(row))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Selection for every fold; writes the split plan, resolved config and one
/// directory per fold under `out`.
pub fn run_select(ds: &OmicsDataset, cfg: &Config, out: &Path) -> Result<Vec<FoldSelection>> {
    cfg.validate()?;
    let plan = make_plan(ds, cfg)?;
    create_dir(out)?;
    cfg.save(&out.join("config.json"))?;
    write_json(&out.join("splits.json"), &plan)?;
    let names: Vec<String> = ds.omics.iter().map(|o| o.name.clone()).collect();
    let ids: Vec<Vec<String>> = ds.omics.iter().map(|o| o.feature_ids.clone()).collect();
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| {
            let s = select_fold(ds, fold, k, cfg)?;
            let dir = fold_dir(out, k);
            create_dir(&dir)?;
            write_json(&dir.join("selection.json"), &s.selection)?;
            write_selected_json(&dir.join("selected_features.json"), &s.result, &s.relevance, &names, &ids)?;
            s.result.state.write_csv(&dir.join("desirability.csv"), &s.nets, &names)?;
            for (net, name) in s.nets.iter().zip(&names) {
                net.write(&dir, &format!("feature_net_{name}"))?;
            }
            let scaled = scale_fold(ds, &fold.fit_rows());
            for (m, o) in s.selection.omics.iter().enumerate() {
                write_reduced(&dir.join(format!("reduced_{}.csv", o.omic)), &scaled[m], o, &ds.patient_ids)?;
            }
            log::info!("fold {k}: selected {:?} features", s.selection.omics.iter().map(|o| o.features.len()).collect::<Vec<_>>());
            Ok(s.selection)
        })
        .collect()
}

/// Training graphs over the fold's non-test patients and evaluation graphs
/// that add the test patients after them.
pub struct FoldGraphs {
    pub train: Vec<HeteroGraph>,
    pub eval: Vec<HeteroGraph>,
    pub fit_rows: Vec<usize>,
    pub thresholds: Vec<f64>,
}

/// `omics` indexes both `ds.omics` and `sel.omics`.
pub fn build_fold_graphs(ds: &OmicsDataset, fold: &Fold, sel: &FoldSelection, omics: &[usize], cfg: &Config, ablation: Ablation) -> Result<FoldGraphs> {
    let fit = fold.fit_rows();
    let eval_rows: Vec<usize> = fit.iter().chain(&fold.test).copied().collect();
    let mut train = Vec::with_capacity(omics.len());
    let mut eval = Vec::with_capacity(omics.len());
    let mut thresholds = Vec::with_capacity(omics.len());
    for &m in omics {
        let s = &sel.omics[m];
        let omic = &ds.omics[m];
        if s.omic != omic.name || s.features.iter().zip(&s.feature_ids).any(|(&f, id)| omic.feature_ids.get(f) != Some(id)) {
            return Err(Error::data(format!("selection for '{}' does not match the dataset", s.omic)));
        }
        let x = MinMaxScaler::fit(&omic.matrix, &fit).transform(&omic.matrix).select(Axis(1), &s.features);
        let fnet = SimilarityGraph {
            node_count: s.features.len(),
            edges: s.edges.iter().map(|e| Edge { u: e.u, v: e.v, weight: e.weight }).collect(),
            kind: NetKind::FeatureNet,
            parameter: s.sparsity,
        };
        let edge_tau: Vec<f64> = s.edges.iter().map(|e| e.tau).collect();
        let theta = match cfg.patient_threshold {
            Some(t) => t,
            None => patient_threshold_for_rate(&x, &fit, cfg.patient_sparsity)?,
        };
        for (rows, out) in [(&fit, &mut train), (&eval_rows, &mut eval)] {
            let pnet = build_patient_net(&x, rows, theta)?;
            let g = assemble(&GraphInputs {
                matrix: &x,
                patient_rows: rows,
                fit_rows: &fit,
                feature_net: &fnet,
                patient_net: &pnet,
                relevance: &s.relevance,
                node_tau: &s.node_tau,
                edge_tau: &edge_tau,
            })?;
            out.push(g.with_ablation(ablation));
        }
        thresholds.push(theta);
    }
    Ok(FoldGraphs { train, eval, fit_rows: fit, thresholds })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Omic names to use, in order; `None` keeps all.
    pub modalities: Option<Vec<String>>,
    pub ablation: Ablation,
}

impl TrainOptions {
    pub fn omic_indices(&self, ds: &OmicsDataset) -> Result<Vec<usize>> {
        match &self.modalities {
            None => Ok((0..ds.omics.len()).collect()),
            Some(names) if names.is_empty() => Err(Error::Usage("empty modality list".into())),
            Some(names) => names.iter().map(|n| ds.omic_index(n)).collect(),
        }
    }
}

/// Trained models and test predictions of one fold.
pub struct FoldRun {
    pub fold: usize,
    pub omic_names: Vec<String>,
    pub feature_ids: Vec<Vec<String>>,
    pub graphs: FoldGraphs,
    pub models: FoldModels,
    pub test_rows: Vec<usize>,
    /// Positions of the test patients among the evaluation graph's nodes.
    pub test_nodes: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub fused: Array2<f64>,
    pub per_omic: Vec<Array2<f64>>,
}

pub fn train_and_predict_fold(ds: &OmicsDataset, fold: &Fold, index: usize, sel: &FoldSelection, cfg: &Config, opts: &TrainOptions) -> Result<FoldRun> {
    let omics = opts.omic_indices(ds)?;
    let graphs = build_fold_graphs(ds, fold, sel, &omics, cfg, opts.ablation)?;
    let pos: BTreeMap<usize, usize> = graphs.fit_rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let train_nodes: Vec<usize> = fold.train.iter().map(|r| pos[r]).collect();
    let train_labels: Vec<usize> = fold.train.iter().map(|&r| ds.labels[r]).collect();
    let omic_names: Vec<String> = omics.iter().map(|&m| ds.omics[m].name.clone()).collect();
    let task = FoldTask {
        omic_names: &omic_names,
        classes: ds.class_count(),
        train_graphs: &graphs.train,
        train_nodes: &train_nodes,
        train_labels: &train_labels,
        seed: stage_seed(cfg.seed, index, 1),
    };
    let models = train_fold(&task, cfg).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("fold {index} (seed {}): {msg}", cfg.seed)),
        other => other,
    })?;
    let n_fit = graphs.fit_rows.len();
    let test_nodes: Vec<usize> = (n_fit..n_fit + fold.test.len()).collect();
    let (fused, per_omic) = predict(&models.omics, models.fusion.as_ref(), &graphs.eval, &test_nodes)?;
    Ok(FoldRun {
        fold: index,
        feature_ids: omics.iter().map(|&m| sel.omics[m].feature_ids.clone()).collect(),
        omic_names,
        graphs,
        models,
        test_rows: fold.test.clone(),
        test_nodes,
        test_labels: fold.test.iter().map(|&r| ds.labels[r]).collect(),
        fused,
        per_omic,
    })
}

/// Selection, training and prediction over every fold, in memory.
pub fn cross_validate(ds: &OmicsDataset, cfg: &Config, opts: &TrainOptions) -> Result<Vec<FoldRun>> {
    cfg.validate()?;
    let plan = make_plan(ds, cfg)?;
    plan.folds
        .par_iter()
        .enumerate()
        .map(|(k, fold)| {
            let sel = select_fold(ds, fold, k, cfg)?;
            train_and_predict_fold(ds, fold, k, &sel.selection, cfg, opts)
        })
        .collect()
}

/// Same as [`cross_validate`] but reusing selections made earlier.
pub fn cross_validate_with(ds: &OmicsDataset, plan: &SplitPlan, selections: &[FoldSelection], cfg: &Config, opts: &TrainOptions) -> Result<Vec<FoldRun>> {
    if selections.len() != plan.folds.len() {
        return Err(Error::data("one selection per fold is required"));
    }
    plan.folds
        .par_iter()
        .zip(selections.par_iter())
        .enumerate()
        .map(|(k, (fold, sel))| train_and_predict_fold(ds, fold, k, sel, cfg, opts))
        .collect()
}

/// Per-fold and aggregated metrics of fused test predictions.
pub fn evaluate_runs(runs: &[FoldRun], classes: usize, eval: &EvalConfig) -> Result<BTreeMap<String, MetricSummary>> {
    let per_fold = runs
        .iter()
        .map(|r| fold_metrics(&r.fused, &r.test_labels, classes, eval.positive_class, eval.threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&per_fold))
}

/// Weighted F1 of each omic's own test predictions, averaged over folds.
pub fn single_omic_weighted_f1(runs: &[FoldRun], classes: usize) -> Result<Vec<f64>> {
    let n = runs.first().map_or(0, |r| r.per_omic.len());
    (0..n)
        .map(|m| {
            let mut total = 0.0;
            for r in runs {
                total += multiclass_metrics(&argmax_rows(&r.per_omic[m]), &r.test_labels, classes)?.weighted_f1;
            }
            Ok(total / runs.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub data: PathBuf,
    pub selection: PathBuf,
    pub omics: Vec<String>,
    pub classes: Vec<String>,
    pub ablation: Ablation,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct FoldRecord {
    pub fold: usize,
    pub test_rows: Vec<usize>,
    pub test_nodes: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub test_patients: Vec<String>,
    pub feature_ids: Vec<Vec<String>>,
    pub patient_dims: Vec<usize>,
    pub feature_dims: Vec<usize>,
    pub thresholds: Vec<f64>,
}

fn prob_header(classes: &[String]) -> Vec<String> {
    classes.iter().map(|c| format!("prob_{c}")).collect()
}

fn write_predictions(path: &Path, runs: &[&FoldRun], ds: &OmicsDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string(), "fold".into(), "label".into(), "predicted".into()];
    header.extend(prob_header(&ds.class_names));
    w.write_record(&header)?;
    for r in runs {
        let pred = argmax_rows(&r.fused);
        for (i, &row) in r.test_rows.iter().enumerate() {
            let mut rec = vec![ds.patient_ids[row].clone(), r.fold.to_string(), r.test_labels[i].to_string(), pred[i].to_string()];
            rec.extend(r.fused.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_omic_predictions(path: &Path, run: &FoldRun, ds: &OmicsDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["patient_id".to_string(), "fold".into(), "omic".into()];
    header.extend(prob_header(&ds.class_names));
    w.write_record(&header)?;
    for (m, probs) in run.per_omic.iter().enumerate() {
        for (i, &row) in run.test_rows.iter().enumerate() {
            let mut rec = vec![ds.patient_ids[row].clone(), run.fold.to_string(), run.omic_names[m].clone()];
            rec.extend(probs.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn save_fold(dir: &Path, run: &FoldRun, ds: &OmicsDataset) -> Result<()> {
    create_dir(dir)?;
    for (m, name) in run.omic_names.iter().enumerate() {
        run.models.omics[m].params.save(dir, &format!("model_{name}"))?;
        run.graphs.train[m].write(dir, &format!("graph_{name}_train"))?;
        run.graphs.eval[m].write(dir, &format!("graph_{name}_eval"))?;
    }
    if let Some(f) = &run.models.fusion {
        f.params.save(dir, "vcdn")?;
    }
    let record = FoldRecord {
        fold: run.fold,
        test_rows: run.test_rows.clone(),
        test_nodes: run.test_nodes.clone(),
        test_labels: run.test_labels.clone(),
        test_patients: run.test_rows.iter().map(|&r| ds.patient_ids[r].clone()).collect(),
        feature_ids: run.feature_ids.clone(),
        patient_dims: run.models.omics.iter().map(|m| m.patient_dim).collect(),
        feature_dims: run.models.omics.iter().map(|m| m.feature_dim).collect(),
        thresholds: run.graphs.thresholds.clone(),
    };
    write_json(&dir.join("fold.json"), &record)?;
    write_predictions(&dir.join("predictions.csv"), &[run], ds)?;
    write_omic_predictions(&dir.join("omic_predictions.csv"), run, ds)?;
    write_log(&dir.join("train_log.csv"), &run.models.log)
}

/// Trains every fold from a selection directory and writes the run directory.
pub fn run_train(data_dir: &Path, selection_dir: &Path, cfg: &Config, run_dir: &Path, opts: &TrainOptions) -> Result<()> {
    cfg.validate()?;
    let ds = load_data_dir(data_dir)?;
    let splits = selection_dir.join("splits.json");
    if !splits.is_file() {
        return Err(Error::Usage(format!("{} has no splits.json; run select first", selection_dir.display())));
    }
    let plan: SplitPlan = read_json(&splits)?;
    if plan.folds.iter().flat_map(|f| f.test.iter()).any(|&r| r >= ds.n_patients()) {
        return Err(Error::data("split plan refers to patients missing from the data directory"));
    }
    let selections = (0..plan.folds.len())
        .map(|k| read_json::<FoldSelection>(&fold_dir(selection_dir, k).join("selection.json")))
        .collect::<Result<Vec<_>>>()?;
    let runs = cross_validate_with(&ds, &plan, &selections, cfg, opts)?;
    create_dir(run_dir)?;
    cfg.save(&run_dir.join("config.json"))?;
    let info = RunInfo {
        data: data_dir.to_path_buf(),
        selection: selection_dir.to_path_buf(),
        omics: runs.first().map(|r| r.omic_names.clone()).unwrap_or_default(),
        classes: ds.class_names.clone(),
        ablation: opts.ablation,
        folds: runs.len(),
    };
    write_json(&run_dir.join("run.json"), &info)?;
    for run in &runs {
        save_fold(&fold_dir(run_dir, run.fold), run, &ds)?;
    }
    write_predictions(&run_dir.join("predictions.csv"), &runs.iter().collect::<Vec<_>>(), &ds)
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    fold: usize,
    label: usize,
}

/// Recomputes metrics from a run directory's predictions and writes
/// `metrics.json`.
pub fn run_evaluate(run_dir: &Path) -> Result<BTreeMap<String, MetricSummary>> {
    let info_path = run_dir.join("run.json");
    if !info_path.is_file() {
        return Err(Error::Usage(format!("{} is not a run directory", run_dir.display())));
    }
    let info: RunInfo = read_json(&info_path)?;
    let cfg = Config::load_resolved(run_dir)?;
    let classes = info.classes.len();
    let path = run_dir.join("predictions.csv");
    let mut reader = csv::Reader::from_path(&path)?;
    let mut folds: BTreeMap<usize, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec?;
        let head: PredictionRecord = PredictionRecord {
            fold: rec[1].parse().map_err(|_| Error::data(format!("bad fold in {}", path.display())))?,
            label: rec[2].parse().map_err(|_| Error::data(format!("bad label in {}", path.display())))?,
        };
        let entry = folds.entry(head.fold).or_default();
        entry.0.push(head.label);
        for k in 0..classes {
            let v: f64 = rec[4 + k].parse().map_err(|_| Error::data(format!("bad probability in {}", path.display())))?;
            entry.1.push(v);
        }
    }
    let per_fold = folds
        .into_values()
        .map(|(labels, probs)| {
            let p = Array2::from_shape_vec((labels.len(), classes), probs).map_err(|e| Error::shape(e.to_string()))?;
            fold_metrics(&p, &labels, classes, cfg.eval.positive_class, cfg.eval.threshold)
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = aggregate(&per_fold);
    write_json(&run_dir.join("metrics.json"), &summary)?;
    Ok(summary)
}
