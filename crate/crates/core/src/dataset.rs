//! Multi-omic dataset loading, preprocessing and stratified fold planning.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measurement layer: a patient × feature matrix with feature ids.
///
/// Missing cells are stored as `NaN` until [`preprocess`] removes them.
#[derive(Debug, Clone, PartialEq)]
pub struct Omic {
    pub name: String,
    pub feature_ids: Vec<String>,
    pub matrix: Array2<f64>,
}

impl Omic {
    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Aligned omic matrices sharing one patient ordering, plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct OmicsDataset {
    pub omics: Vec<Omic>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub patient_ids: Vec<String>,
}

impl OmicsDataset {
    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn omic(&self, name: &str) -> Result<&Omic> {
        self.omics
            .iter()
            .find(|o| o.name == name)
            .ok_or_else(|| Error::Usage(format!("unknown omic '{name}'")))
    }

    pub fn omic_index(&self, name: &str) -> Result<usize> {
        self.omics
            .iter()
            .position(|o| o.name == name)
            .ok_or_else(|| Error::Usage(format!("unknown omic '{name}'")))
    }

    /// Per-class member counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Checks the structural invariants shared by every dataset.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_patients();
        if self.labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} patients", self.labels.len())));
        }
        for omic in &self.omics {
            if omic.matrix.nrows() != n {
                return Err(Error::shape(format!(
                    "omic '{}' has {} rows, expected {n}",
                    omic.name,
                    omic.matrix.nrows()
                )));
            }
            if omic.feature_ids.len() != omic.matrix.ncols() {
                return Err(Error::shape(format!("omic '{}' feature ids do not match columns", omic.name)));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.class_count()) {
            return Err(Error::data(format!("label {bad} outside [0, {})", self.class_count())));
        }
        let distinct = self.labels.iter().collect::<BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(Error::data(format!("labels contain {distinct} distinct class(es); at least 2 required")));
        }
        Ok(())
    }

    /// Keeps only the named omics, in the given order.
    pub fn with_modalities(&self, names: &[String]) -> Result<OmicsDataset> {
        let omics = names.iter().map(|n| self.omic(n).cloned()).collect::<Result<Vec<_>>>()?;
        Ok(OmicsDataset { omics, ..self.clone() })
    }
}

/// On-disk description of a dataset: omic CSVs, a label CSV and class names.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub omics: Vec<ManifestOmic>,
    pub labels: PathBuf,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestOmic {
    pub name: String,
    pub path: PathBuf,
}

struct RawTable {
    ids: Vec<String>,
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn parse_cell(cell: &str, path: &Path, line: usize) -> Result<f64> {
    let t = cell.trim();
    if t.is_empty() || t == "NA" {
        return Ok(f64::NAN);
    }
    t.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("non-numeric cell '{t}'"),
    })
}

fn read_omic_csv(path: &Path) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Usage(format!("cannot open {}: {e}", path.display())),
            _ => Error::Csv(e),
        })?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "expected patient id column plus features".into() });
    }
    let columns: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.into(),
                line,
                msg: format!("expected {} cells, found {}", header.len(), rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse { path: path.into(), line, msg: "empty patient id".into() });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse { path: path.into(), line, msg: format!("duplicate patient id '{id}'") });
        }
        let row = rec.iter().skip(1).map(|c| parse_cell(c, path, line)).collect::<Result<Vec<_>>>()?;
        ids.push(id);
        rows.push(row);
    }
    Ok(RawTable { ids, columns, rows })
}

fn read_labels(path: &Path, classes: &[String]) -> Result<HashMap<String, usize>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Usage(format!("cannot open {}: {e}", path.display())),
            _ => Error::Csv(e),
        })?;
    let mut out = HashMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let id = rec.get(0).map(str::trim).unwrap_or("");
        let label = rec.get(1).map(str::trim).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Parse { path: path.into(), line, msg: "missing patient id".into() });
        }
        let class = classes
            .iter()
            .position(|c| c == label)
            .or_else(|| label.parse::<usize>().ok().filter(|&k| k < classes.len()))
            .ok_or_else(|| Error::Parse { path: path.into(), line, msg: format!("unknown class '{label}'") })?;
        if out.insert(id.to_string(), class).is_some() {
            return Err(Error::Parse { path: path.into(), line, msg: format!("duplicate patient id '{id}'") });
        }
    }
    Ok(out)
}

/// Loads the omics named by a JSON manifest and aligns them on the patient-id
/// intersection, sorted lexicographically.
pub fn load_dataset(manifest_path: &Path) -> Result<OmicsDataset> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Usage(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("manifest {}: {e}", manifest_path.display())))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    load_from_manifest(&manifest, base)
}

pub fn load_from_manifest(manifest: &Manifest, base: &Path) -> Result<OmicsDataset> {
    if manifest.omics.is_empty() {
        return Err(Error::Config("manifest names no omics".into()));
    }
    if manifest.classes.len() < 2 {
        return Err(Error::Config("manifest must list at least two classes".into()));
    }
    let tables = manifest
        .omics
        .iter()
        .map(|o| read_omic_csv(&base.join(&o.path)))
        .collect::<Result<Vec<_>>>()?;
    let label_path = base.join(&manifest.labels);
    let labels = read_labels(&label_path, &manifest.classes)?;

    let mut common: BTreeSet<String> = tables[0].ids.iter().cloned().collect();
    for t in &tables[1..] {
        let ids: BTreeSet<&String> = t.ids.iter().collect();
        common.retain(|id| ids.contains(id));
    }
    let patient_ids: Vec<String> = common.into_iter().collect();
    let mut y = Vec::with_capacity(patient_ids.len());
    for id in &patient_ids {
        match labels.get(id) {
            Some(&c) => y.push(c),
            None => {
                return Err(Error::data(format!("{}: no label for patient '{id}'", label_path.display())));
            }
        }
    }

    let omics = manifest
        .omics
        .iter()
        .zip(tables)
        .map(|(m, t)| {
            let pos: HashMap<&str, usize> = t.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            let mut matrix = Array2::<f64>::zeros((patient_ids.len(), t.columns.len()));
            for (r, id) in patient_ids.iter().enumerate() {
                let src = &t.rows[pos[id.as_str()]];
                for (c, v) in src.iter().enumerate() {
                    matrix[[r, c]] = *v;
                }
            }
            Omic { name: m.name.clone(), feature_ids: t.columns, matrix }
        })
        .collect();

    let ds = OmicsDataset { omics, labels: y, class_names: manifest.classes.clone(), patient_ids };
    ds.validate()?;
    Ok(ds)
}

/// Feature counts recorded at each preprocessing step.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OmicProvenance {
    pub name: String,
    pub original: usize,
    pub after_missing: usize,
    pub after_variance: usize,
    pub variance_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PreprocessReport {
    pub patients: usize,
    pub omics: Vec<OmicProvenance>,
}

/// Min-max scaling parameters for one matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    /// Fits column bounds on the given rows.
    pub fn fit(matrix: &Array2<f64>, rows: &[usize]) -> MinMaxScaler {
        let d = matrix.ncols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for &r in rows {
            for (c, &v) in matrix.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Scales every row; a column constant on the fitted rows maps to 0.
    pub fn transform(&self, matrix: &Array2<f64>) -> Array2<f64> {
        let mut out = matrix.clone();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let range = self.max[c] - self.min[c];
            for v in col.iter_mut() {
                *v = if range > 0.0 { (*v - self.min[c]) / range } else { 0.0 };
            }
        }
        out
    }
}

/// Population variance of a column.
pub fn column_variance(col: ndarray::ArrayView1<f64>) -> f64 {
    let n = col.len() as f64;
    let mean = col.sum() / n;
    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn select_columns(omic: &Omic, keep: &[usize]) -> Omic {
    Omic {
        name: omic.name.clone(),
        feature_ids: keep.iter().map(|&c| omic.feature_ids[c].clone()).collect(),
        matrix: omic.matrix.select(Axis(1), keep),
    }
}

/// Drops features with missing cells, min-max scales each feature over all
/// patients, then drops features whose scaled variance falls below the omic's
/// threshold (0 disables the filter).
pub fn preprocess(ds: &OmicsDataset, variance_threshold_per_omic: &[f64]) -> Result<(OmicsDataset, PreprocessReport)> {
    if variance_threshold_per_omic.len() != ds.omics.len() {
        return Err(Error::Config(format!(
            "{} variance thresholds for {} omics",
            variance_threshold_per_omic.len(),
            ds.omics.len()
        )));
    }
    let all_rows: Vec<usize> = (0..ds.n_patients()).collect();
    let mut omics = Vec::with_capacity(ds.omics.len());
    let mut prov = Vec::with_capacity(ds.omics.len());
    for (omic, &thr) in ds.omics.iter().zip(variance_threshold_per_omic) {
        let complete: Vec<usize> = (0..omic.n_features())
            .filter(|&c| omic.matrix.column(c).iter().all(|v| v.is_finite()))
            .collect();
        let mut cleaned = select_columns(omic, &complete);
        cleaned.matrix = MinMaxScaler::fit(&cleaned.matrix, &all_rows).transform(&cleaned.matrix);
        let keep: Vec<usize> = if thr > 0.0 {
            (0..cleaned.n_features())
                .filter(|&c| column_variance(cleaned.matrix.column(c)) >= thr)
                .collect()
        } else {
            (0..cleaned.n_features()).collect()
        };
        if keep.is_empty() {
            return Err(Error::data(format!("omic '{}' has no features left after preprocessing", omic.name)));
        }
        let filtered = select_columns(&cleaned, &keep);
        prov.push(OmicProvenance {
            name: omic.name.clone(),
            original: omic.n_features(),
            after_missing: complete.len(),
            after_variance: keep.len(),
            variance_threshold: thr,
        });
        omics.push(filtered);
    }
    let out = OmicsDataset { omics, ..ds.clone() };
    Ok((out, PreprocessReport { patients: ds.n_patients(), omics: prov }))
}

/// One cross-validation fold: disjoint train, validation and test indices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    /// Non-test patients (train then valid), the rows every fitted quantity is
    /// computed from.
    pub fn fit_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.train.iter().chain(&self.valid).copied().collect();
        rows.sort_unstable();
        rows
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitPlan {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

/// Stratified k-fold split: each class is shuffled and dealt round-robin over
/// the folds; the non-test patients of each fold are split 9:1 into train and
/// validation, again stratified by class.
pub fn make_splits(labels: &[usize], class_count: usize, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::data(format!("class {c} has {} members, fewer than k={k}", members.len())));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
    }
    let mut fold_of = vec![0usize; labels.len()];
    let mut cursor = 0usize;
    for members in &by_class {
        for &i in members {
            fold_of[i] = cursor % k;
            cursor += 1;
        }
    }
    let folds = (0..k)
        .map(|f| {
            let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == f).collect();
            // class-major, shuffled within class, so every tenth pick is stratified
            let rest: Vec<usize> = by_class.iter().flatten().copied().filter(|&i| fold_of[i] != f).collect();
            let mut train = Vec::new();
            let mut valid = Vec::new();
            for (pos, &i) in rest.iter().enumerate() {
                if pos % 10 == 9 {
                    valid.push(i);
                } else {
                    train.push(i);
                }
            }
            train.sort_unstable();
            valid.sort_unstable();
            Fold { train, valid, test }
        })
        .collect();
    Ok(SplitPlan { folds, seed })
}

fn write_matrix_csv(path: &Path, ids: &[String], header: &[String], m: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::data(format!("{other:?}")),
    })?;
    let mut head = vec!["patient_id".to_string()];
    head.extend(header.iter().cloned());
    w.write_record(&head)?;
    for (r, id) in ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(m.ncols() + 1);
        rec.push(id.clone());
        rec.extend(m.row(r).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes the dataset as one CSV per omic, `labels.csv`, and a `manifest.json`
/// that [`load_dataset`] reads back unchanged.
pub fn write_dataset(ds: &OmicsDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for omic in &ds.omics {
        let file = PathBuf::from(format!("{}.csv", omic.name));
        write_matrix_csv(&dir.join(&file), &ds.patient_ids, &omic.feature_ids, &omic.matrix)?;
        entries.push(ManifestOmic { name: omic.name.clone(), path: file });
    }
    let label_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&label_path)?;
    w.write_record(["patient_id", "label"])?;
    for (id, &y) in ds.patient_ids.iter().zip(&ds.labels) {
        w.write_record([id.as_str(), ds.class_names[y].as_str()])?;
    }
    w.flush().map_err(|e| Error::io(&label_path, e))?;
    let manifest = Manifest { omics: entries, labels: PathBuf::from("labels.csv"), classes: ds.class_names.clone() };
    let mpath = dir.join("manifest.json");
    write_json(&mpath, &manifest)?;
    Ok(mpath)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Provenance record written next to preprocessed matrices.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub report: PreprocessReport,
    pub dropped: BTreeMap<String, DroppedCounts>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DroppedCounts {
    pub missing: usize,
    pub low_variance: usize,
}

impl Provenance {
    pub fn from_report(report: &PreprocessReport, seed: Option<u64>) -> Provenance {
        let dropped = report
            .omics
            .iter()
            .map(|o| {
                (
                    o.name.clone(),
                    DroppedCounts { missing: o.original - o.after_missing, low_variance: o.after_missing - o.after_variance },
                )
            })
            .collect();
        Provenance { report: report.clone(), dropped, seed }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("provenance.json"), self)
    }
}
