//! Absolute-Pearson similarity networks over features and patients, and ANOVA
//! relevance scores.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::write_json;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum NetKind {
    FeatureNet,
    PatientNet,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Sparse undirected weighted graph; each unordered pair stored once with
/// `u < v`, in ascending `(u, v)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub kind: NetKind,
    /// Sparsity rate (feature nets) or weight threshold (patient nets).
    pub parameter: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    kind: NetKind,
    node_count: usize,
    edge_count: usize,
    parameter: f64,
}

impl SimilarityGraph {
    /// Per-node `(neighbor, edge index)` lists.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for (e, edge) in self.edges.iter().enumerate() {
            adj[edge.u].push((edge.v, e));
            adj[edge.v].push((edge.u, e));
        }
        adj
    }

    /// Subgraph on `nodes`, renumbered to positions in that slice.
    pub fn induced(&self, nodes: &[usize]) -> SimilarityGraph {
        let mut pos = vec![usize::MAX; self.node_count];
        for (i, &n) in nodes.iter().enumerate() {
            pos[n] = i;
        }
        let mut edges: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| pos[e.u] != usize::MAX && pos[e.v] != usize::MAX)
            .map(|e| {
                let (a, b) = (pos[e.u], pos[e.v]);
                Edge { u: a.min(b), v: a.max(b), weight: e.weight }
            })
            .collect();
        edges.sort_by_key(|e| (e.u, e.v));
        SimilarityGraph { node_count: nodes.len(), edges, kind: self.kind, parameter: self.parameter }
    }

    /// Writes `<stem>.csv` (u,v,weight) and `<stem>.json`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(["u", "v", "weight"])?;
        for e in &self.edges {
            w.write_record([e.u.to_string(), e.v.to_string(), e.weight.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        let header = GraphHeader {
            kind: self.kind,
            node_count: self.node_count,
            edge_count: self.edges.len(),
            parameter: self.parameter,
        };
        write_json(&dir.join(format!("{stem}.json")), &header)
    }

    pub fn read(dir: &Path, stem: &str) -> Result<SimilarityGraph> {
        let header: GraphHeader = crate::dataset::read_json(&dir.join(format!("{stem}.json")))?;
        let mut rdr = csv::Reader::from_path(dir.join(format!("{stem}.csv")))?;
        let mut edges = Vec::with_capacity(header.edge_count);
        for rec in rdr.deserialize() {
            let (u, v, weight): (usize, usize, f64) = rec?;
            edges.push(Edge { u, v, weight });
        }
        Ok(SimilarityGraph { node_count: header.node_count, edges, kind: header.kind, parameter: header.parameter })
    }
}

/// |Pearson correlation|; 0 when either vector is constant.
pub fn pearson_abs(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::shape("correlation needs at least two observations"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(snap((sxy / (sxx.sqrt() * syy.sqrt())).abs()))
}

/// Clamps to 1 and absorbs rounding just below it, so exact duplicates weigh 1.
fn snap(r: f64) -> f64 {
    if r > 1.0 - 1e-12 {
        1.0
    } else {
        r
    }
}

/// Columns centred and scaled to unit norm; constant columns become zero.
fn unit_columns(data: ArrayView2<f64>) -> Array2<f64> {
    let mut z = data.to_owned();
    for mut col in z.axis_iter_mut(Axis(1)) {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let constant = col.iter().all(|&v| v == col[0]) || norm == 0.0;
        if constant {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| v / norm);
        }
    }
    z
}

const BLOCK: usize = 256;

/// Upper-triangle |correlation| between the columns of `data`, in `(u, v)`
/// pair order, computed one column block at a time.
pub fn pairwise_abs_corr(data: ArrayView2<f64>) -> Vec<f64> {
    let z = unit_columns(data);
    let d = z.ncols();
    let mut out = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    let mut start = 0;
    while start < d {
        let end = (start + BLOCK).min(d);
        let block = z.slice(s![.., start..end]).t().dot(&z.slice(s![.., start..]));
        for (bi, u) in (start..end).enumerate() {
            for v in (u + 1)..d {
                out.push(snap(block[[bi, v - start]].abs()));
            }
        }
        start = end;
    }
    out
}

fn pair_iter(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |u| ((u + 1)..d).map(move |v| (u, v)))
}

/// Number of edges kept for a sparsity rate: `floor((1 - rate) * pairs)`.
pub fn kept_edge_count(total_pairs: usize, sparsity_rate: f64) -> usize {
    (((1.0 - sparsity_rate) * total_pairs as f64) + 1e-9).floor() as usize
}

/// Feature similarity network on `rows` of `matrix`: the `sparsity_rate`
/// fraction of highest-weight pairs is discarded, keeping the least correlated
/// edges. Ties at the cut go to the lower `(u, v)` pair.
pub fn build_feature_net(matrix: &Array2<f64>, rows: &[usize], sparsity_rate: f64) -> Result<SimilarityGraph> {
    if !(0.0..1.0).contains(&sparsity_rate) {
        return Err(Error::Config(format!("sparsity rate {sparsity_rate} outside [0, 1)")));
    }
    let d = matrix.ncols();
    if d < 2 {
        return Err(Error::data(format!("feature net needs at least 2 features, got {d}")));
    }
    let data = matrix.select(Axis(0), rows);
    let weights = pairwise_abs_corr(data.view());
    let keep = kept_edge_count(weights.len(), sparsity_rate);
    let edges = if keep == 0 {
        Vec::new()
    } else {
        let mut sorted = weights.clone();
        let (_, cut, _) = sorted.select_nth_unstable_by(keep - 1, f64::total_cmp);
        let cut = *cut;
        let below = weights.iter().filter(|&&w| w < cut).count();
        let mut ties_left = keep - below;
        pair_iter(d)
            .zip(&weights)
            .filter_map(|((u, v), &w)| {
                if w < cut {
                    Some(Edge { u, v, weight: w })
                } else if w == cut && ties_left > 0 {
                    ties_left -= 1;
                    Some(Edge { u, v, weight: w })
                } else {
                    None
                }
            })
            .collect()
    };
    Ok(SimilarityGraph { node_count: d, edges, kind: NetKind::FeatureNet, parameter: sparsity_rate })
}

/// Patient similarity network over `rows` (node `i` = `rows[i]`): an edge is
/// kept iff its |correlation| across the columns of `matrix` is at least
/// `threshold`.
pub fn build_patient_net(matrix: &Array2<f64>, rows: &[usize], threshold: f64) -> Result<SimilarityGraph> {
    if rows.len() < 2 {
        return Err(Error::data("patient net needs at least 2 patients"));
    }
    let data = matrix.select(Axis(0), rows);
    let weights = pairwise_abs_corr(data.t());
    let edges = pair_iter(rows.len())
        .zip(weights)
        .filter(|(_, w)| *w >= threshold)
        .map(|((u, v), weight)| Edge { u, v, weight })
        .collect();
    Ok(SimilarityGraph { node_count: rows.len(), edges, kind: NetKind::PatientNet, parameter: threshold })
}

/// Weight threshold keeping the `1 - rate` fraction of strongest patient pairs
/// (above 1 when nothing is kept).
pub fn patient_threshold_for_rate(matrix: &Array2<f64>, rows: &[usize], rate: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("patient sparsity rate {rate} outside [0, 1]")));
    }
    let data = matrix.select(Axis(0), rows);
    let mut weights = pairwise_abs_corr(data.t());
    let keep = kept_edge_count(weights.len(), rate);
    if keep == 0 {
        return Ok(f64::INFINITY);
    }
    let idx = weights.len() - keep;
    let (_, t, _) = weights.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*t)
}

/// One-way ANOVA F statistic of each column of `matrix` (restricted to `rows`)
/// against the class labels.
///
/// A non-constant column with zero within-class variance gets the largest
/// finite F of the matrix (1 if there is none).
pub fn anova_f(matrix: &Array2<f64>, rows: &[usize], labels: &[usize], class_count: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; class_count];
    for &r in rows {
        counts[labels[r]] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::data(format!("class {c} has no samples for ANOVA")));
    }
    let k = class_count as f64;
    let n = rows.len() as f64;
    let mut f = Vec::with_capacity(matrix.ncols());
    let mut perfect = Vec::new();
    for (c, col) in matrix.axis_iter(Axis(1)).enumerate() {
        let vals: Vec<f64> = rows.iter().map(|&r| col[r]).collect();
        if vals.iter().all(|&v| v == vals[0]) {
            f.push(0.0);
            continue;
        }
        let grand = vals.iter().sum::<f64>() / n;
        let mut sums = vec![0.0; class_count];
        for (&r, &v) in rows.iter().zip(&vals) {
            sums[labels[r]] += v;
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &m)| s / m as f64).collect();
        let ssb: f64 = means.iter().zip(&counts).map(|(m, &cnt)| cnt as f64 * (m - grand).powi(2)).sum();
        let ssw: f64 = rows.iter().zip(&vals).map(|(&r, &v)| (v - means[labels[r]]).powi(2)).sum();
        let dfw = n - k;
        if ssw == 0.0 || dfw <= 0.0 {
            if ssb > 0.0 {
                perfect.push(c);
            }
            f.push(if ssb > 0.0 { f64::NAN } else { 0.0 });
            continue;
        }
        f.push((ssb / (k - 1.0)) / (ssw / dfw));
    }
    if !perfect.is_empty() {
        let top = f.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let fill = if top.is_finite() && top > 0.0 { top } else { 1.0 };
        for c in perfect {
            f[c] = fill;
        }
    }
    Ok(f)
}

/// Min-max normalisation to [0, 1]; a constant vector maps to zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    v.iter().map(|&x| if range > 0.0 { (x - lo) / range } else { 0.0 }).collect()
}

/// ANOVA relevance of every feature, min-max normalised within the omic.
pub fn anova_relevance(matrix: &Array2<f64>, rows: &[usize], labels: &[usize], class_count: usize) -> Result<Vec<f64>> {
    Ok(min_max_normalize(&anova_f(matrix, rows, labels, class_count)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.5];
        assert!((pearson_abs(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_abs(&x, &neg).unwrap() - 1.0).abs() < 1e-12);
        // mean-centred dot product 0.5 over norms 1.0: r = 0.5
        assert!((pearson_abs(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(pearson_abs(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(pearson_abs(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn pearson_symmetric_and_scale_invariant(
            x in proptest::collection::vec(-10.0f64..10.0, 5),
            y in proptest::collection::vec(-10.0f64..10.0, 5),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -3.0f64..3.0,
        ) {
            let r = pearson_abs(&x, &y).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!((r - pearson_abs(&y, &x).unwrap()).abs() < 1e-12);
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((r - pearson_abs(&ax, &y).unwrap()).abs() < 1e-9);
        }
    }

    /// Textbook one-way ANOVA from group means and variances.
    fn brute_f(col: &[f64], labels: &[usize]) -> f64 {
        let groups: Vec<Vec<f64>> = (0..2)
            .map(|c| col.iter().zip(labels).filter(|(_, &y)| y == c).map(|(v, _)| *v).collect())
            .collect();
        let n = col.len() as f64;
        let grand = col.iter().sum::<f64>() / n;
        let mut ssb = 0.0;
        let mut ssw = 0.0;
        for g in &groups {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            ssb += g.len() as f64 * (m - grand) * (m - grand);
            let var = g.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (g.len() as f64 - 1.0);
            ssw += var * (g.len() as f64 - 1.0);
        }
        (ssb / 1.0) / (ssw / (n - 2.0))
    }

    #[test]
    fn anova_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Array2::from_shape_fn((20, 5), |_| rng.random::<f64>());
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let rows: Vec<usize> = (0..20).collect();
        let f = anova_f(&m, &rows, &labels, 2).unwrap();
        for c in 0..5 {
            let col: Vec<f64> = m.column(c).to_vec();
            assert!((f[c] - brute_f(&col, &labels)).abs() < 1e-10);
        }
        let rel = anova_relevance(&m, &rows, &labels, 2).unwrap();
        let lo = rel.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn anova_constant_and_indicator_features() {
        let labels = vec![0, 0, 0, 1, 1, 1];
        let m = array![
            [0.5, 0.1, 0.2],
            [0.5, 0.0, 0.9],
            [0.5, 0.05, 0.4],
            [0.5, 0.95, 0.3],
            [0.5, 1.0, 0.8],
            [0.5, 0.9, 0.1]
        ];
        let rows: Vec<usize> = (0..6).collect();
        let rel = anova_relevance(&m, &rows, &labels, 2).unwrap();
        assert_eq!(rel[0], 0.0);
        assert_eq!(rel[1], 1.0);
        // perfect separation with zero within-class spread takes the maximum
        let perfect = array![[0.0, 0.1], [0.0, 0.2], [1.0, 0.3], [1.0, 0.9]];
        let f = anova_f(&perfect, &[0, 1, 2, 3], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(f[0], f[1]);
        assert!(anova_f(&perfect, &[0, 1], &[0, 0, 1, 1], 2).is_err());
    }

    #[test]
    fn feature_net_keeps_lowest_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Array2::from_shape_fn((12, 4), |_| rng.random::<f64>());
        let rows: Vec<usize> = (0..12).collect();
        let g = build_feature_net(&m, &rows, 0.5).unwrap();
        assert_eq!(g.edges.len(), 3);
        let mut all: Vec<f64> = pair_iter(4)
            .map(|(u, v)| pearson_abs(&m.column(u).to_vec(), &m.column(v).to_vec()).unwrap())
            .collect();
        all.sort_by(f64::total_cmp);
        let mut kept: Vec<f64> = g.edges.iter().map(|e| e.weight).collect();
        kept.sort_by(f64::total_cmp);
        for (a, b) in kept.iter().zip(&all[..3]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(build_feature_net(&m, &rows, 0.0).unwrap().edges.len(), 6);
        assert!(build_feature_net(&m.slice(s![.., 0..1]).to_owned(), &rows, 0.0).is_err());
    }

    #[test]
    fn feature_net_drops_top_third() {
        // three features whose pair correlations are 0.1-ish, 0.2-ish and 0.9-ish
        let m = array![
            [1.0, 1.0, 2.0],
            [2.0, 1.9, 0.0],
            [3.0, 3.2, 1.0],
            [4.0, 3.9, 3.0],
            [5.0, 5.1, 0.5]
        ];
        let rows: Vec<usize> = (0..5).collect();
        let g = build_feature_net(&m, &rows, 1.0 / 3.0).unwrap();
        assert_eq!(g.edges.len(), 2);
        assert!(g.edges.iter().all(|e| (e.u, e.v) != (0, 1)));
    }

    #[test]
    fn feature_net_ties_broken_by_index() {
        // every pair uncorrelated: weight 0 everywhere
        let m = array![[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]];
        let g = build_feature_net(&m, &[0, 1], 0.5).unwrap();
        let pairs: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.u, e.v)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn patient_net_examples() {
        let m = array![[0.1, 0.5, 0.9], [0.1, 0.5, 0.9], [0.9, 0.2, 0.3]];
        let g = build_patient_net(&m, &[0, 1, 2], 1.0).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].weight - 1.0).abs() < 1e-12);
        assert!(build_patient_net(&m, &[0, 1, 2], 1.01).unwrap().edges.is_empty());
    }

    #[test]
    fn patient_net_matches_exhaustive_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = Array2::from_shape_fn((10, 8), |_| rng.random::<f64>());
        let rows: Vec<usize> = (0..10).collect();
        let g = build_patient_net(&m, &rows, 0.3).unwrap();
        let mut expect = Vec::new();
        for u in 0..10 {
            for v in (u + 1)..10 {
                let w = pearson_abs(&m.row(u).to_vec(), &m.row(v).to_vec()).unwrap();
                if w >= 0.3 {
                    expect.push((u, v));
                }
            }
        }
        let got: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.u, e.v)).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn rate_threshold_keeps_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Array2::from_shape_fn((20, 6), |_| rng.random::<f64>());
        let rows: Vec<usize> = (0..20).collect();
        let t = patient_threshold_for_rate(&m, &rows, 0.9).unwrap();
        let g = build_patient_net(&m, &rows, t).unwrap();
        assert_eq!(g.edges.len(), kept_edge_count(190, 0.9));
        assert!(patient_threshold_for_rate(&m, &rows, 1.0).unwrap() > 1.0);
    }

    #[test]
    fn induced_and_roundtrip() {
        let g = SimilarityGraph {
            node_count: 4,
            edges: vec![Edge { u: 0, v: 2, weight: 0.25 }, Edge { u: 1, v: 3, weight: 0.125 }, Edge { u: 2, v: 3, weight: 0.5 }],
            kind: NetKind::FeatureNet,
            parameter: 0.9,
        };
        let sub = g.induced(&[3, 2]);
        assert_eq!(sub.edges, vec![Edge { u: 0, v: 1, weight: 0.5 }]);
        let dir = tempfile::tempdir().unwrap();
        g.write(dir.path(), "net").unwrap();
        assert_eq!(SimilarityGraph::read(dir.path(), "net").unwrap(), g);
    }
}
