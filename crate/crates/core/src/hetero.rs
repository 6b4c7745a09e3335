//! Typed graph joining one omic's feature similarity network and patient
//! similarity network through complete feature→patient edges.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};
use crate::similarity::SimilarityGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Patient,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    /// patient-similar-patient
    Psp,
    /// feature-similar-feature
    Fsf,
    /// feature-attribute-patient
    Fap,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::Psp, Relation::Fsf, Relation::Fap];

    pub fn src_type(self) -> NodeType {
        match self {
            Relation::Psp => NodeType::Patient,
            Relation::Fsf | Relation::Fap => NodeType::Feature,
        }
    }

    pub fn dst_type(self) -> NodeType {
        match self {
            Relation::Psp | Relation::Fap => NodeType::Patient,
            Relation::Fsf => NodeType::Feature,
        }
    }

    pub fn edge_dim(self) -> usize {
        match self {
            Relation::Fsf => 2,
            Relation::Psp | Relation::Fap => 1,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Relation::Psp => "psp",
            Relation::Fsf => "fsf",
            Relation::Fap => "fap",
        }
    }
}

/// Directed edges of one relation with their attribute rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEdges {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub attr: Array2<f64>,
}

impl RelationEdges {
    fn empty(dim: usize) -> RelationEdges {
        RelationEdges { src: Arc::from(vec![]), dst: Arc::from(vec![]), attr: Array2::zeros((0, dim)) }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    /// Patient similarity network only: feature nodes are removed.
    Homogeneous,
    /// Feature-similar-feature edge attributes zeroed.
    NoEdgeAttr,
    /// `[relevance, desirability]` feature-node attributes zeroed.
    NoNodeAttr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    /// Patient nodes × selected features.
    pub patient_x: Array2<f64>,
    /// Feature nodes × (fit patients + 2): values, relevance, desirability.
    pub feature_x: Array2<f64>,
    pub psp: RelationEdges,
    pub fsf: RelationEdges,
    pub fap: RelationEdges,
}

/// Everything [`assemble`] needs. `matrix` holds scaled values of the selected
/// features for all patients of the dataset.
pub struct GraphInputs<'a> {
    pub matrix: &'a Array2<f64>,
    /// Dataset rows that become patient nodes, in node order.
    pub patient_rows: &'a [usize],
    /// Dataset rows whose values form the feature-node attributes.
    pub fit_rows: &'a [usize],
    /// Feature net over the selected features.
    pub feature_net: &'a SimilarityGraph,
    /// Patient net whose node `i` is `patient_rows[i]`.
    pub patient_net: &'a SimilarityGraph,
    pub relevance: &'a [f64],
    pub node_tau: &'a [f64],
    /// Per edge of `feature_net`.
    pub edge_tau: &'a [f64],
}

fn undirected(net: &SimilarityGraph, attr: impl Fn(usize) -> Vec<f64>, dim: usize) -> RelationEdges {
    let mut src = Vec::with_capacity(2 * net.edges.len());
    let mut dst = Vec::with_capacity(2 * net.edges.len());
    let mut rows = Vec::with_capacity(2 * net.edges.len() * dim);
    for (k, e) in net.edges.iter().enumerate() {
        let a = attr(k);
        for (s, d) in [(e.u, e.v), (e.v, e.u)] {
            src.push(s);
            dst.push(d);
            rows.extend_from_slice(&a);
        }
    }
    let n = src.len();
    RelationEdges { src: src.into(), dst: dst.into(), attr: Array2::from_shape_vec((n, dim), rows).expect("edge attrs") }
}

pub fn assemble(inp: &GraphInputs) -> Result<HeteroGraph> {
    let b = inp.matrix.ncols();
    if inp.feature_net.node_count != b || inp.relevance.len() != b || inp.node_tau.len() != b {
        return Err(Error::shape(format!(
            "{b} selected features but net has {} nodes, {} relevance, {} desirability values",
            inp.feature_net.node_count,
            inp.relevance.len(),
            inp.node_tau.len()
        )));
    }
    if inp.edge_tau.len() != inp.feature_net.edges.len() {
        return Err(Error::shape("edge desirability count differs from feature net edges"));
    }
    if inp.patient_net.node_count != inp.patient_rows.len() {
        return Err(Error::shape("patient net size differs from patient node count"));
    }
    let patient_x = inp.matrix.select(Axis(0), inp.patient_rows);
    let n_fit = inp.fit_rows.len();
    let mut feature_x = Array2::zeros((b, n_fit + 2));
    for f in 0..b {
        for (k, &r) in inp.fit_rows.iter().enumerate() {
            feature_x[[f, k]] = inp.matrix[[r, f]];
        }
        feature_x[[f, n_fit]] = inp.relevance[f];
        feature_x[[f, n_fit + 1]] = inp.node_tau[f];
    }
    let psp = undirected(inp.patient_net, |k| vec![inp.patient_net.edges[k].weight], 1);
    let fsf = undirected(inp.feature_net, |k| vec![inp.feature_net.edges[k].weight, inp.edge_tau[k]], 2);
    let n = inp.patient_rows.len();
    let mut src = Vec::with_capacity(b * n);
    let mut dst = Vec::with_capacity(b * n);
    let mut attr = Array2::zeros((b * n, 1));
    for f in 0..b {
        for p in 0..n {
            attr[[src.len(), 0]] = patient_x[[p, f]];
            src.push(f);
            dst.push(p);
        }
    }
    let fap = RelationEdges { src: src.into(), dst: dst.into(), attr };
    Ok(HeteroGraph { patient_x, feature_x, psp, fsf, fap })
}

impl HeteroGraph {
    pub fn n_patients(&self) -> usize {
        self.patient_x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.feature_x.nrows()
    }

    pub fn relation(&self, r: Relation) -> &RelationEdges {
        match r {
            Relation::Psp => &self.psp,
            Relation::Fsf => &self.fsf,
            Relation::Fap => &self.fap,
        }
    }

    pub fn node_count(&self, t: NodeType) -> usize {
        match t {
            NodeType::Patient => self.n_patients(),
            NodeType::Feature => self.n_features(),
        }
    }

    /// Checks that every edge endpoint exists in its typed node set.
    pub fn validate(&self) -> Result<()> {
        for r in Relation::ALL {
            let e = self.relation(r);
            let (ns, nd) = (self.node_count(r.src_type()), self.node_count(r.dst_type()));
            if e.dst.len() != e.len() || e.attr.nrows() != e.len() || e.attr.ncols() != r.edge_dim() {
                return Err(Error::shape(format!("{} edge arrays disagree", r.tag())));
            }
            if e.src.iter().any(|&s| s >= ns) || e.dst.iter().any(|&d| d >= nd) {
                return Err(Error::shape(format!("{} edge endpoint outside its node set", r.tag())));
            }
        }
        Ok(())
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> HeteroGraph {
        match ablation {
            Ablation::None => {}
            Ablation::Homogeneous => {
                self.feature_x = Array2::zeros((0, self.feature_x.ncols()));
                self.fsf = RelationEdges::empty(2);
                self.fap = RelationEdges::empty(1);
            }
            Ablation::NoEdgeAttr => self.fsf.attr.fill(0.0),
            Ablation::NoNodeAttr => {
                let c = self.feature_x.ncols();
                self.feature_x.slice_mut(ndarray::s![.., c - 2..]).fill(0.0);
            }
        }
        self
    }

    /// Zeroes feature `f`'s patient column, its node attributes and its
    /// feature→patient edge attributes; all edges stay.
    pub fn ablate_feature(&self, f: usize) -> Result<HeteroGraph> {
        if f >= self.patient_x.ncols() {
            return Err(Error::data(format!("feature {f} not in graph with {} features", self.patient_x.ncols())));
        }
        let mut g = self.clone();
        g.patient_x.column_mut(f).fill(0.0);
        if f < g.feature_x.nrows() {
            g.feature_x.row_mut(f).fill(0.0);
        }
        for (k, &s) in self.fap.src.iter().enumerate() {
            if s == f {
                g.fap.attr[[k, 0]] = 0.0;
            }
        }
        Ok(g)
    }

    /// Writes `<stem>.json` plus one CSV per relation and node type.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for r in Relation::ALL {
            let e = self.relation(r);
            let path = dir.join(format!("{stem}_{}.csv", r.tag()));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header = vec!["src".to_string(), "dst".to_string()];
            header.extend((0..r.edge_dim()).map(|k| format!("attr{k}")));
            w.write_record(&header)?;
            for k in 0..e.len() {
                let mut rec = vec![e.src[k].to_string(), e.dst[k].to_string()];
                rec.extend(e.attr.row(k).iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush().map_err(|err| Error::io(&path, err))?;
        }
        write_matrix(&dir.join(format!("{stem}_patient_x.csv")), &self.patient_x)?;
        write_matrix(&dir.join(format!("{stem}_feature_x.csv")), &self.feature_x)?;
        let header = GraphHeader {
            patients: self.n_patients(),
            features: self.n_features(),
            patient_dim: self.patient_x.ncols(),
            feature_dim: self.feature_x.ncols(),
            edges: Relation::ALL.iter().map(|&r| self.relation(r).len()).collect(),
        };
        write_json(&dir.join(format!("{stem}.json")), &header)
    }

    pub fn read(dir: &Path, stem: &str) -> Result<HeteroGraph> {
        let header: GraphHeader = read_json(&dir.join(format!("{stem}.json")))?;
        let patient_x = read_matrix(&dir.join(format!("{stem}_patient_x.csv")), header.patient_dim)?;
        let feature_x = read_matrix(&dir.join(format!("{stem}_feature_x.csv")), header.feature_dim)?;
        let mut rels = Vec::new();
        for r in Relation::ALL {
            let m = read_matrix(&dir.join(format!("{stem}_{}.csv", r.tag())), 2 + r.edge_dim())?;
            let src: Vec<usize> = m.column(0).iter().map(|&v| v as usize).collect();
            let dst: Vec<usize> = m.column(1).iter().map(|&v| v as usize).collect();
            let attr = m.slice(ndarray::s![.., 2..]).to_owned();
            rels.push(RelationEdges { src: src.into(), dst: dst.into(), attr });
        }
        let fap = rels.pop().expect("fap");
        let fsf = rels.pop().expect("fsf");
        let psp = rels.pop().expect("psp");
        let g = HeteroGraph { patient_x, feature_x, psp, fsf, fap };
        if g.n_patients() != header.patients || g.n_features() != header.features {
            return Err(Error::data(format!("{}: graph sizes differ from header", dir.display())));
        }
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    patients: usize,
    features: usize,
    patient_dim: usize,
    feature_dim: usize,
    edges: Vec<usize>,
}

/// Headerless CSV of a dense matrix, shortest round-trip float formatting.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path, cols: usize) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Usage(format!("cannot open {}", path.display())),
        _ => Error::Csv(e),
    })?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        // edge files carry a header line
        if line == 0 && rec.get(0) == Some("src") {
            continue;
        }
        if rec.len() != cols {
            return Err(Error::Parse { path: path.into(), line: line + 1, msg: format!("{} fields, expected {cols}", rec.len()) });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: line + 1,
                msg: format!("not a number: {field:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{Edge, NetKind};
    use ndarray::array;

    fn graph(n: usize, edges: &[(usize, usize, f64)], kind: NetKind) -> SimilarityGraph {
        SimilarityGraph {
            node_count: n,
            edges: edges.iter().map(|&(u, v, weight)| Edge { u, v, weight }).collect(),
            kind,
            parameter: 0.0,
        }
    }

    fn toy() -> HeteroGraph {
        // 3 patients (dataset rows 0..3) × 2 selected features
        let m = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]];
        let fnet = graph(2, &[(0, 1, 0.25)], NetKind::FeatureNet);
        let pnet = graph(3, &[(0, 2, 0.9)], NetKind::PatientNet);
        assemble(&GraphInputs {
            matrix: &m,
            patient_rows: &[0, 1, 2],
            fit_rows: &[0, 1],
            feature_net: &fnet,
            patient_net: &pnet,
            relevance: &[1.0, 0.5],
            node_tau: &[0.3, 0.4],
            edge_tau: &[0.7],
        })
        .unwrap()
    }

    #[test]
    fn toy_tensors_match_hand_assembly() {
        let g = toy();
        g.validate().unwrap();
        assert_eq!(g.patient_x, array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]);
        assert_eq!(g.feature_x, array![[0.1, 0.3, 1.0, 0.3], [0.2, 0.4, 0.5, 0.4]]);
        assert_eq!(&*g.psp.src, &[0, 2]);
        assert_eq!(&*g.psp.dst, &[2, 0]);
        assert_eq!(g.psp.attr, array![[0.9], [0.9]]);
        assert_eq!(g.fsf.attr, array![[0.25, 0.7], [0.25, 0.7]]);
        assert_eq!(g.fap.len(), 6);
        assert_eq!(&*g.fap.src, &[0, 0, 0, 1, 1, 1]);
        assert_eq!(&*g.fap.dst, &[0, 1, 2, 0, 1, 2]);
        assert_eq!(g.fap.attr.column(0).to_vec(), vec![0.1, 0.3, 0.5, 0.2, 0.4, 0.6]);
    }

    #[test]
    fn empty_patient_net_is_valid() {
        let m = array![[0.1, 0.2], [0.3, 0.4]];
        let fnet = graph(2, &[], NetKind::FeatureNet);
        let pnet = graph(2, &[], NetKind::PatientNet);
        let g = assemble(&GraphInputs {
            matrix: &m,
            patient_rows: &[0, 1],
            fit_rows: &[0, 1],
            feature_net: &fnet,
            patient_net: &pnet,
            relevance: &[0.0, 1.0],
            node_tau: &[0.2, 0.2],
            edge_tau: &[],
        })
        .unwrap();
        g.validate().unwrap();
        assert!(g.psp.is_empty());
        assert_eq!(g.fap.len(), 4);
    }

    #[test]
    fn ablations() {
        let g = toy();
        let h = g.clone().with_ablation(Ablation::Homogeneous);
        assert_eq!((h.n_features(), h.fsf.len(), h.fap.len(), h.psp.len()), (0, 0, 0, 2));
        h.validate().unwrap();
        let e = g.clone().with_ablation(Ablation::NoEdgeAttr);
        assert!(e.fsf.attr.iter().all(|&v| v == 0.0));
        assert_eq!(e.psp, g.psp);
        let n = g.clone().with_ablation(Ablation::NoNodeAttr);
        assert_eq!(n.feature_x, array![[0.1, 0.3, 0.0, 0.0], [0.2, 0.4, 0.0, 0.0]]);
    }

    #[test]
    fn ablate_feature_zeroes_only_its_signal() {
        let g = toy();
        let a = g.ablate_feature(1).unwrap();
        assert_eq!(a.patient_x.column(1).sum(), 0.0);
        assert_eq!(a.patient_x.column(0), g.patient_x.column(0));
        assert_eq!(a.feature_x.row(1).sum(), 0.0);
        assert_eq!(a.fap.attr.column(0).to_vec(), vec![0.1, 0.3, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!((a.fap.len(), a.fsf.len(), a.psp.len()), (6, 2, 2));
        assert!(g.ablate_feature(2).is_err());
    }

    #[test]
    fn roundtrip_through_files() {
        let g = toy();
        let dir = tempfile::tempdir().unwrap();
        g.write(dir.path(), "omic").unwrap();
        assert_eq!(HeteroGraph::read(dir.path(), "omic").unwrap(), g);
    }
}
