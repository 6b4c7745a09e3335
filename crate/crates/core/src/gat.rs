//! Relation-specific multi-head graph attention encoder with a linear decoder
//! for one omic.
//!
//! For relation `r` and head `k`, an edge `u → v` gets the logit
//! `leaky(a_sᵀ W_s h_u + a_dᵀ W_d h_v + a_eᵀ W_e e_uv)`, normalised by a softmax
//! over the in-edges of `v`. Messages `α · W_s h_u` are summed per destination,
//! heads are averaged, and relations delivering to the same node are averaged.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::error::{Error, Result};
use crate::hetero::{HeteroGraph, NodeType, Relation, RelationEdges};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatConfig {
    pub hidden: Vec<usize>,
    pub heads: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig { hidden: vec![100, 100, 50], heads: 3, dropout: 0.0, leaky_slope: 0.01 }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden dimensions must be non-empty and positive".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("at least one attention head is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub w_src: ParamId,
    /// Same id as `w_src` when source and destination share a node type.
    pub w_dst: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
    pub a_edge: ParamId,
    pub w_edge: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Heads of each relation, indexed in [`Relation::ALL`] order.
    pub heads: [Vec<HeadParams>; 3],
}

fn rel_index(r: Relation) -> usize {
    Relation::ALL.iter().position(|&x| x == r).expect("relation")
}

/// Encoder layers plus decoder of one omic.
#[derive(Debug, Clone, PartialEq)]
pub struct OmicModel {
    pub cfg: GatConfig,
    pub classes: usize,
    pub patient_dim: usize,
    pub feature_dim: usize,
    pub params: Params,
    pub layers: Vec<LayerParams>,
    pub dec_w: ParamId,
    pub dec_b: ParamId,
}

impl OmicModel {
    pub fn new<R: Rng>(patient_dim: usize, feature_dim: usize, classes: usize, cfg: &GatConfig, rng: &mut R) -> Result<OmicModel> {
        cfg.validate()?;
        let mut params = Params::new();
        let mut layers = Vec::with_capacity(cfg.hidden.len());
        let (mut dp, mut df) = (patient_dim, feature_dim);
        for (l, &out) in cfg.hidden.iter().enumerate() {
            let dim_of = |t: NodeType| if t == NodeType::Patient { dp } else { df };
            let heads = Relation::ALL.map(|r| {
                (0..cfg.heads)
                    .map(|k| {
                        let tag = format!("l{l}.{}.h{k}", r.tag());
                        let w_src = params.add_glorot(format!("{tag}.w_src"), out, dim_of(r.src_type()), rng);
                        let w_dst = if r.src_type() == r.dst_type() {
                            w_src
                        } else {
                            params.add_glorot(format!("{tag}.w_dst"), out, dim_of(r.dst_type()), rng)
                        };
                        HeadParams {
                            w_src,
                            w_dst,
                            a_src: params.add_glorot(format!("{tag}.a_src"), out, 1, rng),
                            a_dst: params.add_glorot(format!("{tag}.a_dst"), out, 1, rng),
                            a_edge: params.add_glorot(format!("{tag}.a_edge"), out, 1, rng),
                            w_edge: params.add_glorot(format!("{tag}.w_edge"), out, r.edge_dim(), rng),
                        }
                    })
                    .collect()
            });
            layers.push(LayerParams { heads });
            dp = out;
            df = out;
        }
        let last = *cfg.hidden.last().expect("validated");
        let dec_w = params.add_glorot("dec.w", classes, last, rng);
        let dec_b = params.add("dec.b", Array2::zeros((1, classes)));
        Ok(OmicModel { cfg: cfg.clone(), classes, patient_dim, feature_dim, params, layers, dec_w, dec_b })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(patient_dim: usize, feature_dim: usize, classes: usize, cfg: &GatConfig, params: Params) -> Result<OmicModel> {
        let mut m = OmicModel::new(patient_dim, feature_dim, classes, cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        check_layout(&m.params, &params)?;
        m.params = params;
        Ok(m)
    }

    /// Normalised attention `α` (E×1) and projected sources `W_s H_src` for
    /// one relation head.
    pub fn attention(
        &self,
        tape: &mut Tape,
        head: &HeadParams,
        h_src: Var,
        h_dst: Var,
        edges: &RelationEdges,
        edge_attr: Var,
    ) -> Result<(Var, Var)> {
        let p = &self.params;
        let ws = tape.param(p, head.w_src);
        let proj_src = tape.matmul_bt(h_src, ws)?;
        let proj_dst = if head.w_dst == head.w_src && h_src == h_dst {
            proj_src
        } else {
            let wd = tape.param(p, head.w_dst);
            tape.matmul_bt(h_dst, wd)?
        };
        let a_s = tape.param(p, head.a_src);
        let a_d = tape.param(p, head.a_dst);
        let a_e = tape.param(p, head.a_edge);
        let we = tape.param(p, head.w_edge);
        let s = tape.matmul(proj_src, a_s)?;
        let d = tape.matmul(proj_dst, a_d)?;
        let s = tape.gather_rows(s, edges.src.clone())?;
        let d = tape.gather_rows(d, edges.dst.clone())?;
        // attr · W_eᵀ · a_e, contracted on the small side first
        let we_t = tape.transpose(we);
        let v = tape.matmul(we_t, a_e)?;
        let e = tape.matmul(edge_attr, v)?;
        let logit = tape.add(s, d)?;
        let logit = tape.add(logit, e)?;
        let logit = tape.leaky_relu(logit, self.cfg.leaky_slope);
        let alpha = tape.segment_softmax(logit, edges.dst.clone())?;
        Ok((alpha, proj_src))
    }

    /// Head-averaged aggregation of one relation into its destination nodes.
    #[allow(clippy::too_many_arguments)]
    fn relation_forward(
        &self,
        tape: &mut Tape,
        heads: &[HeadParams],
        h_src: Var,
        h_dst: Var,
        edges: &RelationEdges,
        edge_attr: Var,
        n_dst: usize,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        for head in heads {
            let (alpha, proj) = self.attention(tape, head, h_src, h_dst, edges, edge_attr)?;
            let agg = tape.edge_aggregate(proj, alpha, edges.src.clone(), edges.dst.clone(), n_dst)?;
            total = Some(match total {
                Some(t) => tape.add(t, agg)?,
                None => agg,
            });
        }
        Ok(tape.scale(total.expect("heads ≥ 1"), 1.0 / heads.len() as f64))
    }

    /// New representations of all nodes of type `t`.
    #[allow(clippy::too_many_arguments)]
    fn update_type(
        &self,
        tape: &mut Tape,
        layer: &LayerParams,
        graph: &HeteroGraph,
        t: NodeType,
        reps: [Var; 2],
        edge_attrs: &[Var; 3],
    ) -> Result<Var> {
        let rep = |nt: NodeType| if nt == NodeType::Patient { reps[0] } else { reps[1] };
        let n = graph.node_count(t);
        let mut delivering = vec![0usize; n];
        let mut sum: Option<Var> = None;
        for r in Relation::ALL.into_iter().filter(|r| r.dst_type() == t) {
            let edges = graph.relation(r);
            if edges.is_empty() {
                continue;
            }
            let mut hit = vec![false; n];
            for &d in edges.dst.iter() {
                hit[d] = true;
            }
            for (c, h) in delivering.iter_mut().zip(hit) {
                *c += h as usize;
            }
            let i = rel_index(r);
            let out = self.relation_forward(tape, &layer.heads[i], rep(r.src_type()), rep(t), edges, edge_attrs[i], n)?;
            sum = Some(match sum {
                Some(s) => tape.add(s, out)?,
                None => out,
            });
        }
        let inv: Arc<[f64]> = delivering.iter().map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 }).collect();
        let isolated: Arc<[f64]> = delivering.iter().map(|&c| if c == 0 { 1.0 } else { 0.0 }).collect();
        let mean = match sum {
            Some(s) => Some(tape.scale_rows(s, inv)?),
            None => None,
        };
        let pre = if isolated.iter().any(|&v| v > 0.0) {
            // self fallback through the same-type relation's weights, head-averaged
            let same = Relation::ALL.into_iter().find(|r| r.src_type() == t && r.dst_type() == t).expect("same-type relation");
            let h = rep(t);
            let mut acc: Option<Var> = None;
            for head in &layer.heads[rel_index(same)] {
                let w = tape.param(&self.params, head.w_src);
                let p = tape.matmul_bt(h, w)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, p)?,
                    None => p,
                });
            }
            let own = tape.scale(acc.expect("heads ≥ 1"), 1.0 / self.cfg.heads as f64);
            let own = tape.scale_rows(own, isolated)?;
            match mean {
                Some(m) => tape.add(m, own)?,
                None => own,
            }
        } else {
            mean.expect("every node receives messages")
        };
        Ok(tape.leaky_relu(pre, self.cfg.leaky_slope))
    }

    /// Final patient representations; `rng` enables dropout.
    pub fn encode(&self, tape: &mut Tape, graph: &HeteroGraph, mut rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        if graph.patient_x.ncols() != self.patient_dim {
            return Err(Error::shape(format!("patient attributes {} wide, model expects {}", graph.patient_x.ncols(), self.patient_dim)));
        }
        if graph.n_features() > 0 && graph.feature_x.ncols() != self.feature_dim {
            return Err(Error::shape(format!("feature attributes {} wide, model expects {}", graph.feature_x.ncols(), self.feature_dim)));
        }
        let mut hp = tape.constant(graph.patient_x.clone());
        let mut hf = tape.constant(graph.feature_x.clone());
        let edge_attrs = Relation::ALL.map(|r| tape.constant(graph.relation(r).attr.clone()));
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let new_p = self.update_type(tape, layer, graph, NodeType::Patient, [hp, hf], &edge_attrs)?;
            // feature states after the last layer never reach the decoder
            let new_f = if l + 1 < n_layers && graph.n_features() > 0 {
                Some(self.update_type(tape, layer, graph, NodeType::Feature, [hp, hf], &edge_attrs)?)
            } else {
                None
            };
            hp = new_p;
            if let Some(f) = new_f {
                hf = f;
            }
            if let Some(r) = rng.as_deref_mut() {
                hp = tape.dropout(hp, self.cfg.dropout, r)?;
                if new_f.is_some() {
                    hf = tape.dropout(hf, self.cfg.dropout, r)?;
                }
            }
        }
        Ok(hp)
    }

    /// Class logits per patient node.
    pub fn forward(&self, tape: &mut Tape, graph: &HeteroGraph, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let h = self.encode(tape, graph, rng)?;
        let w = tape.param(&self.params, self.dec_w);
        let b = tape.param(&self.params, self.dec_b);
        let o = tape.matmul_bt(h, w)?;
        tape.add_row(o, b)
    }

    /// Softmax probabilities per patient node, no dropout.
    pub fn predict_proba(&self, graph: &HeteroGraph) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let logits = self.forward(&mut tape, graph, None)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).clone())
    }
}

pub(crate) fn check_layout(expected: &Params, got: &Params) -> Result<()> {
    let same = expected.len() == got.len()
        && expected.ids().all(|id| expected.name(id) == got.name(id) && expected.get(id).dim() == got.get(id).dim());
    if same {
        Ok(())
    } else {
        Err(Error::data("checkpoint does not match the configured model layout"))
    }
}

/// Summed cross-entropy over the patient nodes in `rows`.
pub fn ce_loss(tape: &mut Tape, logits: Var, rows: &[usize], labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, Arc::from(rows), Arc::from(labels))
}
