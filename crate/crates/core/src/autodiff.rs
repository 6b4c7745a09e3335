//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value and operands. [`Tape::backward`] walks the tape in reverse from a
//! scalar loss and accumulates gradients; parameters read through
//! [`Tape::param`] get their gradient collected in [`Gradients::params`].
//!
//! Besides the usual dense operators the tape has the gather/scatter and
//! segment-softmax primitives needed for attention over edge lists.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_json, write_json};
use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Named trainable matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Mat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    params: Vec<CheckpointEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: [usize; 2],
}

impl Params {
    pub fn new() -> Params {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform initialised `rows × cols` matrix.
    pub fn add_glorot<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let m = Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound));
        self.add(name, m)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    /// Little-endian `f64` payload of every parameter, row-major, in id order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let total: usize = self.values.iter().map(|m| m.len()).sum();
        let mut out = Vec::with_capacity(total * 8);
        for m in &self.values {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes `<stem>.bin` and the shape manifest `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bin = dir.join(format!("{stem}.bin"));
        let mut f = fs::File::create(&bin).map_err(|e| Error::io(&bin, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&bin, e))?;
        let manifest = CheckpointManifest {
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, m)| CheckpointEntry { name: n.clone(), shape: [m.nrows(), m.ncols()] })
                .collect(),
        };
        write_json(&dir.join(format!("{stem}.json")), &manifest)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Params> {
        let manifest: CheckpointManifest = read_json(&dir.join(format!("{stem}.json")))?;
        let bin = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let expected: usize = manifest.params.iter().map(|p| p.shape[0] * p.shape[1] * 8).sum();
        if bytes.len() != expected {
            return Err(Error::data(format!("{}: {} bytes, manifest expects {expected}", bin.display(), bytes.len())));
        }
        let mut floats = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut params = Params::new();
        for entry in manifest.params {
            let [r, c] = entry.shape;
            let data: Vec<f64> = floats.by_ref().take(r * c).collect();
            let m = Mat::from_shape_vec((r, c), data).map_err(|e| Error::shape(e.to_string()))?;
            params.add(entry.name, m);
        }
        Ok(params)
    }
}

type Index = Arc<[usize]>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulBT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a (n×m) + b (1×m)` broadcast over rows
    AddRow(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Transpose(Var),
    GatherRows(Var, Index),
    ScatterAddRows(Var, Index),
    SegmentSoftmax(Var, Index),
    /// `a (n×d)` with row `i` scaled by `s[i, 0]`
    MulRows(Var, Var),
    ScaleRows(Var, Arc<[f64]>),
    /// `out[dst[e]] += alpha[e] · h[src[e]]`
    EdgeAggregate { h: Var, alpha: Var, src: Index, dst: Index },
    ConcatCols(Vec<Var>),
    MulConst(Var, Arc<Mat>),
    SoftmaxRows(Var),
    CrossEntropy { logits: Var, rows: Index, labels: Index },
    OuterRows(Var, Var),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<(ParamId, Var)>,
}

fn softmax_row(row: ndarray::ArrayView1<f64>) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-segment softmax of a column of logits; `segments[i]` names the group of
/// entry `i`. Uses max-subtraction within each group.
pub fn segment_softmax(logits: &[f64], segments: &[usize]) -> Vec<f64> {
    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; n_seg];
    for (&l, &s) in logits.iter().zip(segments) {
        max[s] = max[s].max(l);
    }
    let exps: Vec<f64> = logits.iter().zip(segments).map(|(&l, &s)| (l - max[s]).exp()).collect();
    let mut sums = vec![0.0; n_seg];
    for (&e, &s) in exps.iter().zip(segments) {
        sums[s] += e;
    }
    exps.iter().zip(segments).map(|(&e, &s)| e / sums[s]).collect()
}

fn standard(m: &Mat) -> std::borrow::Cow<'_, [f64]> {
    match m.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(m.iter().copied().collect()),
    }
}

/// `out[to[e]] += w[e] · m[from[e]]` over rows.
fn edge_sum(m: &Mat, w: &Mat, from: &[usize], to: &[usize], n_out: usize) -> Mat {
    let d = m.ncols();
    let src = standard(m);
    let mut out = vec![0.0; n_out * d];
    for (e, (&f, &t)) in from.iter().zip(to).enumerate() {
        let k = w[[e, 0]];
        for (o, x) in out[t * d..][..d].iter_mut().zip(&src[f * d..][..d]) {
            *o += k * x;
        }
    }
    Mat::from_shape_vec((n_out, d), out).expect("edge sum shape")
}

fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a registered parameter.
    pub fn variable(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Reads a parameter; repeated reads on one tape share a node.
    pub fn param(&mut self, params: &Params, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Param, true);
        self.param_vars.push((id, v));
        v
    }

    fn check(&self, cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(Error::shape(msg()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        self.check(va.ncols() == vb.nrows(), || format!("matmul {:?} · {:?}", va.dim(), vb.dim()))?;
        let out = va.dot(vb);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// `a · bᵀ`, the layout of a linear map `x Wᵀ` with `W` stored out × in.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        self.check(va.ncols() == vb.ncols(), || format!("matmul_bt {:?} · {:?}ᵀ", va.dim(), vb.dim()))?;
        let out = va.dot(&vb.t());
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMulBT(a, b), ng))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (da, db) = (self.value(a).dim(), self.value(b).dim());
        self.check(da == db, || format!("{what} {da:?} vs {db:?}"))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a) + self.value(b);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a) - self.value(b);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a) * self.value(b);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(row));
        self.check(vb.nrows() == 1 && vb.ncols() == va.ncols(), || format!("add_row {:?} + {:?}", va.dim(), vb.dim()))?;
        let out = va + vb;
        let ng = self.needs(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        let ng = self.needs(&[a]);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|v| leaky(v, slope));
        let ng = self.needs(&[a]);
        self.push(out, Op::LeakyRelu(a, slope), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let ng = self.needs(&[a]);
        self.push(out, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let ng = self.needs(&[a]);
        self.push(out, Op::Log(a), ng)
    }

    /// Sum of all entries as a 1×1 matrix.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(&[a]);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let ng = self.needs(&[a]);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let va = self.value(a);
        self.check(idx.iter().all(|&i| i < va.nrows()), || format!("gather index out of {} rows", va.nrows()))?;
        let out = va.select(Axis(0), &idx);
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::GatherRows(a, idx), ng))
    }

    /// Adds row `i` of `a` into output row `idx[i]` of an `n_out`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, n_out: usize) -> Result<Var> {
        let va = self.value(a);
        self.check(idx.len() == va.nrows() && idx.iter().all(|&i| i < n_out), || {
            format!("scatter of {} rows via {} indices into {n_out}", va.nrows(), idx.len())
        })?;
        let mut out = Mat::zeros((n_out, va.ncols()));
        for (r, &dst) in idx.iter().enumerate() {
            let mut o = out.row_mut(dst);
            o += &va.row(r);
        }
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::ScatterAddRows(a, idx), ng))
    }

    /// Softmax of an `E×1` logit column within the groups given by `segments`.
    pub fn segment_softmax(&mut self, logits: Var, segments: Arc<[usize]>) -> Result<Var> {
        let v = self.value(logits);
        self.check(v.ncols() == 1 && v.nrows() == segments.len(), || {
            format!("segment softmax of {:?} with {} segment ids", v.dim(), segments.len())
        })?;
        let col: Vec<f64> = v.column(0).to_vec();
        let out = Mat::from_shape_vec((col.len(), 1), segment_softmax(&col, &segments)).expect("column shape");
        let ng = self.needs(&[logits]);
        Ok(self.push(out, Op::SegmentSoftmax(logits, segments), ng))
    }

    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (va, vs) = (self.value(a), self.value(s));
        self.check(vs.ncols() == 1 && vs.nrows() == va.nrows(), || format!("mul_rows {:?} by {:?}", va.dim(), vs.dim()))?;
        let mut out = va.clone();
        Zip::from(out.rows_mut()).and(vs.column(0)).for_each(|mut row, &k| row *= k);
        let ng = self.needs(&[a, s]);
        Ok(self.push(out, Op::MulRows(a, s), ng))
    }

    /// Row `i` scaled by the constant `s[i]`.
    pub fn scale_rows(&mut self, a: Var, s: Arc<[f64]>) -> Result<Var> {
        let va = self.value(a);
        self.check(s.len() == va.nrows(), || format!("scale_rows {:?} by {}", va.dim(), s.len()))?;
        let mut out = va.clone();
        for (mut row, &k) in out.rows_mut().into_iter().zip(s.iter()) {
            row *= k;
        }
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::ScaleRows(a, s), ng))
    }

    /// Attention-weighted sum of source rows into `n_out` destination rows;
    /// the same as gather, `mul_rows` and scatter without the edge-sized
    /// intermediates.
    pub fn edge_aggregate(&mut self, h: Var, alpha: Var, src: Index, dst: Index, n_out: usize) -> Result<Var> {
        let (vh, va) = (self.value(h), self.value(alpha));
        self.check(
            src.len() == dst.len()
                && va.dim() == (src.len(), 1)
                && src.iter().all(|&s| s < vh.nrows())
                && dst.iter().all(|&d| d < n_out),
            || format!("edge aggregate of {:?} with {:?} weights over {} edges into {n_out}", vh.dim(), va.dim(), src.len()),
        )?;
        let out = edge_sum(vh, va, &src, &dst, n_out);
        let ng = self.needs(&[h, alpha]);
        Ok(self.push(out, Op::EdgeAggregate { h, alpha, src, dst }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).nrows();
        self.check(parts.iter().all(|&p| self.value(p).nrows() == n), || "concat of mismatched rows".into())?;
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?;
        let ng = self.needs(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Elementwise product with a constant matrix (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Arc<Mat>) -> Result<Var> {
        self.check(self.value(a).dim() == c.dim(), || "mul_const shape".into())?;
        let out = self.value(a) * &*c;
        let ng = self.needs(&[a]);
        Ok(self.push(out, Op::MulConst(a, c), ng))
    }

    /// Inverted dropout; `rate == 0` returns `a` itself.
    pub fn dropout<R: Rng>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask = self.value(a).mapv(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.mul_const(a, Arc::new(mask))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = va.clone();
        for (mut o, row) in out.rows_mut().into_iter().zip(va.rows()) {
            for (dst, s) in o.iter_mut().zip(softmax_row(row)) {
                *dst = s;
            }
        }
        let ng = self.needs(&[a]);
        self.push(out, Op::SoftmaxRows(a), ng)
    }

    /// Summed cross-entropy `-Σ log softmax(logits[r])[label]` over `rows`,
    /// with `labels[i]` the class of `rows[i]`.
    pub fn cross_entropy(&mut self, logits: Var, rows: Arc<[usize]>, labels: Arc<[usize]>) -> Result<Var> {
        let v = self.value(logits);
        self.check(!rows.is_empty(), || "cross entropy over an empty mask".into())?;
        self.check(rows.len() == labels.len(), || "rows/labels length mismatch".into())?;
        self.check(rows.iter().all(|&r| r < v.nrows()) && labels.iter().all(|&c| c < v.ncols()), || {
            "cross entropy index out of range".into()
        })?;
        let mut total = 0.0;
        for (&r, &c) in rows.iter().zip(labels.iter()) {
            let row = v.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[c];
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(Mat::from_elem((1, 1), total), Op::CrossEntropy { logits, rows, labels }, ng))
    }

    /// Row-wise outer product flattened row-major: `out[n, i*q + j] = a[n,i]·b[n,j]`.
    pub fn outer_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        self.check(va.nrows() == vb.nrows(), || format!("outer_rows {:?} ⊗ {:?}", va.dim(), vb.dim()))?;
        let (p, q) = (va.ncols(), vb.ncols());
        let mut out = Mat::zeros((va.nrows(), p * q));
        for n in 0..va.nrows() {
            for i in 0..p {
                for j in 0..q {
                    out[[n, i * q + j]] = va[[n, i]] * vb[[n, j]];
                }
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::OuterRows(a, b), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.dim() != (1, 1) {
            return Err(Error::shape(format!("backward from non-scalar {:?}", lv.dim())));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::ones((1, 1)));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, param_vars: self.param_vars.clone() })
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, out: &Mat, g: &Mat, grads: &mut [Option<Mat>]) {
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.dot(&vb.t()));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, va.t().dot(g));
                }
            }
            Op::MatMulBT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.dot(vb));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, g.t().dot(va));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g * vb);
                self.accumulate(grads, *b, g * va);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g * *s),
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a);
                let mut d = g.clone();
                Zip::from(&mut d).and(va).for_each(|d, &x| {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * out),
            Op::Log(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Sum(a) => {
                let dim = self.value(*a).dim();
                self.accumulate(grads, *a, Mat::from_elem(dim, g[[0, 0]]));
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::GatherRows(a, idx) => {
                let va = self.value(*a);
                let mut d = Mat::zeros(va.dim());
                for (r, &src) in idx.iter().enumerate() {
                    let mut row = d.row_mut(src);
                    row += &g.row(r);
                }
                self.accumulate(grads, *a, d);
            }
            Op::ScatterAddRows(a, idx) => {
                self.accumulate(grads, *a, g.select(Axis(0), idx));
            }
            Op::SegmentSoftmax(a, seg) => {
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for (i, &s) in seg.iter().enumerate() {
                    dot[s] += out[[i, 0]] * g[[i, 0]];
                }
                let d = Mat::from_shape_fn(out.dim(), |(i, _)| out[[i, 0]] * (g[[i, 0]] - dot[seg[i]]));
                self.accumulate(grads, *a, d);
            }
            Op::MulRows(a, s) => {
                let (va, vs) = (self.value(*a), self.value(*s));
                if self.nodes[a.0].needs_grad {
                    let mut d = g.clone();
                    Zip::from(d.rows_mut()).and(vs.column(0)).for_each(|mut row, &k| row *= k);
                    self.accumulate(grads, *a, d);
                }
                if self.nodes[s.0].needs_grad {
                    let ds = (g * va).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *s, ds);
                }
            }
            Op::ScaleRows(a, s) => {
                let mut d = g.clone();
                for (mut row, &k) in d.rows_mut().into_iter().zip(s.iter()) {
                    row *= k;
                }
                self.accumulate(grads, *a, d);
            }
            Op::EdgeAggregate { h, alpha, src, dst } => {
                let (vh, va) = (self.value(*h), self.value(*alpha));
                if self.nodes[h.0].needs_grad {
                    self.accumulate(grads, *h, edge_sum(g, va, dst, src, vh.nrows()));
                }
                if self.nodes[alpha.0].needs_grad {
                    let (gs, hs, w) = (standard(g), standard(vh), vh.ncols());
                    let d = Mat::from_shape_fn(va.dim(), |(e, _)| {
                        let (a, b) = (&gs[dst[e] * w..][..w], &hs[src[e] * w..][..w]);
                        a.iter().zip(b).map(|(x, y)| x * y).sum()
                    });
                    self.accumulate(grads, *alpha, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    self.accumulate(grads, p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::MulConst(a, c) => self.accumulate(grads, *a, g * &**c),
            Op::SoftmaxRows(a) => {
                let mut d = Mat::zeros(out.dim());
                for ((mut drow, y), gy) in d.rows_mut().into_iter().zip(out.rows()).zip(g.rows()) {
                    let dot: f64 = y.iter().zip(gy.iter()).map(|(a, b)| a * b).sum();
                    for ((dst, &yi), &gi) in drow.iter_mut().zip(y.iter()).zip(gy.iter()) {
                        *dst = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::CrossEntropy { logits, rows, labels } => {
                let v = self.value(*logits);
                let scale = g[[0, 0]];
                let mut d = Mat::zeros(v.dim());
                for (&r, &c) in rows.iter().zip(labels.iter()) {
                    let p = softmax_row(v.row(r));
                    for (j, pj) in p.into_iter().enumerate() {
                        d[[r, j]] += scale * (pj - if j == c { 1.0 } else { 0.0 });
                    }
                }
                self.accumulate(grads, *logits, d);
            }
            Op::OuterRows(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (p, q) = (va.ncols(), vb.ncols());
                let mut da = Mat::zeros(va.dim());
                let mut db = Mat::zeros(vb.dim());
                for n in 0..va.nrows() {
                    for i in 0..p {
                        for j in 0..q {
                            let gij = g[[n, i * q + j]];
                            da[[n, i]] += gij * vb[[n, j]];
                            db[[n, j]] += gij * va[[n, i]];
                        }
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Mat>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient w.r.t. a recorded node; `None` if the loss does not reach it.
    pub fn of(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of every parameter in `params`, zero where unreachable.
    pub fn params(&self, params: &Params) -> Vec<Mat> {
        let mut out: Vec<Mat> = params.values().iter().map(|m| Mat::zeros(m.dim())).collect();
        for &(id, var) in &self.param_vars {
            if let Some(g) = self.of(var) {
                out[id.0] += g;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central finite differences of `f` w.r.t. every entry of every parameter.
    fn finite_diff(params: &Params, f: &dyn Fn(&Params) -> f64) -> Vec<Mat> {
        let h = 1e-5;
        params
            .ids()
            .map(|id| {
                let mut g = Mat::zeros(params.get(id).dim());
                for idx in 0..g.len() {
                    let (r, c) = (idx / g.ncols(), idx % g.ncols());
                    let mut p = params.clone();
                    p.get_mut(id)[[r, c]] += h;
                    let up = f(&p);
                    p.get_mut(id)[[r, c]] -= 2.0 * h;
                    let down = f(&p);
                    g[[r, c]] = (up - down) / (2.0 * h);
                }
                g
            })
            .collect()
    }

    fn max_rel_err(a: &[Mat], b: &[Mat]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(1e-3)))
            .fold(0.0, f64::max)
    }

    fn check_grad(params: &Params, build: &dyn Fn(&mut Tape, &Params) -> Var) {
        let mut tape = Tape::new();
        let loss = build(&mut tape, params);
        let analytic = tape.backward(loss).unwrap().params(params);
        let numeric = finite_diff(params, &|p| {
            let mut t = Tape::new();
            let l = build(&mut t, p);
            t.scalar(l)
        });
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < 1e-4, "relative gradient error {err}");
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut p = Params::new();
        let w = p.add("w", array![[1.0, -2.0], [3.0, 0.5]]);
        let mut t = Tape::new();
        let wv = t.param(&p, w);
        let s = t.sum(wv);
        let g = t.backward(s).unwrap().params(&p);
        assert_eq!(g[0], Mat::ones((2, 2)));
    }

    #[test]
    fn matmul_gradient_pattern() {
        let mut p = Params::new();
        let a = p.add("a", array![[1.0, 2.0], [3.0, 4.0]]);
        let b = p.add("b", array![[5.0, 6.0], [7.0, 8.0]]);
        let mut t = Tape::new();
        let (av, bv) = (t.param(&p, a), t.param(&p, b));
        let ab = t.matmul(av, bv).unwrap();
        let s = t.sum(ab);
        let g = t.backward(s).unwrap().params(&p);
        // d sum(AB)/dA = 1 · Bᵀ
        assert_eq!(g[0], Mat::ones((2, 2)).dot(&p.get(b).t()));
        assert_eq!(g[1], p.get(a).t().dot(&Mat::ones((2, 2))));
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut p = Params::new();
        let a = p.add("a", array![[1.0]]);
        let b = p.add("b", array![[2.0, 3.0]]);
        let mut t = Tape::new();
        let av = t.param(&p, a);
        let _ = t.param(&p, b);
        let s = t.sum(av);
        let g = t.backward(s).unwrap().params(&p);
        assert_eq!(g[1], Mat::zeros((1, 2)));
        let m = t.variable(Mat::ones((2, 2)));
        assert!(t.backward(m).is_err());
    }

    #[test]
    fn three_layer_model_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Params::new();
        let w1 = p.add("w1", rand_mat(&mut rng, 5, 4));
        let w2 = p.add("w2", rand_mat(&mut rng, 6, 5));
        let w3 = p.add("w3", rand_mat(&mut rng, 3, 6));
        let b3 = p.add("b3", rand_mat(&mut rng, 1, 3));
        let x = rand_mat(&mut rng, 7, 4);
        let labels: Arc<[usize]> = Arc::from(vec![0, 2, 1, 1, 0]);
        let rows: Arc<[usize]> = Arc::from(vec![0, 1, 3, 4, 6]);
        check_grad(&p, &|t, p| {
            let xv = t.constant(x.clone());
            let (a, b, c, d) = (t.param(p, w1), t.param(p, w2), t.param(p, w3), t.param(p, b3));
            let h = t.matmul_bt(xv, a).unwrap();
            let h = t.leaky_relu(h, 0.01);
            let h = t.matmul_bt(h, b).unwrap();
            let h = t.exp(h);
            let h = t.ln(h);
            let h = t.leaky_relu(h, 0.2);
            let o = t.matmul_bt(h, c).unwrap();
            let o = t.add_row(o, d).unwrap();
            t.cross_entropy(o, rows.clone(), labels.clone()).unwrap()
        });
    }

    #[test]
    fn gather_scatter_segment_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = Params::new();
        let h = p.add("h", rand_mat(&mut rng, 4, 3));
        let a = p.add("a", rand_mat(&mut rng, 3, 1));
        let mask = Arc::new(rand_mat(&mut rng, 5, 3));
        let src: Arc<[usize]> = Arc::from(vec![0, 1, 2, 3, 1, 0]);
        let dst: Arc<[usize]> = Arc::from(vec![1, 1, 0, 0, 4, 2]);
        check_grad(&p, &|t, p| {
            let hv = t.param(p, h);
            let av = t.param(p, a);
            let score = t.matmul(hv, av).unwrap();
            let e = t.gather_rows(score, src.clone()).unwrap();
            let alpha = t.segment_softmax(e, dst.clone()).unwrap();
            let msg = t.gather_rows(hv, src.clone()).unwrap();
            let msg = t.mul_rows(msg, alpha).unwrap();
            let agg = t.scatter_add_rows(msg, dst.clone(), 5).unwrap();
            let agg = t.scale_rows(agg, Arc::from(vec![0.5, 1.0, 2.0, 0.0, 1.5])).unwrap();
            let agg = t.mul_const(agg, mask.clone()).unwrap();
            let both = t.concat_cols(&[agg, agg]).unwrap();
            let tb = t.transpose(both);
            let both = t.matmul(both, tb).unwrap();
            let sq = t.mul(both, both).unwrap();
            t.sum(sq)
        });
    }

    #[test]
    fn edge_aggregate_matches_composed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = Params::new();
        let h = p.add("h", rand_mat(&mut rng, 4, 3));
        let a = p.add("a", rand_mat(&mut rng, 6, 1));
        let src: Arc<[usize]> = Arc::from(vec![0, 1, 2, 3, 1, 0]);
        let dst: Arc<[usize]> = Arc::from(vec![1, 1, 0, 0, 4, 2]);
        let mut t = Tape::new();
        let (hv, av) = (t.param(&p, h), t.param(&p, a));
        let fused = t.edge_aggregate(hv, av, src.clone(), dst.clone(), 5).unwrap();
        let msg = t.gather_rows(hv, src.clone()).unwrap();
        let msg = t.mul_rows(msg, av).unwrap();
        let composed = t.scatter_add_rows(msg, dst.clone(), 5).unwrap();
        for (x, y) in t.value(fused).iter().zip(t.value(composed).iter()) {
            assert!((x - y).abs() < 1e-14);
        }
        check_grad(&p, &|t, p| {
            let hv = t.param(p, h);
            let av = t.param(p, a);
            let agg = t.edge_aggregate(hv, av, src.clone(), dst.clone(), 5).unwrap();
            let sq = t.mul(agg, agg).unwrap();
            t.sum(sq)
        });
    }

    #[test]
    fn softmax_outer_scale_sub_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = Params::new();
        let x = p.add("x", rand_mat(&mut rng, 3, 2));
        let y = p.add("y", rand_mat(&mut rng, 3, 3));
        let w = p.add("w", rand_mat(&mut rng, 6, 1));
        check_grad(&p, &|t, p| {
            let (xv, yv, wv) = (t.param(p, x), t.param(p, y), t.param(p, w));
            let px = t.softmax_rows(xv);
            let py = t.softmax_rows(yv);
            let o = t.outer_rows(px, py).unwrap();
            let z = t.matmul(o, wv).unwrap();
            let z2 = t.scale(z, 3.0);
            let d = t.sub(z2, z).unwrap();
            let d = t.mul(d, d).unwrap();
            t.sum(d)
        });
    }

    #[test]
    fn segment_softmax_examples() {
        assert_eq!(segment_softmax(&[3.7], &[0]), vec![1.0]);
        assert_eq!(segment_softmax(&[0.2, 0.2], &[0, 0]), vec![0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let logits: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = segment_softmax(&logits, &[0; 7]);
        let denom: f64 = logits.iter().map(|l| l.exp()).sum();
        for (g, l) in got.iter().zip(&logits) {
            assert!((g - l.exp() / denom).abs() < 1e-12);
        }
        let mixed = segment_softmax(&[1.0, 500.0, 2.0, 501.0], &[0, 1, 0, 1]);
        assert!((mixed[0] + mixed[2] - 1.0).abs() < 1e-12);
        assert!((mixed[1] + mixed[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_and_reproducible() {
        let mut t = Tape::new();
        let x = t.variable(Mat::ones((4, 5)));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(t.dropout(x, 0.0, &mut rng).unwrap(), x);
        let a = t.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = t.dropout(x, 0.5, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(t.value(a), t.value(b));
        assert!(t.value(a).iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = Params::new();
        p.add_glorot("w", 3, 4, &mut rng);
        p.add("b", array![[0.25, -1.0 / 3.0]]);
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path(), "ckpt").unwrap();
        assert_eq!(Params::load(dir.path(), "ckpt").unwrap(), p);
        assert_eq!(std::fs::read(dir.path().join("ckpt.bin")).unwrap().len(), (12 + 2) * 8);
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let mut t = Tape::new();
        let l = t.variable(Mat::zeros((1, 2)));
        let ce = t.cross_entropy(l, Arc::from(vec![0]), Arc::from(vec![1])).unwrap();
        assert!((t.scalar(ce) - 2f64.ln()).abs() < 1e-15);
        assert!(t.cross_entropy(l, Arc::from(vec![]), Arc::from(vec![])).is_err());
    }
}
