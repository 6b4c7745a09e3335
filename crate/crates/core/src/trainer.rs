//! Adam optimisation, the step learning-rate schedule and the two-phase
//! training of one fold: per-omic pretraining, then joint training with
//! fusion.

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, Params, Tape, Var};
use crate::config::{Config, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionNet;
use crate::gat::{ce_loss, OmicModel};
use crate::hetero::HeteroGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: i32,
}

impl Adam {
    pub fn new(params: &Params) -> Adam {
        let zeros: Vec<Mat> = params.values().iter().map(|p| Mat::zeros(p.dim())).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// One bias-corrected update. Non-finite gradients abort without touching
    /// the parameters.
    pub fn step(&mut self, params: &mut Params, grads: &[Mat], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape("gradient count differs from parameter count"));
        }
        for (id, g) in params.ids().zip(grads) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient for {}", params.name(id))));
            }
        }
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for ((p, g), (m, v)) in params.values_mut().iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// `gamma^floor(epoch / step)`.
pub fn lr_schedule(epoch: usize, step: usize, gamma: f64) -> f64 {
    gamma.powi((epoch / step) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: String,
    pub epoch: usize,
    /// Omic name, or `fusion`.
    pub model: String,
    pub loss: f64,
}

/// Graphs and supervision of one fold.
pub struct FoldTask<'a> {
    pub omic_names: &'a [String],
    pub classes: usize,
    /// Per omic, the graph over the fold's non-test patients.
    pub train_graphs: &'a [HeteroGraph],
    /// Patient nodes of the training graphs that contribute to the loss.
    pub train_nodes: &'a [usize],
    pub train_labels: &'a [usize],
    pub seed: u64,
}

pub struct FoldModels {
    pub omics: Vec<OmicModel>,
    pub fusion: Option<FusionNet>,
    pub log: Vec<LogRow>,
}

fn finite(loss: f64, what: &str, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("{what} loss became non-finite at epoch {epoch}")))
    }
}

/// One optimisation step of an omic model on its own cross-entropy.
fn omic_step(model: &mut OmicModel, adam: &mut Adam, graph: &HeteroGraph, task: &FoldTask, lr: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut tape = Tape::new();
    let drop = if model.cfg.dropout > 0.0 { Some(rng) } else { None };
    let logits = model.forward(&mut tape, graph, drop)?;
    let loss = ce_loss(&mut tape, logits, task.train_nodes, task.train_labels)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?.params(&model.params);
    adam.step(&mut model.params, &grads, lr)?;
    Ok(value)
}

fn fusion_step(fusion: &mut FusionNet, adam: &mut Adam, probs: &[Array2<f64>], task: &FoldTask, lr: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let inputs: Vec<Var> = probs.iter().map(|p| tape.constant(p.clone())).collect();
    let logits = fusion.forward(&mut tape, &inputs)?;
    let loss = ce_loss(&mut tape, logits, task.train_nodes, task.train_labels)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss)?.params(&fusion.params);
    adam.step(&mut fusion.params, &grads, lr)?;
    Ok(value)
}

/// Pretrains every omic model, then alternates fusion and omic updates.
/// With a single omic the fusion stage is skipped.
pub fn train_fold(task: &FoldTask, cfg: &Config) -> Result<FoldModels> {
    let n = task.train_graphs.len();
    if n == 0 || task.omic_names.len() != n {
        return Err(Error::shape("one graph and name per omic is required"));
    }
    if task.train_nodes.is_empty() {
        return Err(Error::data("fold has no training patients"));
    }
    let tc: &TrainConfig = &cfg.train;
    let mut init = ChaCha8Rng::seed_from_u64(task.seed);
    let mut omics = Vec::with_capacity(n);
    for g in task.train_graphs {
        omics.push(OmicModel::new(g.patient_x.ncols(), g.feature_x.ncols(), task.classes, &cfg.gat, &mut init)?);
    }
    let mut fusion = if n >= 2 { Some(FusionNet::new(task.classes, n, cfg.gat.leaky_slope, &mut init)?) } else { None };
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|m| ChaCha8Rng::seed_from_u64(task.seed ^ ((m as u64 + 1) << 32))).collect();
    let mut log = Vec::new();

    let pre: Vec<Result<Vec<f64>>> = omics
        .par_iter_mut()
        .zip(rngs.par_iter_mut())
        .zip(task.train_graphs.par_iter())
        .map(|((model, rng), graph)| {
            let mut adam = Adam::new(&model.params);
            (0..tc.pretrain_epochs)
                .map(|e| {
                    let lr = tc.pretrain_lr * lr_schedule(e, tc.lr_step, tc.lr_gamma);
                    finite(omic_step(model, &mut adam, graph, task, lr, rng)?, "pretraining", e)
                })
                .collect()
        })
        .collect();
    for (m, losses) in pre.into_iter().enumerate() {
        for (e, loss) in losses?.into_iter().enumerate() {
            log.push(LogRow { phase: "pretrain".into(), epoch: e, model: task.omic_names[m].clone(), loss });
        }
    }

    let mut adams: Vec<Adam> = omics.iter().map(|m| Adam::new(&m.params)).collect();
    let mut fusion_adam = fusion.as_ref().map(|f| Adam::new(&f.params));
    for e in 0..tc.train_epochs {
        let sched = lr_schedule(e, tc.lr_step, tc.lr_gamma);
        if let (Some(f), Some(adam)) = (fusion.as_mut(), fusion_adam.as_mut()) {
            let probs = omics
                .par_iter()
                .zip(task.train_graphs.par_iter())
                .map(|(m, g)| m.predict_proba(g))
                .collect::<Result<Vec<_>>>()?;
            let loss = finite(fusion_step(f, adam, &probs, task, tc.vcdn_lr * sched)?, "fusion", e)?;
            log.push(LogRow { phase: "joint".into(), epoch: e, model: "fusion".into(), loss });
        }
        let losses = omics
            .par_iter_mut()
            .zip(adams.par_iter_mut())
            .zip(rngs.par_iter_mut())
            .zip(task.train_graphs.par_iter())
            .map(|(((model, adam), rng), graph)| omic_step(model, adam, graph, task, tc.train_lr * sched, rng))
            .collect::<Result<Vec<f64>>>()?;
        for (m, loss) in losses.into_iter().enumerate() {
            let loss = finite(loss, "joint", e)?;
            log.push(LogRow { phase: "joint".into(), epoch: e, model: task.omic_names[m].clone(), loss });
        }
    }
    Ok(FoldModels { omics, fusion, log })
}

/// Class probabilities for `nodes` of the given graphs: fused when a fusion
/// network exists, otherwise the single omic's own prediction.
pub fn predict(models: &[OmicModel], fusion: Option<&FusionNet>, graphs: &[HeteroGraph], nodes: &[usize]) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let per_omic = models
        .par_iter()
        .zip(graphs.par_iter())
        .map(|(m, g)| m.predict_proba(g).map(|p| p.select(ndarray::Axis(0), nodes)))
        .collect::<Result<Vec<_>>>()?;
    let fused = match fusion {
        Some(f) => f.predict_proba(&per_omic)?,
        None if per_omic.len() == 1 => per_omic[0].clone(),
        None => return Err(Error::Config("several omics but no fusion network".into())),
    };
    if fused.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite predicted probability".into()));
    }
    Ok((fused, per_omic))
}
