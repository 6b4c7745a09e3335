//! Cross-omic label fusion: per-patient outer product of the omic class
//! probabilities fed to a one-hidden-layer network.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, Params, Tape, Var};
use crate::error::{Error, Result};

/// Outer product of the per-omic probability vectors, omic 0 varying slowest.
pub fn discovery_vector(probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if probs.len() < 2 {
        return Err(Error::Config("fusion needs at least two omics".into()));
    }
    let mut out = vec![1.0];
    for p in probs {
        out = out.iter().flat_map(|&a| p.iter().map(move |&b| a * b)).collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub classes: usize,
    pub omics: usize,
    pub params: Params,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub leaky_slope: f64,
}

impl FusionNet {
    pub fn new<R: Rng>(classes: usize, omics: usize, leaky_slope: f64, rng: &mut R) -> Result<FusionNet> {
        if omics < 2 {
            return Err(Error::Config("fusion needs at least two omics".into()));
        }
        let width = classes.pow(omics as u32);
        let mut params = Params::new();
        let w1 = params.add_glorot("vcdn.w1", width, width, rng);
        let b1 = params.add("vcdn.b1", Array2::zeros((1, width)));
        let w2 = params.add_glorot("vcdn.w2", classes, width, rng);
        let b2 = params.add("vcdn.b2", Array2::zeros((1, classes)));
        Ok(FusionNet { classes, omics, params, w1, b1, w2, b2, leaky_slope })
    }

    pub fn from_params(classes: usize, omics: usize, leaky_slope: f64, params: Params) -> Result<FusionNet> {
        let mut f = FusionNet::new(classes, omics, leaky_slope, &mut ChaCha8Rng::seed_from_u64(0))?;
        crate::gat::check_layout(&f.params, &params)?;
        f.params = params;
        Ok(f)
    }

    pub fn input_dim(&self) -> usize {
        self.classes.pow(self.omics as u32)
    }

    /// Fused logits from per-omic probability matrices (patients × classes).
    pub fn forward(&self, tape: &mut Tape, probs: &[Var]) -> Result<Var> {
        if probs.len() != self.omics {
            return Err(Error::shape(format!("{} omic inputs, fusion built for {}", probs.len(), self.omics)));
        }
        let mut x = probs[0];
        for &p in &probs[1..] {
            x = tape.outer_rows(x, p)?;
        }
        let w1 = tape.param(&self.params, self.w1);
        let b1 = tape.param(&self.params, self.b1);
        let w2 = tape.param(&self.params, self.w2);
        let b2 = tape.param(&self.params, self.b2);
        let h = tape.matmul_bt(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.leaky_relu(h, self.leaky_slope);
        let o = tape.matmul_bt(h, w2)?;
        tape.add_row(o, b2)
    }

    pub fn predict_proba(&self, probs: &[Array2<f64>]) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = probs.iter().map(|p| tape.constant(p.clone())).collect();
        let logits = self.forward(&mut tape, &vars)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).clone())
    }
}
