//! The three adversarial games: membership, property and reconstruction.

pub mod dra;
pub mod mia;
pub mod pia;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{probability_cross_entropy, softmax, softmax_cross_entropy};
use crate::nn::{argmax_rows, Activation, Mlp, MlpSpec};
use crate::rng::Rng;

pub use dra::{
    dra_losses, train_dra_defense, update_perturbation_params, DraGameState, DraLosses, DraTrainer, GeometryNote,
};
pub use mia::{advreg_mode_loss, mia_losses, train_mia_defense, MiaGameState, MiaTrainer};
pub use pia::{aggregate, pia_losses, sample_bags, train_pia_defense, AggregatorMode, PiaGameState, PiaTrainer};

/// Widths and activations of the encoder and the heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub encoder_hidden: Vec<usize>,
    pub rep_dim: usize,
    pub head_hidden: Vec<usize>,
    pub activation: Activation,
    /// Output activation of the encoder.
    pub encoder_output: Activation,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![64],
            rep_dim: 16,
            head_hidden: vec![32],
            activation: Activation::Relu,
            encoder_output: Activation::Tanh,
        }
    }
}

impl ArchConfig {
    pub fn encoder_spec(&self, input_dim: usize) -> MlpSpec {
        let mut widths = vec![input_dim];
        widths.extend(&self.encoder_hidden);
        widths.push(self.rep_dim);
        MlpSpec::new(widths, self.activation, self.encoder_output)
    }

    /// Head producing logits over `classes`.
    pub fn head_spec(&self, input_dim: usize, classes: usize) -> MlpSpec {
        let mut widths = vec![input_dim];
        widths.extend(&self.head_hidden);
        widths.push(classes);
        MlpSpec::new(widths, self.activation, Activation::Identity)
    }
}

/// The task classifier on top of the encoder. `Identity` reads the
/// representation itself as class probabilities (the AdvReg special case).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum UtilityHead {
    Mlp(Mlp),
    Identity,
}

impl UtilityHead {
    pub fn param_count(&self) -> usize {
        match self {
            Self::Mlp(m) => m.params().len(),
            Self::Identity => 0,
        }
    }

    /// Class probabilities for every representation row.
    pub fn probabilities(&self, reps: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Self::Mlp(m) => Ok(softmax(m.forward_batch(reps)?.view())),
            Self::Identity => Ok(reps.to_owned()),
        }
    }

    /// Mean cross-entropy, its parameter gradient and its gradient w.r.t. `reps`.
    pub fn cross_entropy(&self, reps: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
        match self {
            Self::Mlp(m) => head_cross_entropy(m, reps, labels),
            Self::Identity => {
                let (l, g) = probability_cross_entropy(reps, labels)?;
                Ok((l, Vec::new(), g))
            }
        }
    }

    pub fn accuracy(&self, reps: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let pred = argmax_rows(self.probabilities(reps)?.view());
        Ok(hit_rate(&pred, labels))
    }

    pub fn params_mut(&mut self) -> Option<&mut [f64]> {
        match self {
            Self::Mlp(m) => Some(m.params_mut()),
            Self::Identity => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Self::Mlp(m) => m.is_finite(),
            Self::Identity => true,
        }
    }
}

pub(crate) fn hit_rate(pred: &[usize], labels: &[usize]) -> f64 {
    pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len().max(1) as f64
}

/// Mean softmax cross-entropy of a logit head, with parameter and input gradients.
pub fn head_cross_entropy(head: &Mlp, reps: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
    let tape = head.forward_tape(reps)?;
    let (loss, d) = softmax_cross_entropy(tape.output().view(), labels)?;
    let (g, dx) = head.backward(&tape, d.view());
    Ok((loss, g, dx))
}

/// Per-round loss summary kept in the results record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLosses {
    pub round: usize,
    /// Adversary-side term (cross-entropy of the private attribute or the JSD estimate).
    pub privacy: f64,
    /// Utility cross-entropy.
    pub utility: f64,
}

pub(crate) fn ensure_finite(round: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            round,
            detail: format!("{what} = {v}"),
        })
    }
}

/// `k` distinct indices from `0..n` (all of them, shuffled, when `k ≥ n`).
pub(crate) fn draw_indices(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    sample(rng, n, k.min(n)).into_vec()
}

pub(crate) fn rows(x: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}
