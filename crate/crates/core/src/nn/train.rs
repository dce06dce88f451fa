//! Plain supervised fitting used by attackers and baselines.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{mse_loss, softmax, softmax_cross_entropy};
use super::mlp::Mlp;
use super::optim::OptimizerState;
use crate::domain::OptimizerKind;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
        }
    }
}

/// Shuffled index batches covering `0..n` once.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Minimize mean softmax cross-entropy. Returns the final epoch's mean loss.
pub fn fit_classifier(
    model: &mut Mlp,
    x: ArrayView2<f64>,
    y: &[usize],
    cfg: &FitConfig,
    rng: &mut Rng,
) -> Result<f64> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.len(),
        });
    }
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, model.params().len())?;
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(x.nrows(), cfg.batch_size, rng) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let tape = model.forward_tape(xb.view())?;
            let (loss, d) = softmax_cross_entropy(tape.output().view(), &yb)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("classifier loss".into()));
            }
            let (g, _) = model.backward(&tape, d.view());
            opt.step(model.params_mut(), &g)?;
            total += loss * batch.len() as f64;
        }
        last = total / x.nrows() as f64;
    }
    Ok(last)
}

/// Minimize per-coordinate MSE to `target`.
pub fn fit_regressor(
    model: &mut Mlp,
    x: ArrayView2<f64>,
    target: ArrayView2<f64>,
    cfg: &FitConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr, model.params().len())?;
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(x.nrows(), cfg.batch_size, rng) {
            let xb = x.select(Axis(0), &batch);
            let tb = target.select(Axis(0), &batch);
            let tape = model.forward_tape(xb.view())?;
            let (loss, d) = mse_loss(tape.output().view(), tb.view())?;
            let (g, _) = model.backward(&tape, d.view());
            opt.step(model.params_mut(), &g)?;
            total += loss * batch.len() as f64;
        }
        last = total / x.nrows() as f64;
    }
    Ok(last)
}

pub fn predict_proba(model: &Mlp, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(softmax(model.forward_batch(x)?.view()))
}

pub fn argmax_rows(p: ArrayView2<f64>) -> Vec<usize> {
    p.rows()
        .into_iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

pub fn accuracy(model: &Mlp, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
    let pred = argmax_rows(model.forward_batch(x)?.view());
    Ok(pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len().max(1) as f64)
}
