//! DP-SGD and representation noising baselines (mechanisms only, no accountant).

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::loss::softmax_cross_entropy;
use crate::nn::{shuffled_batches, Mlp};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub clip_norm: f64,
    /// Noise multiplier of DP-SGD: per-coordinate std is `noise_sigma·C/B`.
    pub noise_sigma: f64,
    /// Variance of the noise added to published representations.
    pub encoder_sigma2: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            clip_norm: 1.0,
            noise_sigma: 1.0,
            encoder_sigma2: 0.0,
            batch_size: 64,
            lr: 0.05,
            epochs: 50,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(invalid(format!("clip norm {} must be positive", self.clip_norm)));
        }
        if !(self.noise_sigma >= 0.0) || !(self.encoder_sigma2 >= 0.0) {
            return Err(invalid("noise levels must be >= 0"));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(invalid("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Scale `g` so its Euclidean norm is at most `c`.
pub fn clip(g: &[f64], c: f64) -> Vec<f64> {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s = if n > c { c / n } else { 1.0 };
    g.iter().map(|v| v * s).collect()
}

/// Mean of the clipped per-sample gradients.
pub fn clipped_mean(grads: &[Vec<f64>], c: f64) -> Result<Vec<f64>> {
    let first = grads.first().ok_or(Error::EmptyDataset)?;
    let mut out = vec![0.0; first.len()];
    for g in grads {
        if g.len() != out.len() {
            return Err(Error::DimensionMismatch {
                expected: out.len(),
                got: g.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(clip(g, c)) {
            *o += v;
        }
    }
    let b = grads.len() as f64;
    out.iter_mut().for_each(|v| *v /= b);
    Ok(out)
}

/// Clipped mean plus Gaussian noise of std `noise_sigma·C/B` per coordinate.
pub fn clip_and_noise(grads: &[Vec<f64>], dp: &DpConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    dp.validate()?;
    let mut g = clipped_mean(grads, dp.clip_norm)?;
    let std = dp.noise_sigma * dp.clip_norm / grads.len() as f64;
    if std > 0.0 {
        for v in g.iter_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(g)
}

/// A classifier split into an encoder and a head, trained end to end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub encoder: Mlp,
    pub head: Mlp,
}

impl SplitModel {
    pub fn param_count(&self) -> usize {
        self.encoder.params().len() + self.head.params().len()
    }

    /// Cross-entropy gradient of every row separately, over encoder and head
    /// parameters concatenated.
    pub fn per_sample_grads(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let xi = row.insert_axis(Axis(0));
            let te = self.encoder.forward_tape(xi)?;
            let th = self.head.forward_tape(te.output().view())?;
            let (loss, d) = softmax_cross_entropy(th.output().view(), &y[i..=i])?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("per-sample loss".into()));
            }
            let (gh, dr) = self.head.backward(&th, d.view());
            let (mut ge, _) = self.encoder.backward(&te, dr.view());
            ge.extend(gh);
            out.push(ge);
        }
        Ok(out)
    }

    /// Mean of the per-row gradients clipped to norm `c`, computed with two
    /// batched backward passes instead of one pass per row.
    pub fn clipped_mean_grad(&self, x: ArrayView2<f64>, y: &[usize], c: f64) -> Result<Vec<f64>> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let te = self.encoder.forward_tape(x)?;
        let th = self.head.forward_tape(te.output().view())?;
        let (loss, d) = softmax_cross_entropy(th.output().view(), y)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("dp-sgd loss".into()));
        }
        // the loss is a mean, so row i of `d` carries a 1/n factor
        let d = d * n as f64;
        let (sq_h, dr) = self.head.per_sample_sq_norms(&th, d.view());
        let (sq_e, _) = self.encoder.per_sample_sq_norms(&te, dr.view());
        let mut dw = d;
        for i in 0..n {
            let norm = (sq_h[i] + sq_e[i]).sqrt();
            let s = if norm > c { c / norm } else { 1.0 } / n as f64;
            dw.row_mut(i).mapv_inplace(|v| v * s);
        }
        let (gh, dr) = self.head.backward(&th, dw.view());
        let (mut ge, _) = self.encoder.backward(&te, dr.view());
        ge.extend(gh);
        Ok(ge)
    }

    fn apply(&mut self, step: &[f64], lr: f64) {
        let ne = self.encoder.params().len();
        for (p, g) in self.encoder.params_mut().iter_mut().zip(&step[..ne]) {
            *p -= lr * g;
        }
        for (p, g) in self.head.params_mut().iter_mut().zip(&step[ne..]) {
            *p -= lr * g;
        }
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
        let r = self.encoder.forward_batch(x)?;
        crate::nn::accuracy(&self.head, r.view(), y)
    }
}

/// One DP-SGD step on a batch.
pub fn dpsgd_step(model: &mut SplitModel, x: ArrayView2<f64>, y: &[usize], dp: &DpConfig, rng: &mut Rng) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    dp.validate()?;
    let mut g = model.clipped_mean_grad(x, y, dp.clip_norm)?;
    let std = dp.noise_sigma * dp.clip_norm / x.nrows() as f64;
    if std > 0.0 {
        for v in g.iter_mut() {
            *v += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    model.apply(&g, dp.lr);
    Ok(())
}

/// `epochs` passes of DP-SGD over shuffled batches.
pub fn train_dpsgd(model: &mut SplitModel, x: ArrayView2<f64>, y: &[usize], dp: &DpConfig, rng: &mut Rng) -> Result<()> {
    dp.validate()?;
    for _ in 0..dp.epochs {
        for batch in shuffled_batches(x.nrows(), dp.batch_size, rng) {
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            dpsgd_step(model, xb.view(), &yb, dp, rng)?;
        }
        if !(model.encoder.is_finite() && model.head.is_finite()) {
            return Err(Error::NonFinite("dp-sgd parameters".into()));
        }
    }
    Ok(())
}

/// Add i.i.d. `N(0, sigma2)` noise to every coordinate.
pub fn dp_encoder_noise(reps: ArrayView2<f64>, sigma2: f64, rng: &mut Rng) -> Result<Array2<f64>> {
    if !(sigma2 >= 0.0) {
        return Err(invalid(format!("variance {sigma2} must be >= 0")));
    }
    let sd = sigma2.sqrt();
    let mut out = reps.to_owned();
    if sd > 0.0 {
        out.mapv_inplace(|v| v + sd * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(out)
}
