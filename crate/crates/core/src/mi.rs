//! Mutual-information surrogates and the learnable perturbation distribution.
//!
//! All quantities are in nats. Three estimators are provided:
//!
//! * a contrastive log-ratio upper-bound surrogate (`club_*`) driven by an
//!   auxiliary posterior `q(u | r)` given as probability rows,
//! * the variational cross-entropy lower bound (`ce_*`),
//! * the Jensen–Shannon critic objective (`jsd_*`) for high-dimensional pairs.
//!
//! The perturbation `δ = ε · tanh(μ + σ ⊙ z)` is reparameterized so gradients
//! flow pathwise into `(μ, log σ)`.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::loss::floored_ln;
use crate::nn::{softmax, Mlp};
use crate::rng::Rng;

/// Entropy reported for a zero-scale perturbation instead of −∞.
pub const ZERO_SCALE_ENTROPY: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiEstimator {
    Club,
    CeLower,
    Jsd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub value: f64,
    pub estimator: MiEstimator,
    pub batch_size: usize,
}

fn check_rows(probs: &ArrayView2<f64>, u: &[usize]) -> Result<()> {
    if probs.nrows() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.nrows(),
            got: u.len(),
        });
    }
    if probs.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(&bad) = u.iter().find(|&&v| v >= probs.ncols()) {
        return Err(invalid(format!("value {bad} outside the head's support")));
    }
    Ok(())
}

/// `(1/N) Σ log q(u_i | r_i)` from probability rows.
pub fn mean_log_likelihood(probs: ArrayView2<f64>, u: &[usize]) -> Result<f64> {
    check_rows(&probs, u)?;
    let s: f64 = u.iter().enumerate().map(|(i, &v)| floored_ln(probs[[i, v]])).sum();
    Ok(s / u.len() as f64)
}

/// The adversary's maximization target: mean log-likelihood of the realized
/// attribute, i.e. the negative mean cross-entropy.
pub fn club_inner_objective_probs(probs: ArrayView2<f64>, u: &[usize]) -> Result<f64> {
    mean_log_likelihood(probs, u)
}

pub fn club_inner_objective(head: &Mlp, reps: ArrayView2<f64>, u: &[usize]) -> Result<f64> {
    let p = softmax(head.forward_batch(reps)?.view());
    club_inner_objective_probs(p.view(), u)
}

/// Joint term minus the all-pairs marginal term:
/// `(1/N) Σ_i log q(u_i|r_i) − (1/N²) Σ_i Σ_j log q(u_j|r_i)`.
pub fn club_mi_value_probs(probs: ArrayView2<f64>, u: &[usize]) -> Result<MiEstimate> {
    check_rows(&probs, u)?;
    let n = u.len();
    if n < 2 {
        return Err(invalid("club estimate needs at least two pairs"));
    }
    let joint = mean_log_likelihood(probs, u)?;
    // Σ_j log q(u_j | r_i) only depends on the label histogram
    let mut counts = vec![0usize; probs.ncols()];
    for &v in u {
        counts[v] += 1;
    }
    let mut marginal = 0.0;
    for row in probs.rows() {
        for (k, &c) in counts.iter().enumerate() {
            if c > 0 {
                marginal += c as f64 * floored_ln(row[k]);
            }
        }
    }
    marginal /= (n * n) as f64;
    Ok(MiEstimate {
        value: joint - marginal,
        estimator: MiEstimator::Club,
        batch_size: n,
    })
}

pub fn club_mi_value(head: &Mlp, reps: ArrayView2<f64>, u: &[usize]) -> Result<MiEstimate> {
    let p = softmax(head.forward_batch(reps)?.view());
    club_mi_value_probs(p.view(), u)
}

/// `−(1/N) Σ H(y_i, q(·|r_i))`; maximizing it is the utility lower-bound surrogate.
pub fn ce_utility_objective_probs(probs: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
    mean_log_likelihood(probs, y)
}

pub fn ce_utility_objective(head: &Mlp, reps: ArrayView2<f64>, y: &[usize]) -> Result<f64> {
    let p = softmax(head.forward_batch(reps)?.view());
    ce_utility_objective_probs(p.view(), y)
}

/// Variational lower bound `H(u) + E[log q(u|r)]` with the empirical `H(u)`.
pub fn ce_lower_bound_probs(probs: ArrayView2<f64>, u: &[usize]) -> Result<MiEstimate> {
    let ll = mean_log_likelihood(probs, u)?;
    let mut counts = vec![0usize; probs.ncols()];
    for &v in u {
        counts[v] += 1;
    }
    let n = u.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(MiEstimate {
        value: h + ll,
        estimator: MiEstimator::CeLower,
        batch_size: u.len(),
    })
}

pub fn ce_lower_bound(head: &Mlp, reps: ArrayView2<f64>, u: &[usize]) -> Result<MiEstimate> {
    let p = softmax(head.forward_batch(reps)?.view());
    ce_lower_bound_probs(p.view(), u)
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `Σ −sp(−T(pos)) − Σ sp(T(neg))` over critic scores. Always ≤ 0.
pub fn jsd_mi_objective(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.len() != negative.len() {
        return Err(Error::DimensionMismatch {
            expected: positive.len(),
            got: negative.len(),
        });
    }
    if positive.iter().chain(negative).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("critic output".into()));
    }
    let pos: f64 = positive.iter().map(|&s| -softplus(-s)).sum();
    let neg: f64 = negative.iter().map(|&s| softplus(s)).sum();
    Ok(pos - neg)
}

/// Derivatives of [`jsd_mi_objective`] w.r.t. each positive and negative score.
pub fn jsd_score_grads(positive: &[f64], negative: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        positive.iter().map(|&s| sigmoid(-s)).collect(),
        negative.iter().map(|&s| -sigmoid(s)).collect(),
    )
}

/// Base distribution of the perturbation before the `tanh` squashing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationFamily {
    #[default]
    GaussianTanh,
    /// Unit-variance uniform base noise on `[−√3, √3]`.
    Uniform,
}

/// Learnable perturbation `δ = ε · tanh(μ + σ ⊙ z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub epsilon: f64,
    pub family: PerturbationFamily,
}

/// Gradient of a scalar w.r.t. `(μ, log σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationGrad {
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl PerturbationGrad {
    pub fn zeros(m: usize) -> Self {
        Self {
            mu: vec![0.0; m],
            log_sigma: vec![0.0; m],
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.mu.iter_mut().zip(&other.mu) {
            *a += scale * b;
        }
        for (a, b) in self.log_sigma.iter_mut().zip(&other.log_sigma) {
            *a += scale * b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.log_sigma).copied().collect()
    }
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// `ln(1 − tanh²(u))` computed as `ln 4 − 2|u| − 2 ln(1 + e^{−2|u|})`.
fn ln_sech2(u: f64) -> f64 {
    let a = u.abs();
    4f64.ln() - 2.0 * a - 2.0 * (-2.0 * a).exp().ln_1p()
}

impl PerturbationParams {
    /// `μ = 0`, `σ = 1`.
    pub fn new(dim: usize, epsilon: f64, family: PerturbationFamily) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(invalid(format!("epsilon {epsilon} must be >= 0")));
        }
        Ok(Self {
            mu: vec![0.0; dim],
            log_sigma: vec![0.0; dim],
            epsilon,
            family,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.log_sigma[i].exp()
    }

    /// Flat `[μ, log σ]`.
    pub fn flat(&self) -> Vec<f64> {
        self.mu.iter().chain(&self.log_sigma).copied().collect()
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        let m = self.dim();
        if v.len() != 2 * m {
            return Err(Error::DimensionMismatch {
                expected: 2 * m,
                got: v.len(),
            });
        }
        self.mu.copy_from_slice(&v[..m]);
        self.log_sigma.copy_from_slice(&v[m..]);
        Ok(())
    }

    /// Draw base noise for `rows` perturbations.
    pub fn base_noise(&self, rows: usize, rng: &mut Rng) -> Array2<f64> {
        let m = self.dim();
        match self.family {
            PerturbationFamily::GaussianTanh => {
                Array2::from_shape_simple_fn((rows, m), || rng.sample::<f64, _>(StandardNormal))
            }
            PerturbationFamily::Uniform => {
                Array2::from_shape_simple_fn((rows, m), || rng.random_range(-SQRT3..SQRT3))
            }
        }
    }

    /// Deterministic map from base noise to `δ`.
    pub fn transform(&self, z: ArrayView2<f64>) -> Array2<f64> {
        let mut out = z.to_owned();
        for mut row in out.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = self.epsilon * (self.mu[i] + self.sigma(i) * *v).tanh();
            }
        }
        out
    }

    /// Pull `dL/dδ` back to `(μ, log σ)` for the noise `z` that produced `δ`.
    pub fn pullback(&self, z: ArrayView2<f64>, grad_delta: ArrayView2<f64>) -> PerturbationGrad {
        let m = self.dim();
        let mut g = PerturbationGrad::zeros(m);
        for (zr, gr) in z.rows().into_iter().zip(grad_delta.rows()) {
            for i in 0..m {
                let s = self.sigma(i);
                let t = (self.mu[i] + s * zr[i]).tanh();
                let d = gr[i] * self.epsilon * (1.0 - t * t);
                g.mu[i] += d;
                g.log_sigma[i] += d * s * zr[i];
            }
        }
        g
    }

    /// Differential entropy of the base noise `μ + σ ⊙ z`.
    fn base_entropy(&self) -> f64 {
        let per_dim = match self.family {
            PerturbationFamily::GaussianTanh => 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln(),
            PerturbationFamily::Uniform => (2.0 * SQRT3).ln(),
        };
        self.log_sigma.iter().map(|ls| per_dim + ls).sum()
    }

    /// Monte-Carlo entropy of `δ` over the rows of `z`, with its pathwise
    /// gradient. Change of variables through `ε · tanh`:
    /// `H(δ) = H(μ + σz) + E[Σ_i ln(ε (1 − tanh²(μ_i + σ_i z_i)))]`.
    pub fn entropy_with_noise(&self, z: ArrayView2<f64>) -> (f64, PerturbationGrad) {
        let m = self.dim();
        let mut grad = PerturbationGrad {
            mu: vec![0.0; m],
            log_sigma: vec![1.0; m],
        };
        if self.epsilon == 0.0 {
            return (ZERO_SCALE_ENTROPY, PerturbationGrad::zeros(m));
        }
        let k = z.nrows().max(1) as f64;
        let mut jac = 0.0;
        for row in z.rows() {
            for i in 0..m {
                let s = self.sigma(i);
                let u = self.mu[i] + s * row[i];
                jac += ln_sech2(u);
                let dt = -2.0 * u.tanh() / k;
                grad.mu[i] += dt;
                grad.log_sigma[i] += dt * s * row[i];
            }
        }
        let value = self.base_entropy() + m as f64 * self.epsilon.ln() + jac / k;
        (value, grad)
    }
}

/// One draw of `δ`.
pub fn sample_perturbation(params: &PerturbationParams, rng: &mut Rng) -> Vec<f64> {
    let z = params.base_noise(1, rng);
    params.transform(z.view()).row(0).to_vec()
}

/// Monte-Carlo estimate of `H(δ)` from `k` noise draws.
pub fn perturbation_entropy(params: &PerturbationParams, k: usize, rng: &mut Rng) -> Result<f64> {
    if k == 0 {
        return Err(invalid("mc sample count must be positive"));
    }
    let z = params.base_noise(k, rng);
    Ok(params.entropy_with_noise(z.view()).0)
}
