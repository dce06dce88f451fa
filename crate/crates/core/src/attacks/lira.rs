//! Likelihood-ratio membership attack with shadow models trained on
//! representations.

use ndarray::{ArrayView2, Axis};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roc::{roc_and_tpr, DEFAULT_FPR_GRID};
use super::{per_class, require_both, AttackKind, AttackReport};
use crate::defense::hit_rate;
use crate::error::{Error, Result};
use crate::nn::loss::PROB_FLOOR;
use crate::nn::{fit_classifier, predict_proba, FitConfig, Mlp, MlpSpec};
use crate::rng;

/// Below this many in-models per target, only the out-distribution is fitted.
pub const MIN_IN_MODELS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiraConfig {
    pub n_shadow: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for LiraConfig {
    fn default() -> Self {
        Self {
            n_shadow: 16,
            fit: FitConfig {
                epochs: 300,
                batch_size: 64,
                lr: 5e-3,
                ..FitConfig::default()
            },
            seed: 0,
        }
    }
}

/// `ln p − ln(1 − p)` of the true-label confidence, with the probability floor.
pub fn logit_confidence(model: &Mlp, reps: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    let p = predict_proba(model, reps)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let q = p[[i, y]].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            q.ln() - (1.0 - q).ln()
        })
        .collect())
}

fn log_normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((x - mu).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// Shadow-model likelihood-ratio attack.
///
/// `target` is the model whose training membership is audited; `pool_u[i] = 1`
/// marks pool rows it was trained on. Each shadow model of architecture
/// `shadow_spec` is trained on a random half of the pool; per-target Gaussians
/// are fitted to the in- and out-shadow statistics (per-target means, pooled
/// variances).
pub fn shadow_lira(
    target: &Mlp,
    pool_reps: ArrayView2<f64>,
    pool_y: &[usize],
    pool_u: &[usize],
    shadow_spec: &MlpSpec,
    cfg: &LiraConfig,
) -> Result<AttackReport> {
    shadow_lira_with_reference(target, pool_reps, pool_y, pool_u, None, shadow_spec, cfg)
}

/// [`shadow_lira`] where every shadow also trains on a fixed labelled
/// `reference` set, e.g. the known non-members a membership head was fitted
/// against.
pub fn shadow_lira_with_reference(
    target: &Mlp,
    pool_reps: ArrayView2<f64>,
    pool_y: &[usize],
    pool_u: &[usize],
    reference: Option<(ArrayView2<f64>, &[usize])>,
    shadow_spec: &MlpSpec,
    cfg: &LiraConfig,
) -> Result<AttackReport> {
    let n = pool_reps.nrows();
    if cfg.n_shadow < 2 {
        return Err(Error::InvalidArgument("lira needs at least 2 shadow models".into()));
    }
    if n < 8 || pool_y.len() != n || pool_u.len() != n {
        return Err(Error::InsufficientSamples(format!("pool of {n} rows is too small for in/out splits")));
    }
    require_both(pool_u)?;
    if let Some((rx, ry)) = &reference {
        if rx.nrows() != ry.len() || rx.ncols() != pool_reps.ncols() {
            return Err(Error::DimensionMismatch {
                expected: pool_reps.ncols(),
                got: rx.ncols(),
            });
        }
    }

    let shadows: Vec<(Vec<bool>, Vec<f64>)> = (0..cfg.n_shadow)
        .into_par_iter()
        .map(|k| -> Result<(Vec<bool>, Vec<f64>)> {
            let mut r = rng::substream(cfg.seed, &format!("shadow{k}"));
            let mask: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
            let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
            let mut x = pool_reps.select(Axis(0), &idx);
            let mut y: Vec<usize> = idx.iter().map(|&i| pool_y[i]).collect();
            if let Some((rx, ry)) = &reference {
                x = ndarray::concatenate(Axis(0), &[x.view(), rx.view()])
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                y.extend_from_slice(ry);
            }
            let mut model = Mlp::new(shadow_spec.clone(), &mut r)?;
            fit_classifier(&mut model, x.view(), &y, &cfg.fit, &mut r)?;
            Ok((mask, logit_confidence(&model, pool_reps, pool_y)?))
        })
        .collect::<Result<_>>()?;

    let target_stat = logit_confidence(target, pool_reps, pool_y)?;
    let mut mu_in = vec![f64::NAN; n];
    let mut mu_out = vec![f64::NAN; n];
    let mut n_in = vec![0usize; n];
    let (mut ss_in, mut c_in, mut ss_out, mut c_out) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        let ins: Vec<f64> = shadows.iter().filter(|s| s.0[i]).map(|s| s.1[i]).collect();
        let outs: Vec<f64> = shadows.iter().filter(|s| !s.0[i]).map(|s| s.1[i]).collect();
        n_in[i] = ins.len();
        if !ins.is_empty() {
            let m = ins.iter().sum::<f64>() / ins.len() as f64;
            ss_in += ins.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            c_in += ins.len() - 1;
            mu_in[i] = m;
        }
        if !outs.is_empty() {
            let m = outs.iter().sum::<f64>() / outs.len() as f64;
            ss_out += outs.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            c_out += outs.len() - 1;
            mu_out[i] = m;
        }
    }
    let var_in = (ss_in / c_in.max(1) as f64).max(1e-6);
    let var_out = (ss_out / c_out.max(1) as f64).max(1e-6);
    let global_out = mu_out.iter().filter(|v| v.is_finite()).sum::<f64>()
        / mu_out.iter().filter(|v| v.is_finite()).count().max(1) as f64;

    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let s = target_stat[i];
            let mo = if mu_out[i].is_finite() { mu_out[i] } else { global_out };
            if n_in[i] >= MIN_IN_MODELS {
                log_normal_pdf(s, mu_in[i], var_in) - log_normal_pdf(s, mo, var_out)
            } else {
                (s - mo) / var_out.sqrt()
            }
        })
        .collect();
    let labels: Vec<bool> = pool_u.iter().map(|&u| u == 1).collect();
    let roc = roc_and_tpr(&scores, &labels, &DEFAULT_FPR_GRID)?;
    let pred: Vec<usize> = scores.iter().map(|&s| (s > 0.0) as usize).collect();
    Ok(AttackReport {
        kind: AttackKind::Lira,
        accuracy: hit_rate(&pred, pool_u),
        roc: roc.points,
        tpr_at: roc.tpr_at,
        auc: Some(roc.auc),
        per_class: per_class(&pred, pool_u, 2),
        chance: 0.5,
    })
}
