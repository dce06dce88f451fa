//! Strongest-attacker harness for the three threats, plus privacy metrics.

pub mod lira;
pub mod metrics;
pub mod roc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::defense::pia::{aggregate_rows, AggregatorMode};
use crate::defense::{hit_rate, ArchConfig};
use crate::domain::{Dataset, DatasetBag};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, fit_classifier, fit_regressor, predict_proba, FitConfig, Mlp, MlpSpec};
use crate::rng;

pub use lira::{shadow_lira, shadow_lira_with_reference, LiraConfig};
pub use metrics::{mse, psnr, ssim, ssim_flat};
pub use roc::{roc_and_tpr, RocCurve, DEFAULT_FPR_GRID};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Membership,
    Lira,
    Property,
    Reconstruction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub accuracy: f64,
    pub roc: Vec<(f64, f64)>,
    pub tpr_at: Vec<(f64, f64)>,
    pub auc: Option<f64>,
    /// Accuracy restricted to each true class.
    pub per_class: Vec<f64>,
    /// Chance accuracy of a blind guess.
    pub chance: f64,
}

impl AttackReport {
    pub fn tpr_at(&self, fpr: f64) -> Option<f64> {
        self.tpr_at.iter().find(|(f, _)| (f - fpr).abs() < 1e-12).map(|&(_, t)| t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub per_sample_mse: Vec<f64>,
    pub mean_mse: f64,
    pub train_mse: f64,
    pub mean_ssim: Option<f64>,
    pub mean_psnr: Option<f64>,
}

/// Hyperparameters shared by every attacker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig {
                epochs: 200,
                batch_size: 64,
                lr: 3e-3,
                ..FitConfig::default()
            },
            seed: 0,
        }
    }
}

pub(crate) fn per_class(pred: &[usize], labels: &[usize], k: usize) -> Vec<f64> {
    (0..k)
        .map(|c| {
            let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if idx.is_empty() {
                f64::NAN
            } else {
                idx.iter().filter(|&&i| pred[i] == c).count() as f64 / idx.len() as f64
            }
        })
        .collect()
}

pub(crate) fn require_both(u: &[usize]) -> Result<()> {
    let ones = u.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == u.len() {
        return Err(Error::SingleClass("membership labels hold a single class".into()));
    }
    Ok(())
}

/// Membership-labelled store: members get `u = 1`, non-members `u = 0`.
pub fn membership_dataset(members: &Dataset, nonmembers: &Dataset) -> Result<Dataset> {
    let x = ndarray::concatenate(ndarray::Axis(0), &[members.view(), nonmembers.view()])
        .map_err(|e| crate::error::invalid(e.to_string()))?;
    let mut u = vec![1; members.len()];
    u.resize(members.len() + nonmembers.len(), 0);
    Dataset::new(x, u, None, 2)
}

/// Train a fresh membership classifier of architecture `head` on representations.
pub fn train_mia_attacker_on_reps(reps: ArrayView2<f64>, u: &[usize], head: &MlpSpec, cfg: &AttackConfig) -> Result<Mlp> {
    require_both(u)?;
    let mut r = rng::substream(cfg.seed, rng::streams::ATTACK);
    let mut model = Mlp::new(head.clone(), &mut r)?;
    fit_classifier(&mut model, reps, u, &cfg.fit, &mut r)?;
    Ok(model)
}

/// Strongest membership attacker against a frozen encoder: the defense's
/// membership-head architecture retrained from scratch on `attack_train`
/// (labels are membership bits).
pub fn train_mia_attacker(encoder: &Mlp, attack_train: &Dataset, arch: &ArchConfig, cfg: &AttackConfig) -> Result<Mlp> {
    let reps = encoder.forward_batch(attack_train.view())?;
    train_mia_attacker_on_reps(reps.view(), &attack_train.labels, &arch.head_spec(encoder.output_dim(), 2), cfg)
}

/// Evaluate a binary attacker on representations with membership bits.
pub fn membership_report(attacker: &Mlp, reps: ArrayView2<f64>, u: &[usize]) -> Result<AttackReport> {
    require_both(u)?;
    let p = predict_proba(attacker, reps)?;
    let pred = argmax_rows(p.view());
    let scores: Vec<f64> = p.column(1).to_vec();
    let labels: Vec<bool> = u.iter().map(|&v| v == 1).collect();
    let roc = roc_and_tpr(&scores, &labels, &DEFAULT_FPR_GRID)?;
    Ok(AttackReport {
        kind: AttackKind::Membership,
        accuracy: hit_rate(&pred, u),
        roc: roc.points,
        tpr_at: roc.tpr_at,
        auc: Some(roc.auc),
        per_class: per_class(&pred, u, 2),
        chance: 0.5,
    })
}

/// Aggregated representation of each bag under `mode`.
pub fn bag_features(encoder: &Mlp, bags: &[DatasetBag], mode: AggregatorMode) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((bags.len(), encoder.output_dim()));
    for (i, b) in bags.iter().enumerate() {
        let r = encoder.forward_batch(b.data.view())?;
        out.row_mut(i).assign(&aggregate_rows(r.view(), mode).0);
    }
    Ok(out)
}

/// Property attacker on aggregated bag representations. `mode` is the
/// defense's aggregator for a matched attacker or the other one for a
/// substitute attacker.
pub fn train_pia_attacker(
    encoder: &Mlp,
    train_bags: &[DatasetBag],
    test_bags: &[DatasetBag],
    n_properties: usize,
    mode: AggregatorMode,
    arch: &ArchConfig,
    cfg: &AttackConfig,
) -> Result<(Mlp, AttackReport)> {
    let train_y: Vec<usize> = train_bags.iter().map(|b| b.property).collect();
    let test_y: Vec<usize> = test_bags.iter().map(|b| b.property).collect();
    if train_y.is_empty() || test_y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(&p) = test_y.iter().find(|p| !train_y.contains(p)) {
        return Err(Error::InvalidArgument(format!("property class {p} unseen in attack training")));
    }
    if let Some(&p) = train_y.iter().find(|&&p| p >= n_properties) {
        return Err(Error::InvalidArgument(format!("property class {p} outside {n_properties} classes")));
    }
    let xtr = bag_features(encoder, train_bags, mode)?;
    let xte = bag_features(encoder, test_bags, mode)?;
    let mut r = rng::substream(cfg.seed, rng::streams::ATTACK);
    let mut model = Mlp::new(arch.head_spec(encoder.output_dim(), n_properties), &mut r)?;
    fit_classifier(&mut model, xtr.view(), &train_y, &cfg.fit, &mut r)?;
    let pred = argmax_rows(model.forward_batch(xte.view())?.view());
    let report = AttackReport {
        kind: AttackKind::Property,
        accuracy: hit_rate(&pred, &test_y),
        roc: Vec::new(),
        tpr_at: Vec::new(),
        auc: None,
        per_class: per_class(&pred, &test_y, n_properties),
        chance: 1.0 / n_properties as f64,
    };
    Ok((model, report))
}

/// Decoder from published (perturbed) representations back to inputs.
pub fn train_dra_attacker_on_pairs(
    train_reps: ArrayView2<f64>,
    train_x: ArrayView2<f64>,
    test_reps: ArrayView2<f64>,
    test_x: ArrayView2<f64>,
    hidden: &[usize],
    shape: Option<(usize, usize)>,
    cfg: &AttackConfig,
) -> Result<(Mlp, ReconReport)> {
    if train_reps.nrows() != train_x.nrows() || test_reps.nrows() != test_x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: train_x.nrows(),
            got: train_reps.nrows(),
        });
    }
    if train_reps.ncols() != test_reps.ncols() || train_x.ncols() != test_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_reps.ncols(),
            got: test_reps.ncols(),
        });
    }
    let mut widths = vec![train_reps.ncols()];
    widths.extend(hidden);
    widths.push(train_x.ncols());
    let spec = MlpSpec::new(widths, crate::nn::Activation::Relu, crate::nn::Activation::Identity);
    let mut r = rng::substream(cfg.seed, rng::streams::ATTACK);
    let mut model = Mlp::new(spec, &mut r)?;
    fit_regressor(&mut model, train_reps, train_x, &cfg.fit, &mut r)?;
    let train_pred = model.forward_batch(train_reps)?;
    let train_mse = mse(
        &train_pred.iter().copied().collect::<Vec<_>>(),
        &train_x.iter().copied().collect::<Vec<_>>(),
    )?;
    let pred = model.forward_batch(test_reps)?;
    let report = recon_report(pred.view(), test_x, shape, train_mse)?;
    Ok((model, report))
}

/// Reconstruction attacker against a trained DRA defense: the attacker
/// queries the encoder, draws perturbations from the published distribution,
/// and fits a decoder on `(f(x) + δ, x)` pairs.
pub fn train_dra_attacker(
    state: &crate::defense::DraGameState,
    attack_train: &Dataset,
    attack_test: &Dataset,
    hidden: &[usize],
    shape: Option<(usize, usize)>,
    cfg: &AttackConfig,
) -> Result<(Mlp, ReconReport)> {
    let mut noise = rng::substream(cfg.seed, rng::streams::NOISE);
    let rtr = state.perturbed_representation(attack_train.view(), &mut noise)?;
    let rte = state.perturbed_representation(attack_test.view(), &mut noise)?;
    train_dra_attacker_on_pairs(rtr.view(), attack_train.view(), rte.view(), attack_test.view(), hidden, shape, cfg)
}

/// Per-sample MSE, plus SSIM/PSNR when a grid shape is given (data range 1).
pub fn recon_report(pred: ArrayView2<f64>, truth: ArrayView2<f64>, shape: Option<(usize, usize)>, train_mse: f64) -> Result<ReconReport> {
    if pred.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let mut per = Vec::with_capacity(pred.nrows());
    let mut ss = 0.0;
    let mut ps = 0.0;
    for (a, b) in pred.rows().into_iter().zip(truth.rows()) {
        let av = a.to_vec();
        let bv = b.to_vec();
        per.push(mse(&av, &bv)?);
        if let Some(sh) = shape {
            let clipped: Vec<f64> = av.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            ss += ssim_flat(ndarray::ArrayView1::from(&clipped), b, sh, 1.0)?;
            ps += psnr(&clipped, &bv, 1.0)?;
        }
    }
    let n = per.len().max(1) as f64;
    let mean_mse = per.iter().sum::<f64>() / n;
    Ok(ReconReport {
        per_sample_mse: per,
        mean_mse,
        train_mse,
        mean_ssim: shape.map(|_| ss / n),
        mean_psnr: shape.map(|_| ps / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn arch() -> ArchConfig {
        ArchConfig {
            encoder_hidden: vec![],
            rep_dim: 2,
            head_hidden: vec![8],
            activation: Activation::Relu,
            encoder_output: Activation::Identity,
        }
    }

    fn identity_encoder(d: usize) -> Mlp {
        let mut p = vec![0.0; d * d + d];
        for i in 0..d {
            p[i * d + i] = 1.0;
        }
        Mlp::from_params(MlpSpec::new(vec![d, d], Activation::Identity, Activation::Identity), p).unwrap()
    }

    fn gaussian(n: usize, shift: f64, seed: u64) -> Array2<f64> {
        let mut r = rng::from_seed(seed);
        Array2::from_shape_fn((n, 2), |(_, j)| r.sample::<f64, _>(StandardNormal) + if j == 0 { shift } else { 0.0 })
    }

    #[test]
    fn separable_membership_is_learned() {
        let enc = identity_encoder(2);
        let mk = |seed| {
            let m = Dataset::new(gaussian(200, 4.0, seed), vec![0; 200], None, 2).unwrap();
            let n = Dataset::new(gaussian(200, -4.0, seed + 1), vec![0; 200], None, 2).unwrap();
            membership_dataset(&m, &n).unwrap()
        };
        let (tr, te) = (mk(1), mk(7));
        let att = train_mia_attacker(&enc, &tr, &arch(), &AttackConfig::default()).unwrap();
        let rep = membership_report(&att, enc.forward_batch(te.view()).unwrap().view(), &te.labels).unwrap();
        assert!(rep.accuracy >= 0.95, "{}", rep.accuracy);
    }

    #[test]
    fn signal_free_membership_is_chance() {
        let enc = identity_encoder(2);
        let mk = |seed| {
            let m = Dataset::new(gaussian(1000, 0.0, seed), vec![0; 1000], None, 2).unwrap();
            let n = Dataset::new(gaussian(1000, 0.0, seed + 1), vec![0; 1000], None, 2).unwrap();
            membership_dataset(&m, &n).unwrap()
        };
        let (tr, te) = (mk(1), mk(7));
        let cfg = AttackConfig {
            fit: FitConfig {
                epochs: 20,
                ..AttackConfig::default().fit
            },
            seed: 0,
        };
        let att = train_mia_attacker(&enc, &tr, &arch(), &cfg).unwrap();
        let rep = membership_report(&att, enc.forward_batch(te.view()).unwrap().view(), &te.labels).unwrap();
        assert!((rep.accuracy - 0.5).abs() <= 0.03, "{}", rep.accuracy);
    }

    #[test]
    fn single_class_attack_set_is_rejected() {
        let enc = identity_encoder(2);
        let d = Dataset::new(gaussian(10, 0.0, 1), vec![1; 10], None, 2).unwrap();
        assert!(matches!(
            train_mia_attacker(&enc, &d, &arch(), &AttackConfig::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn mean_decoder_floor_is_feature_variance() {
        let x = gaussian(500, 0.0, 3);
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let pred = Array2::from_shape_fn(x.dim(), |(_, j)| mean[j]);
        let r = recon_report(pred.view(), x.view(), None, 0.0).unwrap();
        let var: f64 = x.var_axis(ndarray::Axis(0), 0.0).mean().unwrap();
        assert!((r.mean_mse - var).abs() < 1e-12);
    }

    #[test]
    fn clean_low_dim_decoder_tracks_linear_oracle() {
        // x ∈ R², published r = x exactly; a least-squares linear decoder is exact
        let xtr = gaussian(400, 0.0, 5);
        let xte = gaussian(200, 0.0, 6);
        let cfg = AttackConfig::default();
        let (_, rep) = train_dra_attacker_on_pairs(xtr.view(), xtr.view(), xte.view(), xte.view(), &[16], None, &cfg).unwrap();
        assert!(rep.train_mse < 0.02 && rep.mean_mse < 0.03, "{rep:?}");
    }

    #[test]
    fn constant_encoder_property_attack_is_chance() {
        let mut r = rng::from_seed(2);
        let x = Array2::from_shape_simple_fn((400, 2), || r.random_range(-1.0..1.0));
        let a: Vec<usize> = (0..400).map(|i| i % 2).collect();
        let pool = Dataset::new(x, vec![0; 400], Some(a), 2).unwrap();
        let grid = [0.2, 0.3, 0.4, 0.5];
        let tr = crate::defense::sample_bags(&pool, &grid, (10, 20), 80, 1).unwrap();
        let te = crate::defense::sample_bags(&pool, &grid, (10, 20), 40, 2).unwrap();
        let zero = Mlp::from_params(MlpSpec::new(vec![2, 2], Activation::Identity, Activation::Identity), vec![0.0; 6]).unwrap();
        let (_, rep) = train_pia_attacker(&zero, &tr, &te, 4, AggregatorMode::Mean, &arch(), &AttackConfig::default()).unwrap();
        // constant features: the attacker predicts a single class, hitting exactly 1/K of the cycled bags
        assert_eq!(rep.accuracy, 0.25);
        assert_eq!(rep.chance, 0.25);
    }
}
