//! Reconstruction game: a deterministic encoder followed by a learned random
//! perturbation `δ = ε·tanh(μ + σz)`, played against a JSD critic on
//! `(x, f(x) + δ)` pairs.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{draw_indices, ensure_finite, head_cross_entropy, rows, ArchConfig, RoundLosses, UtilityHead};
use crate::domain::{Dataset, GameConfig};
use crate::error::{invalid, Error, Result};
use crate::mi::{jsd_mi_objective, jsd_score_grads, PerturbationFamily, PerturbationParams};
use crate::domain::OptimizerKind;
use crate::nn::{Activation, Mlp, MlpSpec, OptimizerState};
use crate::rng::{self, Rng};

/// Running maximum of `‖r + δ‖₂` observed during training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryNote {
    pub max_norm: f64,
}

impl GeometryNote {
    pub fn observe(&mut self, perturbed: ArrayView2<f64>) {
        for row in perturbed.rows() {
            let n = row.dot(&row).sqrt();
            if n > self.max_norm {
                self.max_norm = n;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraGameState {
    pub encoder: Mlp,
    /// Scores `(x, r + δ)` pairs; one real output.
    pub critic: Mlp,
    pub utility_head: Mlp,
    pub perturbation: PerturbationParams,
    pub geometry: GeometryNote,
    pub config: GameConfig,
    pub arch: ArchConfig,
    pub round: usize,
    pub history: Vec<RoundLosses>,
}

/// JSD estimate (sum over pairs) and the two utility cross-entropy sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DraLosses {
    pub jsd: f64,
    pub l1_perturbed: f64,
    pub l2_clean: f64,
}

/// A random permutation without fixed points.
pub fn derangement(n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InsufficientSamples("a negative pair needs a batch of at least 2".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut perm = vec![0; n];
    for i in 0..n {
        perm[order[i]] = order[(i + 1) % n];
    }
    Ok(perm)
}

impl DraGameState {
    pub fn new(
        input_dim: usize,
        n_classes: usize,
        arch: ArchConfig,
        config: GameConfig,
        family: PerturbationFamily,
    ) -> Result<Self> {
        config.validate()?;
        config.beta()?;
        let mut rng = rng::substream(config.seed, rng::streams::INIT);
        let encoder = Mlp::new(arch.encoder_spec(input_dim), &mut rng)?;
        let mut critic_widths = vec![input_dim + arch.rep_dim];
        critic_widths.extend(&arch.head_hidden);
        critic_widths.push(1);
        let critic = Mlp::new(MlpSpec::new(critic_widths, arch.activation, Activation::Identity), &mut rng)?;
        let utility_head = Mlp::new(arch.head_spec(arch.rep_dim, n_classes), &mut rng)?;
        let perturbation = PerturbationParams::new(arch.rep_dim, config.epsilon, family)?;
        Ok(Self {
            encoder,
            critic,
            utility_head,
            perturbation,
            geometry: GeometryNote::default(),
            config,
            arch,
            round: 0,
            history: Vec::new(),
        })
    }

    pub fn represent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward_batch(x)
    }

    /// Published representation `f(x) + δ` with fresh noise from `rng`.
    pub fn perturbed_representation(&self, x: ArrayView2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        let r = self.represent(x)?;
        let z = self.perturbation.base_noise(x.nrows(), rng);
        Ok(r + self.perturbation.transform(z.view()))
    }

    /// Task accuracy on perturbed representations, averaged over `draws` noise draws.
    pub fn utility_accuracy(&self, data: &Dataset, draws: usize, rng: &mut Rng) -> Result<f64> {
        let head = UtilityHead::Mlp(self.utility_head.clone());
        let draws = draws.max(1);
        let mut total = 0.0;
        for _ in 0..draws {
            let r = self.perturbed_representation(data.view(), rng)?;
            total += head.accuracy(r.view(), &data.labels)?;
        }
        Ok(total / draws as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite()
            && self.critic.is_finite()
            && self.utility_head.is_finite()
            && self.perturbation.flat().iter().all(|v| v.is_finite())
    }

    fn critic_input(x: ArrayView2<f64>, rp: ArrayView2<f64>) -> Result<Array2<f64>> {
        concatenate(Axis(1), &[x, rp]).map_err(|e| invalid(e.to_string()))
    }

    /// Critic scores on positive pairs `(x_j, r'_j)` and negative pairs `(x_{π(j)}, r'_j)`.
    fn critic_scores(&self, x: ArrayView2<f64>, rp: ArrayView2<f64>, perm: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let xn = rows(x, perm);
        let pos = self.critic.forward_batch(Self::critic_input(x, rp)?.view())?;
        let neg = self.critic.forward_batch(Self::critic_input(xn.view(), rp)?.view())?;
        Ok((pos.column(0).to_vec(), neg.column(0).to_vec()))
    }

    /// Gradients of the JSD sum w.r.t. the critic parameters and w.r.t. `r'`.
    fn jsd_grads(&self, x: ArrayView2<f64>, rp: ArrayView2<f64>, perm: &[usize]) -> Result<(f64, Vec<f64>, Array2<f64>)> {
        let d = x.ncols();
        let xn = rows(x, perm);
        let tp = self.critic.forward_tape(Self::critic_input(x, rp)?.view())?;
        let tn = self.critic.forward_tape(Self::critic_input(xn.view(), rp)?.view())?;
        let pos = tp.output().column(0).to_vec();
        let neg = tn.output().column(0).to_vec();
        let value = jsd_mi_objective(&pos, &neg)?;
        let (gp, gn) = jsd_score_grads(&pos, &neg);
        let gp = Array2::from_shape_vec((gp.len(), 1), gp).unwrap();
        let gn = Array2::from_shape_vec((gn.len(), 1), gn).unwrap();
        let (mut gc, dp) = self.critic.backward(&tp, gp.view());
        let (gc2, dn) = self.critic.backward(&tn, gn.view());
        for (a, b) in gc.iter_mut().zip(&gc2) {
            *a += b;
        }
        let drp = &dp.slice(s![.., d..]) + &dn.slice(s![.., d..]);
        Ok((value, gc, drp))
    }

    /// Encoder objective `λ·I_jsd/N + (1−λ)(L1 + L2)` (batch means) under a
    /// fixed `δ` and negative permutation, with its encoder gradient.
    pub fn encoder_objective(
        &self,
        x: ArrayView2<f64>,
        y: &[usize],
        delta: ArrayView2<f64>,
        perm: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let lambda = self.config.lambda;
        let n = x.nrows() as f64;
        let tape = self.encoder.forward_tape(x)?;
        let r = tape.output();
        let rp = r + &delta;
        let (jsd, _, d_jsd) = self.jsd_grads(x, rp.view(), perm)?;
        let (l1, _, d_l1) = head_cross_entropy(&self.utility_head, rp.view(), y)?;
        let (l2, _, d_l2) = head_cross_entropy(&self.utility_head, r.view(), y)?;
        let dr = d_jsd * (lambda / n) + (d_l1 + d_l2) * (1.0 - lambda);
        let (g, _) = self.encoder.backward(&tape, dr.view());
        Ok((lambda * jsd / n + (1.0 - lambda) * (l1 + l2), g))
    }

    /// Perturbation objective `CE(y, h(f(x) + δ(z))) − β·H(δ)` on the noise
    /// rows `z` (one per sample, doubling as the entropy draws) and its
    /// gradient w.r.t. the flat `[μ, log σ]`.
    pub fn perturbation_objective(&self, x: ArrayView2<f64>, y: &[usize], z: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let beta = self.config.beta()?;
        let r = self.represent(x)?;
        let delta = self.perturbation.transform(z);
        let rp = r + &delta;
        let (ce, _, d_rp) = head_cross_entropy(&self.utility_head, rp.view(), y)?;
        let mut g = self.perturbation.pullback(z, d_rp.view());
        let mut value = ce;
        if beta != 0.0 && self.perturbation.epsilon > 0.0 {
            let (h, gh) = self.perturbation.entropy_with_noise(z);
            value -= beta * h;
            g.add_scaled(&gh, -beta);
        }
        Ok((value, g.flat()))
    }
}

/// Summed JSD estimate on `(x_j, f(x_j) + δ_j)`, summed cross-entropy under
/// the perturbation and summed clean cross-entropy.
pub fn dra_losses(state: &DraGameState, batch: &Dataset, delta: ArrayView2<f64>, rng: &mut Rng) -> Result<DraLosses> {
    let n = batch.len();
    let perm = derangement(n, rng)?;
    if delta.dim() != (n, state.perturbation.dim()) {
        return Err(Error::DimensionMismatch {
            expected: n * state.perturbation.dim(),
            got: delta.len(),
        });
    }
    let r = state.represent(batch.view())?;
    let rp = &r + &delta;
    let (pos, neg) = state.critic_scores(batch.view(), rp.view(), &perm)?;
    let jsd = jsd_mi_objective(&pos, &neg)?;
    let (l1, _, _) = head_cross_entropy(&state.utility_head, rp.view(), &batch.labels)?;
    let (l2, _, _) = head_cross_entropy(&state.utility_head, r.view(), &batch.labels)?;
    Ok(DraLosses {
        jsd,
        l1_perturbed: l1 * n as f64,
        l2_clean: l2 * n as f64,
    })
}

/// `epochs` passes of `k`-sample Monte-Carlo SGD on the perturbation
/// objective with the networks frozen. Returns the updated parameters.
pub fn update_perturbation_params(
    state: &DraGameState,
    batch: &Dataset,
    lr: f64,
    epochs: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<PerturbationParams> {
    let mut opt = OptimizerState::new(OptimizerKind::Sgd, lr, 2 * state.perturbation.dim())?;
    let mut s = state.clone();
    perturbation_sweep(&mut s, batch.view(), &batch.labels, &mut opt, epochs, k, rng)?;
    Ok(s.perturbation)
}

fn perturbation_sweep(
    state: &mut DraGameState,
    x: ArrayView2<f64>,
    y: &[usize],
    opt: &mut OptimizerState,
    epochs: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<()> {
    state.config.beta()?;
    if state.perturbation.epsilon == 0.0 {
        return Ok(());
    }
    let mut flat = state.perturbation.flat();
    for _ in 0..epochs {
        for _ in 0..k.max(1) {
            let z = state.perturbation.base_noise(x.nrows(), rng);
            let (v, g) = state.perturbation_objective(x, y, z.view())?;
            ensure_finite(state.round, "perturbation objective", v)?;
            opt.step(&mut flat, &g)?;
            state.perturbation.set_flat(&flat)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct DraTrainer {
    pub state: DraGameState,
    opt_phi: OptimizerState,
    opt_psi: OptimizerState,
    opt_omega: OptimizerState,
    opt_theta: OptimizerState,
    batch_rng: Rng,
    noise_rng: Rng,
}

impl DraTrainer {
    pub fn new(state: DraGameState) -> Result<Self> {
        let c = &state.config;
        Ok(Self {
            opt_phi: OptimizerState::new(OptimizerKind::Sgd, c.lr_perturbation, 2 * state.perturbation.dim())?,
            opt_psi: OptimizerState::new(c.optimizer, c.lr_adversary, state.critic.params().len())?,
            opt_omega: OptimizerState::new(c.optimizer, c.lr_utility, state.utility_head.params().len())?,
            opt_theta: OptimizerState::new(c.optimizer, c.lr_encoder, state.encoder.params().len())?,
            batch_rng: rng::substream(c.seed, "batches"),
            noise_rng: rng::substream(c.seed, rng::streams::NOISE),
            state,
        })
    }

    /// Four phases on one batch: perturbation, critic, utility head, encoder.
    pub fn batch_step(&mut self, x: ArrayView2<f64>, y: &[usize]) -> Result<DraLosses> {
        let round = self.state.round;
        let n = x.nrows();
        let c = self.state.config.clone();
        perturbation_sweep(
            &mut self.state,
            x,
            y,
            &mut self.opt_phi,
            c.perturbation_epochs,
            c.mc_samples,
            &mut self.noise_rng,
        )?;

        let z = self.state.perturbation.base_noise(n, &mut self.noise_rng);
        let delta = self.state.perturbation.transform(z.view());
        let perm = derangement(n, &mut self.noise_rng)?;

        // critic ascends the JSD estimate
        let r = self.state.encoder.forward_batch(x)?;
        let rp = &r + &delta;
        self.state.geometry.observe(rp.view());
        let mut jsd = 0.0;
        for _ in 0..c.adversary_steps {
            let (j, g_psi, _) = self.state.jsd_grads(x, rp.view(), &perm)?;
            ensure_finite(round, "jsd estimate", j)?;
            let g_psi: Vec<f64> = g_psi.iter().map(|g| -g / n as f64).collect();
            self.opt_psi.step(self.state.critic.params_mut(), &g_psi)?;
            jsd = j;
        }

        // utility head on perturbed + clean cross-entropy
        let (l1, g1, _) = head_cross_entropy(&self.state.utility_head, rp.view(), y)?;
        let (l2, g2, _) = head_cross_entropy(&self.state.utility_head, r.view(), y)?;
        ensure_finite(round, "utility loss", l1 + l2)?;
        let g_omega: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a + b).collect();
        self.opt_omega.step(self.state.utility_head.params_mut(), &g_omega)?;

        let (obj, g_theta) = self.state.encoder_objective(x, y, delta.view(), &perm)?;
        ensure_finite(round, "encoder objective", obj)?;
        self.opt_theta.step(self.state.encoder.params_mut(), &g_theta)?;
        if !self.state.is_finite() {
            return Err(Error::Diverged {
                round,
                detail: "non-finite parameters".into(),
            });
        }
        Ok(DraLosses {
            jsd,
            l1_perturbed: l1 * n as f64,
            l2_clean: l2 * n as f64,
        })
    }

    pub fn round(&mut self, data: &Dataset) -> Result<RoundLosses> {
        let idx = draw_indices(data.len(), self.state.config.batch_size, &mut self.batch_rng);
        let x = rows(data.view(), &idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let mut last = None;
        for _ in 0..self.state.config.inner_steps {
            last = Some(self.batch_step(x.view(), &y)?);
        }
        let l = last.expect("inner_steps > 0");
        let n = idx.len() as f64;
        let rec = RoundLosses {
            round: self.state.round,
            privacy: l.jsd / n,
            utility: (l.l1_perturbed + l.l2_clean) / n,
        };
        self.state.history.push(rec.clone());
        self.state.round += 1;
        Ok(rec)
    }
}

pub fn train_dra_defense(
    data: &Dataset,
    arch: &ArchConfig,
    config: &GameConfig,
    family: PerturbationFamily,
) -> Result<DraGameState> {
    if data.len() < 2 {
        return Err(Error::InsufficientSamples("need at least 2 samples".into()));
    }
    let state = DraGameState::new(data.dim(), data.n_classes, arch.clone(), config.clone(), family)?;
    let mut t = DraTrainer::new(state)?;
    for _ in 0..config.rounds {
        t.round(data)?;
    }
    Ok(t.state)
}
