//! Membership game: encoder `f`, membership head `g` and utility head `h`.
//!
//! Per inner step the membership head descends its cross-entropy, the utility
//! head descends the task cross-entropy on members, and the encoder descends
//! `−λ·L1 + (1−λ)·L2`.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{draw_indices, ensure_finite, head_cross_entropy, rows, ArchConfig, RoundLosses, UtilityHead};
use crate::domain::{Dataset, GameConfig};
use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, Mlp, OptimizerState};
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiaGameState {
    pub encoder: Mlp,
    pub membership_head: Mlp,
    pub utility_head: UtilityHead,
    pub config: GameConfig,
    pub arch: ArchConfig,
    pub round: usize,
    pub history: Vec<RoundLosses>,
}

impl MiaGameState {
    pub fn new(input_dim: usize, n_classes: usize, arch: ArchConfig, config: GameConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::substream(config.seed, rng::streams::INIT);
        let encoder = Mlp::new(arch.encoder_spec(input_dim), &mut rng)?;
        let membership_head = Mlp::new(arch.head_spec(arch.rep_dim, 2), &mut rng)?;
        let utility_head = UtilityHead::Mlp(Mlp::new(arch.head_spec(arch.rep_dim, n_classes), &mut rng)?);
        Ok(Self {
            encoder,
            membership_head,
            utility_head,
            config,
            arch,
            round: 0,
            history: Vec::new(),
        })
    }

    /// The AdvReg configuration: the encoder emits class probabilities and the
    /// utility head is the identity.
    pub fn advreg(input_dim: usize, n_classes: usize, arch: ArchConfig, config: GameConfig) -> Result<Self> {
        let arch = ArchConfig {
            rep_dim: n_classes,
            encoder_output: Activation::Softmax,
            ..arch
        };
        let mut state = Self::new(input_dim, n_classes, arch, config)?;
        state.utility_head = UtilityHead::Identity;
        Ok(state)
    }

    pub fn represent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward_batch(x)
    }

    pub fn utility_accuracy(&self, data: &Dataset) -> Result<f64> {
        let r = self.represent(data.view())?;
        self.utility_head.accuracy(r.view(), &data.labels)
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.membership_head.is_finite() && self.utility_head.is_finite()
    }

    /// Encoder objective `−λ·L1 + (1−λ)·L2` (batch means) and its gradient
    /// w.r.t. the encoder parameters.
    pub fn encoder_objective(&self, x1: ArrayView2<f64>, y1: &[usize], x0: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        let n1 = x1.nrows();
        if n1 == 0 || x0.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let lambda = self.config.lambda;
        let x = ndarray::concatenate(ndarray::Axis(0), &[x1, x0]).map_err(|e| invalid(e.to_string()))?;
        let tape = self.encoder.forward_tape(x.view())?;
        let r = tape.output();
        let u = membership_labels(n1, x0.nrows());
        let (l1, _, dr_g) = head_cross_entropy(&self.membership_head, r.view(), &u)?;
        let (l2, _, dr_h) = self.utility_head.cross_entropy(r.slice(s![..n1, ..]), y1)?;
        let mut dr = dr_g * (-lambda);
        {
            let mut top = dr.slice_mut(s![..n1, ..]);
            top.scaled_add(1.0 - lambda, &dr_h);
        }
        let (g, _) = self.encoder.backward(&tape, dr.view());
        Ok((-lambda * l1 + (1.0 - lambda) * l2, g))
    }
}

fn membership_labels(n1: usize, n0: usize) -> Vec<usize> {
    let mut u = vec![1; n1];
    u.resize(n1 + n0, 0);
    u
}

/// Summed membership cross-entropy `L1` over `D1 ∪ D0` and summed task
/// cross-entropy `L2` over `D1`.
pub fn mia_losses(state: &MiaGameState, d1: &Dataset, d0: &Dataset) -> Result<(f64, f64)> {
    if d1.is_empty() || d0.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let r1 = state.represent(d1.view())?;
    let r0 = state.represent(d0.view())?;
    let r = ndarray::concatenate(ndarray::Axis(0), &[r1.view(), r0.view()]).map_err(|e| invalid(e.to_string()))?;
    let u = membership_labels(d1.len(), d0.len());
    let (l1, _, _) = head_cross_entropy(&state.membership_head, r.view(), &u)?;
    let (l2, _, _) = state.utility_head.cross_entropy(r1.view(), &d1.labels)?;
    Ok((l1 * u.len() as f64, l2 * d1.len() as f64))
}

/// AdvReg objective `λ·Σ H(u, g(f(x))) − (1−λ)·Σ_{D1} H(y, f(x))` where `f`
/// emits class probabilities.
pub fn advreg_mode_loss(state: &MiaGameState, d1: &Dataset, d0: &Dataset, lambda: f64) -> Result<f64> {
    if state.encoder.output_dim() != d1.n_classes || state.encoder.spec().output != Activation::Softmax {
        return Err(invalid(format!(
            "advreg needs a softmax encoder with {} outputs, got {} ({:?})",
            d1.n_classes,
            state.encoder.output_dim(),
            state.encoder.spec().output
        )));
    }
    if d1.is_empty() || d0.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut adv = 0.0;
    for (data, u) in [(d1, 1usize), (d0, 0usize)] {
        let p = state.represent(data.view())?;
        let (l, _, _) = head_cross_entropy(&state.membership_head, p.view(), &vec![u; data.len()])?;
        adv += l * data.len() as f64;
    }
    let p1 = state.represent(d1.view())?;
    let task: f64 = d1
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -crate::nn::loss::floored_ln(p1[[i, y]]))
        .sum();
    Ok(lambda * adv - (1.0 - lambda) * task)
}

/// Stateful trainer; one call to [`MiaTrainer::round`] is one outer round.
#[derive(Clone, Debug)]
pub struct MiaTrainer {
    pub state: MiaGameState,
    opt_psi: OptimizerState,
    opt_omega: Option<OptimizerState>,
    opt_theta: OptimizerState,
    rng: Rng,
}

impl MiaTrainer {
    pub fn new(state: MiaGameState) -> Result<Self> {
        let c = &state.config;
        let opt_psi = OptimizerState::new(c.optimizer, c.lr_adversary, state.membership_head.params().len())?;
        let opt_omega = match &state.utility_head {
            UtilityHead::Mlp(m) => Some(OptimizerState::new(c.optimizer, c.lr_utility, m.params().len())?),
            UtilityHead::Identity => None,
        };
        let opt_theta = OptimizerState::new(c.optimizer, c.lr_encoder, state.encoder.params().len())?;
        let rng = rng::substream(c.seed, "batches");
        Ok(Self {
            state,
            opt_psi,
            opt_omega,
            opt_theta,
            rng,
        })
    }

    /// One inner step (Ψ, then Ω, then Θ) on the given balanced batch.
    pub fn inner_step(&mut self, x1: ArrayView2<f64>, y1: &[usize], x0: ArrayView2<f64>) -> Result<(f64, f64)> {
        let round = self.state.round;
        let n1 = x1.nrows();
        let x = ndarray::concatenate(ndarray::Axis(0), &[x1, x0]).map_err(|e| invalid(e.to_string()))?;
        let r = self.state.encoder.forward_batch(x.view())?;
        let u = membership_labels(n1, x0.nrows());

        let mut l1 = 0.0;
        for _ in 0..self.state.config.adversary_steps {
            let (l, g_psi, _) = head_cross_entropy(&self.state.membership_head, r.view(), &u)?;
            ensure_finite(round, "membership loss", l)?;
            self.opt_psi.step(self.state.membership_head.params_mut(), &g_psi)?;
            l1 = l;
        }

        let (l2, g_omega, _) = self.state.utility_head.cross_entropy(r.slice(s![..n1, ..]), y1)?;
        ensure_finite(round, "utility loss", l2)?;
        if let (Some(opt), Some(p)) = (self.opt_omega.as_mut(), self.state.utility_head.params_mut()) {
            opt.step(p, &g_omega)?;
        }

        let (obj, g_theta) = self.state.encoder_objective(x1, y1, x0)?;
        ensure_finite(round, "encoder objective", obj)?;
        self.opt_theta.step(self.state.encoder.params_mut(), &g_theta)?;
        if !self.state.is_finite() {
            return Err(Error::Diverged {
                round,
                detail: "non-finite parameters".into(),
            });
        }
        Ok((l1, l2))
    }

    /// Draw a balanced batch (B members, B non-members) and run the inner steps.
    pub fn round(&mut self, d1: &Dataset, d0: &Dataset) -> Result<RoundLosses> {
        let b = self.state.config.batch_size;
        let i1 = draw_indices(d1.len(), b, &mut self.rng);
        let i0 = draw_indices(d0.len(), b, &mut self.rng);
        let x1 = rows(d1.view(), &i1);
        let y1: Vec<usize> = i1.iter().map(|&i| d1.labels[i]).collect();
        let x0 = rows(d0.view(), &i0);
        let mut last = (0.0, 0.0);
        for _ in 0..self.state.config.inner_steps {
            last = self.inner_step(x1.view(), &y1, x0.view())?;
        }
        let rec = RoundLosses {
            round: self.state.round,
            privacy: last.0,
            utility: last.1,
        };
        self.state.history.push(rec.clone());
        self.state.round += 1;
        Ok(rec)
    }
}

/// Run the configured number of rounds from a fresh initialization.
pub fn train_mia_defense(d1: &Dataset, d0: &Dataset, arch: &ArchConfig, config: &GameConfig) -> Result<MiaGameState> {
    check_inputs(d1, d0)?;
    let state = MiaGameState::new(d1.dim(), d1.n_classes, arch.clone(), config.clone())?;
    run(state, d1, d0)
}

/// AdvReg variant of [`train_mia_defense`].
pub fn train_advreg(d1: &Dataset, d0: &Dataset, arch: &ArchConfig, config: &GameConfig) -> Result<MiaGameState> {
    check_inputs(d1, d0)?;
    let state = MiaGameState::advreg(d1.dim(), d1.n_classes, arch.clone(), config.clone())?;
    run(state, d1, d0)
}

fn check_inputs(d1: &Dataset, d0: &Dataset) -> Result<()> {
    if d1.is_empty() || d0.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if d1.dim() != d0.dim() {
        return Err(Error::DimensionMismatch {
            expected: d1.dim(),
            got: d0.dim(),
        });
    }
    Ok(())
}

fn run(state: MiaGameState, d1: &Dataset, d0: &Dataset) -> Result<MiaGameState> {
    let rounds = state.config.rounds;
    let mut t = MiaTrainer::new(state)?;
    for _ in 0..rounds {
        t.round(d1, d0)?;
    }
    Ok(t.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_diff, compare};
    use ndarray::Array2;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut r = rng::from_seed(seed);
        use rand::Rng as _;
        let x = Array2::from_shape_simple_fn((n, 3), || r.random_range(-1.0..1.0));
        let y = (0..n).map(|i| i % 2).collect();
        Dataset::new(x, y, None, 2).unwrap()
    }

    fn small_arch() -> ArchConfig {
        ArchConfig {
            encoder_hidden: vec![4],
            rep_dim: 3,
            head_hidden: vec![4],
            activation: Activation::Tanh,
            encoder_output: Activation::Tanh,
        }
    }

    fn zero_mlp(m: &Mlp) -> Mlp {
        Mlp::from_params(m.spec().clone(), vec![0.0; m.params().len()]).unwrap()
    }

    #[test]
    fn uniform_membership_head_gives_n_ln2() {
        let mut s = MiaGameState::new(3, 2, small_arch(), GameConfig::default()).unwrap();
        s.membership_head = zero_mlp(&s.membership_head);
        let (l1, _) = mia_losses(&s, &toy(5, 1), &toy(7, 2)).unwrap();
        assert!((l1 - 12.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_member_contribution() {
        // head with zero weights and bias (0, ln(7/3)) outputs (0.3, 0.7)
        let mut s = MiaGameState::new(3, 2, small_arch(), GameConfig::default()).unwrap();
        let mut p = vec![0.0; s.membership_head.params().len()];
        let n = p.len();
        p[n - 1] = (7.0f64 / 3.0).ln();
        s.membership_head = Mlp::from_params(s.membership_head.spec().clone(), p).unwrap();
        let d1 = toy(1, 3);
        let d0 = toy(1, 4);
        let (l1, _) = mia_losses(&s, &d1, &d0).unwrap();
        // member: −ln 0.7; non-member: −ln 0.3
        assert!((l1 - (0.3567 + 1.2040)).abs() < 1e-3);
        assert!(((-(0.7f64).ln()) - 0.3567).abs() < 1e-4);
    }

    #[test]
    fn perfect_utility_head_gives_zero_l2() {
        let mut s = MiaGameState::advreg(3, 2, small_arch(), GameConfig::default()).unwrap();
        // encoder: saturate toward the label of the first feature sign
        let spec = s.encoder.spec().clone();
        let mut p = vec![0.0; spec.param_count()];
        // hidden(4×3) then b(4) then out(2×4) then b(2)
        p[0] = 50.0;
        p[12 + 4] = -50.0;
        p[12 + 4 + 4] = 50.0;
        s.encoder = Mlp::from_params(spec, p).unwrap();
        let x = ndarray::array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        let d1 = Dataset::new(x, vec![1, 0], None, 2).unwrap();
        let (_, l2) = mia_losses(&s, &d1, &toy(2, 9)).unwrap();
        assert!(l2 < 1e-12);
    }

    #[test]
    fn advreg_matches_game_surrogate() {
        for seed in 0..5 {
            let cfg = GameConfig::default().with_seed(seed);
            let s = MiaGameState::advreg(3, 2, small_arch(), cfg).unwrap();
            let d1 = toy(6, seed + 10);
            let d0 = toy(4, seed + 20);
            let (l1, l2) = mia_losses(&s, &d1, &d0).unwrap();
            for lambda in [0.0, 0.3, 1.0] {
                let v = advreg_mode_loss(&s, &d1, &d0, lambda).unwrap();
                assert!((v - (lambda * l1 - (1.0 - lambda) * l2)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn advreg_rejects_plain_encoder() {
        let s = MiaGameState::new(3, 2, small_arch(), GameConfig::default()).unwrap();
        assert!(advreg_mode_loss(&s, &toy(2, 1), &toy(2, 2), 0.5).is_err());
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        let s = MiaGameState::new(3, 2, small_arch(), GameConfig::default().with_lambda(0.4)).unwrap();
        let d1 = toy(5, 1);
        let d0 = toy(4, 2);
        let (_, g) = s.encoder_objective(d1.view(), &d1.labels, d0.view()).unwrap();
        let num = central_diff(
            |p| {
                let mut t = s.clone();
                t.encoder.set_params(p).unwrap();
                t.encoder_objective(d1.view(), &d1.labels, d0.view()).unwrap().0
            },
            s.encoder.params(),
            1e-6,
        );
        compare(&g, &num, 1e-4, 1e-8).unwrap();
    }

    #[test]
    fn lambda_zero_encoder_gradient_ignores_membership_head() {
        let s = MiaGameState::new(3, 2, small_arch(), GameConfig::default().with_lambda(0.0)).unwrap();
        let d1 = toy(5, 1);
        let d0 = toy(4, 2);
        let (_, g) = s.encoder_objective(d1.view(), &d1.labels, d0.view()).unwrap();
        let mut t = s.clone();
        for p in t.membership_head.params_mut() {
            *p += 0.37;
        }
        let (_, g2) = t.encoder_objective(d1.view(), &d1.labels, d0.view()).unwrap();
        assert_eq!(g, g2);
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let cfg = GameConfig {
            rounds: 5,
            batch_size: 4,
            ..GameConfig::default().with_seed(3)
        };
        let d1 = toy(10, 1);
        let d0 = toy(10, 2);
        let a = train_mia_defense(&d1, &d0, &small_arch(), &cfg).unwrap();
        let b = train_mia_defense(&d1, &d0, &small_arch(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert_eq!(a.history.len(), 5);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let s = MiaGameState::new(3, 2, small_arch(), GameConfig::default()).unwrap();
        let d = toy(3, 1);
        let empty = d.subset(&[]);
        if let Ok(e) = empty {
            assert!(mia_losses(&s, &d, &e).is_err());
        }
    }
}
