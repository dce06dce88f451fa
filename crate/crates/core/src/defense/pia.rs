//! Property game over bags: the property head sees the aggregated
//! representation of a whole bag, the utility head sees every sample.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{draw_indices, ensure_finite, head_cross_entropy, ArchConfig, RoundLosses, UtilityHead};
use crate::domain::{Dataset, DatasetBag, GameConfig, RepSource, Representation};
use crate::error::{invalid, Error, Result};
use crate::nn::{Mlp, OptimizerState};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorMode {
    #[default]
    Mean,
    Max,
}

impl AggregatorMode {
    /// The other mode (used as a substitute by mismatched attackers).
    pub fn other(self) -> Self {
        match self {
            Self::Mean => Self::Max,
            Self::Max => Self::Mean,
        }
    }
}

impl std::str::FromStr for AggregatorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            _ => Err(Error::Config(format!("unknown aggregator `{s}`"))),
        }
    }
}

/// Draw `count` bags from `reference`. Bag `i` uses ratio `ratio_grid[i % K]`,
/// a size uniform in `size_range`, and exactly `round_half_even(ratio·size)`
/// attribute-1 samples.
pub fn sample_bags(
    reference: &Dataset,
    ratio_grid: &[f64],
    size_range: (usize, usize),
    count: usize,
    seed: u64,
) -> Result<Vec<DatasetBag>> {
    let attrs = reference
        .attributes
        .as_ref()
        .ok_or_else(|| invalid("bag sampling needs an attribute column"))?;
    if ratio_grid.is_empty() || ratio_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(invalid("ratio grid values must lie in [0, 1]"));
    }
    let (lo, hi) = size_range;
    if lo < 2 || hi < lo {
        return Err(invalid(format!("bag size range ({lo}, {hi}) needs 2 <= min <= max")));
    }
    let ones: Vec<usize> = (0..attrs.len()).filter(|&i| attrs[i] == 1).collect();
    let zeros: Vec<usize> = (0..attrs.len()).filter(|&i| attrs[i] == 0).collect();
    let mut rng = rng::from_seed(seed);
    let mut bags = Vec::with_capacity(count);
    for i in 0..count {
        let property = i % ratio_grid.len();
        let size = rng.random_range(lo..=hi);
        let n1 = (ratio_grid[property] * size as f64).round_ties_even() as usize;
        let n0 = size - n1;
        if n1 > ones.len() || n0 > zeros.len() {
            return Err(Error::InsufficientSamples(format!(
                "bag needs {n1} attribute-1 and {n0} attribute-0 samples, pool has {} and {}",
                ones.len(),
                zeros.len()
            )));
        }
        let mut idx: Vec<usize> = ones.choose_multiple(&mut rng, n1).copied().collect();
        idx.extend(zeros.choose_multiple(&mut rng, n0).copied());
        idx.shuffle(&mut rng);
        bags.push(DatasetBag {
            data: reference.subset(&idx)?,
            property,
            ratio: n1 as f64 / size as f64,
        });
    }
    Ok(bags)
}

/// Componentwise mean or max of equal-length representations.
pub fn aggregate(reps: &[Representation], mode: AggregatorMode) -> Result<Representation> {
    let first = reps.first().ok_or(Error::EmptyDataset)?;
    let m = first.dim();
    if let Some(bad) = reps.iter().find(|r| r.dim() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: bad.dim(),
        });
    }
    let mut mat = Array2::zeros((reps.len(), m));
    for (i, r) in reps.iter().enumerate() {
        mat.row_mut(i).assign(&ndarray::ArrayView1::from(&r.values));
    }
    Representation::new(aggregate_rows(mat.view(), mode).0.to_vec(), RepSource::Aggregate)
}

/// Aggregate the rows of `r`. For `Max` also returns the winning row per column.
pub fn aggregate_rows(r: ArrayView2<f64>, mode: AggregatorMode) -> (Array1<f64>, Vec<usize>) {
    match mode {
        AggregatorMode::Mean => (r.mean_axis(Axis(0)).expect("non-empty"), Vec::new()),
        AggregatorMode::Max => {
            let mut out = Array1::from_elem(r.ncols(), f64::NEG_INFINITY);
            let mut arg = vec![0; r.ncols()];
            for (i, row) in r.rows().into_iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if v > out[j] {
                        out[j] = v;
                        arg[j] = i;
                    }
                }
            }
            (out, arg)
        }
    }
}

/// Pull the gradient of an aggregate back onto the rows it came from.
fn aggregate_backward(n_rows: usize, grad: ndarray::ArrayView1<f64>, mode: AggregatorMode, arg: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((n_rows, grad.len()));
    match mode {
        AggregatorMode::Mean => {
            let w = 1.0 / n_rows as f64;
            for mut row in out.rows_mut() {
                row.scaled_add(w, &grad);
            }
        }
        AggregatorMode::Max => {
            for (j, &i) in arg.iter().enumerate() {
                out[[i, j]] = grad[j];
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiaGameState {
    pub encoder: Mlp,
    pub property_head: Mlp,
    pub utility_head: Mlp,
    pub aggregator: AggregatorMode,
    pub ratio_grid: Vec<f64>,
    pub config: GameConfig,
    pub arch: ArchConfig,
    pub round: usize,
    pub history: Vec<RoundLosses>,
}

/// Bags stacked into one matrix with row offsets.
struct Stacked {
    x: Array2<f64>,
    y: Vec<usize>,
    offsets: Vec<usize>,
    property: Vec<usize>,
}

fn stack(bags: &[&DatasetBag]) -> Result<Stacked> {
    if bags.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let views: Vec<_> = bags.iter().map(|b| b.data.view()).collect();
    let x = ndarray::concatenate(Axis(0), &views).map_err(|e| invalid(e.to_string()))?;
    let mut offsets = vec![0];
    let mut y = Vec::with_capacity(x.nrows());
    for b in bags {
        offsets.push(offsets.last().unwrap() + b.data.len());
        y.extend(&b.data.labels);
    }
    Ok(Stacked {
        x,
        y,
        offsets,
        property: bags.iter().map(|b| b.property).collect(),
    })
}

impl PiaGameState {
    pub fn new(
        input_dim: usize,
        n_classes: usize,
        ratio_grid: Vec<f64>,
        aggregator: AggregatorMode,
        arch: ArchConfig,
        config: GameConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::substream(config.seed, rng::streams::INIT);
        let encoder = Mlp::new(arch.encoder_spec(input_dim), &mut rng)?;
        let property_head = Mlp::new(arch.head_spec(arch.rep_dim, ratio_grid.len()), &mut rng)?;
        let utility_head = Mlp::new(arch.head_spec(arch.rep_dim, n_classes), &mut rng)?;
        Ok(Self {
            encoder,
            property_head,
            utility_head,
            aggregator,
            ratio_grid,
            config,
            arch,
            round: 0,
            history: Vec::new(),
        })
    }

    pub fn represent(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.encoder.forward_batch(x)
    }

    /// Aggregated representation of every bag, one row per bag.
    pub fn bag_representations(&self, bags: &[DatasetBag], mode: AggregatorMode) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((bags.len(), self.encoder.output_dim()));
        for (i, b) in bags.iter().enumerate() {
            let r = self.represent(b.data.view())?;
            out.row_mut(i).assign(&aggregate_rows(r.view(), mode).0);
        }
        Ok(out)
    }

    pub fn utility_accuracy(&self, data: &Dataset) -> Result<f64> {
        let r = self.represent(data.view())?;
        UtilityHead::Mlp(self.utility_head.clone()).accuracy(r.view(), &data.labels)
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.property_head.is_finite() && self.utility_head.is_finite()
    }

    fn aggregate_stacked(&self, r: ArrayView2<f64>, st: &Stacked) -> (Array2<f64>, Vec<Vec<usize>>) {
        let n_bags = st.offsets.len() - 1;
        let mut a = Array2::zeros((n_bags, r.ncols()));
        let mut args = Vec::with_capacity(n_bags);
        for j in 0..n_bags {
            let (v, arg) = aggregate_rows(r.slice(s![st.offsets[j]..st.offsets[j + 1], ..]), self.aggregator);
            a.row_mut(j).assign(&v);
            args.push(arg);
        }
        (a, args)
    }

    /// Encoder objective `−λ·L1 + (1−λ)·L2` (L1 mean over bags, L2 mean over
    /// all samples) and its gradient w.r.t. the encoder parameters.
    pub fn encoder_objective(&self, bags: &[&DatasetBag]) -> Result<(f64, Vec<f64>)> {
        let st = stack(bags)?;
        self.encoder_objective_stacked(&st)
    }

    fn encoder_objective_stacked(&self, st: &Stacked) -> Result<(f64, Vec<f64>)> {
        let lambda = self.config.lambda;
        let tape = self.encoder.forward_tape(st.x.view())?;
        let r = tape.output();
        let (a, args) = self.aggregate_stacked(r.view(), st);
        let (l1, _, da) = head_cross_entropy(&self.property_head, a.view(), &st.property)?;
        let (l2, _, dr_h) = head_cross_entropy(&self.utility_head, r.view(), &st.y)?;
        let mut dr = dr_h * (1.0 - lambda);
        for j in 0..args.len() {
            let (lo, hi) = (st.offsets[j], st.offsets[j + 1]);
            let back = aggregate_backward(hi - lo, da.row(j), self.aggregator, &args[j]);
            dr.slice_mut(s![lo..hi, ..]).scaled_add(-lambda, &back);
        }
        let (g, _) = self.encoder.backward(&tape, dr.view());
        Ok((-lambda * l1 + (1.0 - lambda) * l2, g))
    }
}

/// Summed property cross-entropy over bags and summed task cross-entropy over
/// every sample of every bag.
pub fn pia_losses(state: &PiaGameState, bags: &[DatasetBag]) -> Result<(f64, f64)> {
    let refs: Vec<&DatasetBag> = bags.iter().collect();
    let st = stack(&refs)?;
    if let Some(&p) = st.property.iter().find(|&&p| p >= state.ratio_grid.len()) {
        return Err(invalid(format!("property class {p} outside the ratio grid")));
    }
    let r = state.represent(st.x.view())?;
    let (a, _) = state.aggregate_stacked(r.view(), &st);
    let (l1, _, _) = head_cross_entropy(&state.property_head, a.view(), &st.property)?;
    let (l2, _, _) = head_cross_entropy(&state.utility_head, r.view(), &st.y)?;
    Ok((l1 * bags.len() as f64, l2 * st.y.len() as f64))
}

#[derive(Clone, Debug)]
pub struct PiaTrainer {
    pub state: PiaGameState,
    opt_psi: OptimizerState,
    opt_omega: OptimizerState,
    opt_theta: OptimizerState,
    rng: Rng,
}

impl PiaTrainer {
    pub fn new(state: PiaGameState) -> Result<Self> {
        let c = &state.config;
        Ok(Self {
            opt_psi: OptimizerState::new(c.optimizer, c.lr_adversary, state.property_head.params().len())?,
            opt_omega: OptimizerState::new(c.optimizer, c.lr_utility, state.utility_head.params().len())?,
            opt_theta: OptimizerState::new(c.optimizer, c.lr_encoder, state.encoder.params().len())?,
            rng: rng::substream(c.seed, "batches"),
            state,
        })
    }

    fn inner_step(&mut self, st: &Stacked) -> Result<(f64, f64)> {
        let round = self.state.round;
        let r = self.state.encoder.forward_batch(st.x.view())?;
        let (a, _) = self.state.aggregate_stacked(r.view(), st);

        let mut l1 = 0.0;
        for _ in 0..self.state.config.adversary_steps {
            let (l, g_psi, _) = head_cross_entropy(&self.state.property_head, a.view(), &st.property)?;
            ensure_finite(round, "property loss", l)?;
            self.opt_psi.step(self.state.property_head.params_mut(), &g_psi)?;
            l1 = l;
        }

        let (l2, g_omega, _) = head_cross_entropy(&self.state.utility_head, r.view(), &st.y)?;
        ensure_finite(round, "utility loss", l2)?;
        self.opt_omega.step(self.state.utility_head.params_mut(), &g_omega)?;

        let (obj, g_theta) = self.state.encoder_objective_stacked(st)?;
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

    /// Draw `batch_size` bags from the pool and run the inner steps.
    pub fn round(&mut self, bags: &[DatasetBag]) -> Result<RoundLosses> {
        let idx = draw_indices(bags.len(), self.state.config.batch_size, &mut self.rng);
        let chosen: Vec<&DatasetBag> = idx.iter().map(|&i| &bags[i]).collect();
        let st = stack(&chosen)?;
        let mut last = (0.0, 0.0);
        for _ in 0..self.state.config.inner_steps {
            last = self.inner_step(&st)?;
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

pub fn train_pia_defense(
    bags: &[DatasetBag],
    ratio_grid: &[f64],
    arch: &ArchConfig,
    config: &GameConfig,
    aggregator: AggregatorMode,
) -> Result<PiaGameState> {
    let first = bags.first().ok_or(Error::EmptyDataset)?;
    let mut classes: Vec<usize> = bags.iter().map(|b| b.property).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass("bags carry a single property class".into()));
    }
    if let Some(&p) = classes.iter().find(|&&p| p >= ratio_grid.len()) {
        return Err(invalid(format!("property class {p} outside the ratio grid")));
    }
    let n_classes = bags.iter().map(|b| b.data.n_classes).max().unwrap_or(first.data.n_classes);
    let state = PiaGameState::new(
        first.data.dim(),
        n_classes,
        ratio_grid.to_vec(),
        aggregator,
        arch.clone(),
        config.clone(),
    )?;
    let mut t = PiaTrainer::new(state)?;
    for _ in 0..config.rounds {
        t.round(bags)?;
    }
    Ok(t.state)
}
