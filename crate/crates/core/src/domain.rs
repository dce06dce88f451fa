//! Domain types shared by the defenses, attacks and bounds.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

/// One feature vector with its task label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: usize,
    #[serde(default)]
    pub attribute: Option<PrivateAttribute>,
}

impl LabeledSample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            attribute: None,
        }
    }

    pub fn with_attribute(mut self, attribute: PrivateAttribute) -> Self {
        self.attribute = Some(attribute);
        self
    }
}

/// The private attribute an attacker tries to infer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum PrivateAttribute {
    Membership(bool),
    Property(usize),
    /// The sample itself is the secret.
    RawData,
}

impl PrivateAttribute {
    /// Integer code of the attribute; `None` for raw data.
    pub fn code(&self) -> Option<usize> {
        match self {
            Self::Membership(b) => Some(*b as usize),
            Self::Property(k) => Some(*k),
            Self::RawData => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Membership(_) => "membership",
            Self::Property(_) => "property",
            Self::RawData => "raw-data",
        }
    }
}

/// Dense sample store used by the trainers: row-major features, labels and an
/// optional integer attribute column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub attributes: Option<Vec<usize>>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        attributes: Option<Vec<usize>>,
        n_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if let Some(a) = &attributes {
            if a.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: a.len(),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(invalid(format!("label {bad} >= n_classes {n_classes}")));
        }
        Ok(Self {
            features,
            labels,
            attributes,
            n_classes,
        })
    }

    /// Build a store from samples; attributes are kept only if every sample has one.
    pub fn from_samples(samples: &[LabeledSample]) -> Result<Self> {
        let report = validate_dataset(samples)?;
        let d = report.dim;
        let mut flat = Vec::with_capacity(samples.len() * d);
        for s in samples {
            flat.extend_from_slice(&s.features);
        }
        let features = Array2::from_shape_vec((samples.len(), d), flat)
            .map_err(|e| invalid(e.to_string()))?;
        let labels = samples.iter().map(|s| s.label).collect();
        let attributes = samples
            .iter()
            .map(|s| s.attribute.and_then(|a| a.code()))
            .collect::<Option<Vec<_>>>();
        Self::new(features, labels, attributes, report.n_classes)
    }

    pub fn to_samples(&self) -> Vec<LabeledSample> {
        (0..self.len())
            .map(|i| LabeledSample {
                features: self.features.row(i).to_vec(),
                label: self.labels[i],
                attribute: self
                    .attributes
                    .as_ref()
                    .map(|a| PrivateAttribute::Property(a[i])),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    /// Rows at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let features = self.features.select(Axis(0), idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let attributes = self
            .attributes
            .as_ref()
            .map(|a| idx.iter().map(|&i| a[i]).collect());
        Ok(Self {
            features,
            labels,
            attributes,
            n_classes: self.n_classes,
        })
    }

    /// Stack two stores with the same dimension.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let features = ndarray::concatenate(Axis(0), &[self.view(), other.view()])
            .map_err(|e| invalid(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let attributes = match (&self.attributes, &other.attributes) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(Self {
            features,
            labels,
            attributes,
            n_classes: self.n_classes.max(other.n_classes),
        })
    }
}

/// A sampled sub-dataset carrying a dataset-level property label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBag {
    pub data: Dataset,
    /// Index of the bag's ratio in the ratio grid.
    pub property: usize,
    /// Realized fraction of attribute-1 samples.
    pub ratio: f64,
}

impl DatasetBag {
    pub fn attribute(&self) -> PrivateAttribute {
        PrivateAttribute::Property(self.property)
    }
}

/// Identifier of what a representation was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RepSource {
    Sample(usize),
    Bag(usize),
    Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub values: Vec<f64>,
    pub source: RepSource,
}

impl Representation {
    pub fn new(values: Vec<f64>, source: RepSource) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("representation".into()));
        }
        Ok(Self { values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Dataset summary returned by [`validate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub dim: usize,
    pub n_classes: usize,
    pub class_counts: Vec<usize>,
    pub attribute_counts: Vec<usize>,
}

/// Check dimensions and tally labels and attributes.
pub fn validate_dataset(samples: &[LabeledSample]) -> Result<SplitReport> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let dim = first.features.len();
    let mut class_counts = Vec::new();
    let mut attribute_counts = Vec::new();
    for s in samples {
        if s.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.features.len(),
            });
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        if s.label >= class_counts.len() {
            class_counts.resize(s.label + 1, 0);
        }
        class_counts[s.label] += 1;
        if let Some(code) = s.attribute.and_then(|a| a.code()) {
            if code >= attribute_counts.len() {
                attribute_counts.resize(code + 1, 0);
            }
            attribute_counts[code] += 1;
        }
    }
    Ok(SplitReport {
        dim,
        n_classes: class_counts.len(),
        class_counts,
        attribute_counts,
    })
}

/// Index sets over a store laid out as `[members..., non-members...]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub utility_train: Vec<usize>,
    pub utility_test: Vec<usize>,
    pub attack_train: Vec<usize>,
    pub attack_test: Vec<usize>,
}

impl SplitPlan {
    pub fn is_disjoint(&self) -> bool {
        fn disjoint(a: &[usize], b: &[usize]) -> bool {
            let set: std::collections::HashSet<_> = a.iter().collect();
            b.iter().all(|i| !set.contains(i))
        }
        disjoint(&self.utility_train, &self.utility_test)
            && disjoint(&self.attack_train, &self.attack_test)
    }
}

/// Split members `0..n_members` and non-members `n_members..` into utility and
/// attack sets. `attack_frac` of each group goes to the attack training set.
pub fn make_split(
    n_members: usize,
    n_nonmembers: usize,
    attack_frac: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(attack_frac > 0.0 && attack_frac < 1.0) {
        return Err(invalid(format!("attack_frac {attack_frac} not in (0,1)")));
    }
    let mut rng = rng::substream(seed, rng::streams::SPLIT);
    let members: Vec<usize> = (0..n_members).collect();
    let nonmembers: Vec<usize> = (n_members..n_members + n_nonmembers).collect();

    let mut attack_train = Vec::new();
    let mut attack_test = Vec::new();
    for group in [&members, &nonmembers] {
        let mut shuffled = group.clone();
        shuffled.shuffle(&mut rng);
        let k = (attack_frac * group.len() as f64).round() as usize;
        attack_train.extend_from_slice(&shuffled[..k]);
        attack_test.extend_from_slice(&shuffled[k..]);
    }
    attack_train.sort_unstable();
    attack_test.sort_unstable();
    Ok(SplitPlan {
        utility_train: members,
        utility_test: nonmembers,
        attack_train,
        attack_test,
    })
}

/// Optimizer family used for every parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

fn one() -> usize {
    1
}

/// Hyperparameters of one adversarial game. Together with the seed this fully
/// determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    /// Privacy weight in `[0, 1]`.
    pub lambda: f64,
    /// Entropy weight of the perturbation distribution.
    pub alpha: f64,
    /// Perturbation scale.
    pub epsilon: f64,
    /// Monte-Carlo samples for the perturbation update.
    pub mc_samples: usize,
    pub rounds: usize,
    pub inner_steps: usize,
    /// Adversary updates per inner step.
    #[serde(default = "one")]
    pub adversary_steps: usize,
    pub batch_size: usize,
    /// Adversary / critic learning rate.
    pub lr_adversary: f64,
    /// Utility head learning rate.
    pub lr_utility: f64,
    /// Encoder learning rate.
    pub lr_encoder: f64,
    /// Perturbation parameter learning rate.
    pub lr_perturbation: f64,
    /// Epochs of the perturbation update per batch.
    pub perturbation_epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            alpha: 1.0,
            epsilon: 0.0,
            mc_samples: 5,
            rounds: 200,
            inner_steps: 1,
            adversary_steps: 1,
            batch_size: 64,
            lr_adversary: 1e-3,
            lr_utility: 1e-3,
            lr_encoder: 1e-3,
            lr_perturbation: 1e-2,
            perturbation_epochs: 1,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid(format!("lambda {} not in [0,1]", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(invalid(format!("epsilon {} must be >= 0", self.epsilon)));
        }
        if self.mc_samples == 0 || self.rounds == 0 || self.inner_steps == 0 || self.adversary_steps == 0 {
            return Err(invalid("mc_samples, rounds, inner_steps and adversary_steps must be positive"));
        }
        if self.batch_size == 0 || self.perturbation_epochs == 0 {
            return Err(invalid("batch_size and perturbation_epochs must be positive"));
        }
        for (name, lr) in [
            ("lr_adversary", self.lr_adversary),
            ("lr_utility", self.lr_utility),
            ("lr_encoder", self.lr_encoder),
            ("lr_perturbation", self.lr_perturbation),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Entropy weight of the perturbation objective, `lambda * alpha / (1 - lambda)`.
    pub fn beta(&self) -> Result<f64> {
        if self.alpha == 0.0 {
            return Ok(0.0);
        }
        if self.lambda >= 1.0 {
            return Err(invalid("beta undefined: lambda = 1 with alpha > 0"));
        }
        Ok(self.lambda * self.alpha / (1.0 - self.lambda))
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: &[f64], y: usize) -> LabeledSample {
        LabeledSample::new(f.to_vec(), y)
    }

    #[test]
    fn validate_counts_classes() {
        let s = vec![
            sample(&[0.0, 1.0], 0),
            sample(&[1.0, 1.0], 1),
            sample(&[2.0, 1.0], 0),
            sample(&[3.0, 1.0], 1),
        ];
        let r = validate_dataset(&s).unwrap();
        assert_eq!(r.dim, 2);
        assert_eq!(r.n_classes, 2);
        assert_eq!(r.class_counts, vec![2, 2]);
    }

    #[test]
    fn validate_rejects_mixed_dims_and_empty() {
        let s = vec![sample(&[0.0, 1.0], 0), sample(&[1.0, 1.0, 2.0], 1)];
        assert!(matches!(
            validate_dataset(&s),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(matches!(validate_dataset(&[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn attribute_histogram() {
        let s = vec![
            sample(&[0.0], 0).with_attribute(PrivateAttribute::Membership(true)),
            sample(&[0.0], 0).with_attribute(PrivateAttribute::Membership(false)),
            sample(&[0.0], 1).with_attribute(PrivateAttribute::Membership(true)),
        ];
        assert_eq!(validate_dataset(&s).unwrap().attribute_counts, vec![1, 2]);
    }

    #[test]
    fn split_sizes() {
        let p = make_split(25_000, 25_000, 0.8, 3).unwrap();
        assert_eq!(p.attack_train.len(), 40_000);
        assert_eq!(p.attack_test.len(), 10_000);
        assert!(p.is_disjoint());

        let p = make_split(10, 10, 0.5, 3).unwrap();
        assert_eq!(p.attack_train.len(), 10);
        assert_eq!(p.attack_test.len(), 10);
        // half of each group
        assert_eq!(p.attack_train.iter().filter(|&&i| i < 10).count(), 5);
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(
            make_split(100, 80, 0.8, 11).unwrap(),
            make_split(100, 80, 0.8, 11).unwrap()
        );
        assert_ne!(
            make_split(100, 80, 0.8, 11).unwrap(),
            make_split(100, 80, 0.8, 12).unwrap()
        );
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(make_split(10, 10, 0.0, 0).is_err());
        assert!(make_split(10, 10, 1.0, 0).is_err());
    }

    #[test]
    fn beta_formula() {
        let c = GameConfig {
            lambda: 0.4,
            alpha: 1.0,
            ..Default::default()
        };
        assert!((c.beta().unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let c = GameConfig {
            lambda: 1.0,
            alpha: 1.0,
            ..Default::default()
        };
        assert!(c.beta().is_err());
        let c = GameConfig {
            lambda: 1.0,
            alpha: 0.0,
            ..Default::default()
        };
        assert_eq!(c.beta().unwrap(), 0.0);
    }
}
