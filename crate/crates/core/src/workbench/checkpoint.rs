//! Binary checkpoints of trained defenses.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `PRVREPCK` |
//! | 4 | format version (`u32`) |
//! | 8 | descriptor length `n` (`u64`) |
//! | n | JSON [`Descriptor`]: kind, seed, sweep point, network specs, perturbation family and ε |
//! | 8·P | parameters of every network in descriptor order (`f64`) |
//! | 16·m | perturbation `μ` then `log σ` (`f64`), only when a perturbation is present |
//!
//! Nothing may follow the last block.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::defense::{AggregatorMode, DraGameState, MiaGameState, PiaGameState, UtilityHead};
use crate::dp::{dp_encoder_noise, SplitModel};
use crate::error::{Error, Result};
use crate::mi::{PerturbationFamily, PerturbationParams};
use crate::nn::{argmax_rows, Mlp, MlpSpec};
use crate::rng::Rng;

use super::config::{DefenseKind, SweepPoint};

pub const MAGIC: [u8; 8] = *b"PRVREPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const ENCODER: &str = "encoder";
pub const UTILITY_HEAD: &str = "utility_head";
pub const MEMBERSHIP_HEAD: &str = "membership_head";
pub const PROPERTY_HEAD: &str = "property_head";
pub const CRITIC: &str = "critic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkEntry {
    pub name: String,
    pub spec: MlpSpec,
    pub n_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationEntry {
    pub dim: usize,
    pub epsilon: f64,
    pub family: PerturbationFamily,
}

/// The JSON header of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub kind: DefenseKind,
    pub seed: u64,
    pub point: SweepPoint,
    pub crate_version: String,
    pub networks: Vec<NetworkEntry>,
    pub perturbation: Option<PerturbationEntry>,
    pub aggregator: Option<AggregatorMode>,
    pub ratio_grid: Vec<f64>,
    /// Variance of the noise added to published representations.
    pub rep_noise_sigma2: f64,
}

/// A frozen defense: the encoder, its heads and whatever shapes the published
/// representation.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: DefenseKind,
    pub seed: u64,
    pub point: SweepPoint,
    pub networks: Vec<(String, Mlp)>,
    pub perturbation: Option<PerturbationParams>,
    pub aggregator: Option<AggregatorMode>,
    pub ratio_grid: Vec<f64>,
    pub rep_noise_sigma2: f64,
}

impl Checkpoint {
    fn bare(kind: DefenseKind, seed: u64, point: SweepPoint, networks: Vec<(String, Mlp)>) -> Self {
        Self {
            kind,
            seed,
            point,
            networks,
            perturbation: None,
            aggregator: None,
            ratio_grid: Vec::new(),
            rep_noise_sigma2: 0.0,
        }
    }

    pub fn from_mia(kind: DefenseKind, state: &MiaGameState, point: SweepPoint) -> Self {
        let mut nets = vec![
            (ENCODER.to_string(), state.encoder.clone()),
            (MEMBERSHIP_HEAD.to_string(), state.membership_head.clone()),
        ];
        if let UtilityHead::Mlp(h) = &state.utility_head {
            nets.push((UTILITY_HEAD.to_string(), h.clone()));
        }
        Self::bare(kind, state.config.seed, point, nets)
    }

    pub fn from_pia(state: &PiaGameState, point: SweepPoint) -> Self {
        let mut c = Self::bare(
            DefenseKind::Pia,
            state.config.seed,
            point,
            vec![
                (ENCODER.to_string(), state.encoder.clone()),
                (PROPERTY_HEAD.to_string(), state.property_head.clone()),
                (UTILITY_HEAD.to_string(), state.utility_head.clone()),
            ],
        );
        c.aggregator = Some(state.aggregator);
        c.ratio_grid = state.ratio_grid.clone();
        c
    }

    pub fn from_dra(state: &DraGameState, point: SweepPoint) -> Self {
        let mut c = Self::bare(
            DefenseKind::Dra,
            state.config.seed,
            point,
            vec![
                (ENCODER.to_string(), state.encoder.clone()),
                (CRITIC.to_string(), state.critic.clone()),
                (UTILITY_HEAD.to_string(), state.utility_head.clone()),
            ],
        );
        c.perturbation = Some(state.perturbation.clone());
        c
    }

    pub fn from_split(kind: DefenseKind, model: &SplitModel, seed: u64, point: SweepPoint, rep_noise_sigma2: f64) -> Self {
        let mut c = Self::bare(
            kind,
            seed,
            point,
            vec![
                (ENCODER.to_string(), model.encoder.clone()),
                (UTILITY_HEAD.to_string(), model.head.clone()),
            ],
        );
        c.rep_noise_sigma2 = rep_noise_sigma2;
        c
    }

    pub fn network(&self, name: &str) -> Option<&Mlp> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn encoder(&self) -> Result<&Mlp> {
        self.network(ENCODER)
            .ok_or_else(|| Error::Checkpoint("no encoder network".into()))
    }

    pub fn input_dim(&self) -> Result<usize> {
        Ok(self.encoder()?.input_dim())
    }

    /// Representations as released: `f(x)`, plus one perturbation draw or
    /// Gaussian representation noise when the defense uses them.
    pub fn publish(&self, x: ArrayView2<f64>, rng: &mut Rng) -> Result<Array2<f64>> {
        let enc = self.encoder()?;
        if x.ncols() != enc.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: enc.input_dim(),
                got: x.ncols(),
            });
        }
        let mut r = enc.forward_batch(x)?;
        if let Some(p) = &self.perturbation {
            let z = p.base_noise(x.nrows(), rng);
            r += &p.transform(z.view());
        }
        if self.rep_noise_sigma2 > 0.0 {
            r = dp_encoder_noise(r.view(), self.rep_noise_sigma2, rng)?;
        }
        Ok(r)
    }

    /// Task predictions from published representations. Without a utility
    /// head the encoder output is read as class probabilities.
    pub fn predict(&self, x: ArrayView2<f64>, rng: &mut Rng) -> Result<Vec<usize>> {
        let r = self.publish(x, rng)?;
        Ok(match self.network(UTILITY_HEAD) {
            Some(h) => argmax_rows(h.forward_batch(r.view())?.view()),
            None => argmax_rows(r.view()),
        })
    }

    pub fn descriptor(&self) -> Descriptor {
        Descriptor {
            kind: self.kind,
            seed: self.seed,
            point: self.point,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            networks: self
                .networks
                .iter()
                .map(|(name, m)| NetworkEntry {
                    name: name.clone(),
                    spec: m.spec().clone(),
                    n_params: m.params().len(),
                })
                .collect(),
            perturbation: self.perturbation.as_ref().map(|p| PerturbationEntry {
                dim: p.dim(),
                epsilon: p.epsilon,
                family: p.family,
            }),
            aggregator: self.aggregator,
            ratio_grid: self.ratio_grid.clone(),
            rep_noise_sigma2: self.rep_noise_sigma2,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let desc = serde_json::to_vec(&self.descriptor())?;
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(desc.len() as u64).to_le_bytes());
        out.extend_from_slice(&desc);
        let mut put = |v: &[f64]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for (_, m) in &self.networks {
            put(m.params());
        }
        if let Some(p) = &self.perturbation {
            put(&p.mu);
            put(&p.log_sigma);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Checkpoint(format!("truncated while reading {what}")));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::IncompatibleVersion(format!(
                "checkpoint format {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let n = u64::from_le_bytes(take(8, "descriptor length")?.try_into().expect("8 bytes")) as usize;
        let desc: Descriptor = serde_json::from_slice(take(n, "descriptor")?)
            .map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
        let mut floats = |count: usize, what: &str| -> Result<Vec<f64>> {
            let raw = take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?, what)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut networks = Vec::with_capacity(desc.networks.len());
        for e in &desc.networks {
            if e.spec.param_count() != e.n_params {
                return Err(Error::Checkpoint(format!(
                    "network `{}`: descriptor says {} parameters, architecture has {}",
                    e.name,
                    e.n_params,
                    e.spec.param_count()
                )));
            }
            let params = floats(e.n_params, &e.name)?;
            networks.push((e.name.clone(), Mlp::from_params(e.spec.clone(), params)?));
        }
        let perturbation = match &desc.perturbation {
            Some(p) => {
                let mu = floats(p.dim, "perturbation mean")?;
                let log_sigma = floats(p.dim, "perturbation scale")?;
                Some(PerturbationParams {
                    mu,
                    log_sigma,
                    epsilon: p.epsilon,
                    family: p.family,
                })
            }
            None => None,
        };
        if !cur.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", cur.len())));
        }
        Ok(Self {
            kind: desc.kind,
            seed: desc.seed,
            point: desc.point,
            networks,
            perturbation,
            aggregator: desc.aggregator,
            ratio_grid: desc.ratio_grid,
            rep_noise_sigma2: desc.rep_noise_sigma2,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut f = std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
