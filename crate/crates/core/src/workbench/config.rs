//! Experiment configuration and its flat `key = value` text format.
//!
//! One setting per line, `#` starts a comment. Keys are dotted paths into
//! [`ExperimentConfig`] (`game.lambda`, `data.mia.label_noise`,
//! `attack.fit.epochs`, ...). Lists and pairs are comma separated
//! (`sweep.lambda = 0, 0.25, 0.5`, `data.pia.bag_size = 30, 60`). The
//! `defense` key selects a preset and is applied first; every other key
//! overrides a field of that preset. Unknown keys are rejected.
//!
//! Only two environment variables are read: `PRIVREP_OUTPUT_DIR` replaces
//! `output_dir` and `PRIVREP_THREADS` replaces `workers`.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::attacks::{AttackConfig, LiraConfig};
use crate::data::{DraSynthSpec, MiaSynthSpec, PiaSynthSpec};
use crate::defense::{AggregatorMode, ArchConfig};
use crate::domain::GameConfig;
use crate::dp::DpConfig;
use crate::error::{Error, Result};
use crate::mi::PerturbationFamily;
use crate::nn::FitConfig;

pub const ENV_OUTPUT_DIR: &str = "PRIVREP_OUTPUT_DIR";
pub const ENV_THREADS: &str = "PRIVREP_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefenseKind {
    Mia,
    Pia,
    Dra,
    Advreg,
    Dpsgd,
    DpEncoder,
    None,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 7] = [
        Self::Mia,
        Self::Pia,
        Self::Dra,
        Self::Advreg,
        Self::Dpsgd,
        Self::DpEncoder,
        Self::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mia => "mia",
            Self::Pia => "pia",
            Self::Dra => "dra",
            Self::Advreg => "advreg",
            Self::Dpsgd => "dpsgd",
            Self::DpEncoder => "dp-encoder",
            Self::None => "none",
        }
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DefenseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown defense kind `{s}`")))
    }
}

/// CSV inputs replacing the synthetic benchmark. `nonmembers` is required by
/// the membership kinds; the property kind needs `attribute_column`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    pub nonmembers: Option<PathBuf>,
    pub label_column: String,
    pub attribute_column: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub mia: MiaSynthSpec,
    pub pia: PiaSynthSpec,
    pub dra: DraSynthSpec,
    pub csv: Option<CsvSource>,
}

/// Values swept per seed. Only the lists that matter to the defense kind
/// are expanded (see [`ExperimentConfig::sweep_points`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lambda: Vec<f64>,
    pub epsilon: Vec<f64>,
    /// DP-SGD noise multiplier, or representation noise variance for `dp-encoder`.
    pub sigma: Vec<f64>,
}

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Fraction of members and of non-members given to the attacker for training.
    pub attack_frac: f64,
    pub lira: bool,
    /// Fresh non-members added to the LiRA pool.
    pub lira_fresh: usize,
    pub aggregator: AggregatorMode,
    pub substitute_attack: bool,
    pub family: PerturbationFamily,
    pub decoder_hidden: Vec<usize>,
    /// Perturbation draws averaged in the DRA utility estimate.
    pub utility_draws: usize,
    /// Head refit on noisy representations (`dp-encoder`).
    pub head_fit: FitConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            attack_frac: 0.5,
            lira: false,
            lira_fresh: 500,
            aggregator: AggregatorMode::Mean,
            substitute_attack: true,
            family: PerturbationFamily::GaussianTanh,
            decoder_hidden: vec![64],
            utility_draws: 5,
            head_fit: FitConfig {
                epochs: 200,
                batch_size: 64,
                lr: 3e-3,
                ..FitConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub defense: DefenseKind,
    pub game: GameConfig,
    pub arch: ArchConfig,
    pub dp: DpConfig,
    pub attack: AttackConfig,
    pub lira: LiraConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Concurrent sweep jobs.
    pub workers: usize,
}

/// One sweep coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma: f64,
}

impl ExperimentConfig {
    /// The tuned desk-scale setup for `kind`.
    pub fn preset(kind: DefenseKind) -> Self {
        let mut game = GameConfig {
            rounds: 2000,
            lr_adversary: 5e-3,
            ..GameConfig::default()
        };
        let mut arch = ArchConfig {
            encoder_hidden: vec![128, 128],
            ..ArchConfig::default()
        };
        let mut sweep = SweepConfig {
            lambda: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            epsilon: vec![0.0],
            sigma: vec![0.0],
        };
        let dp = DpConfig {
            epochs: 256,
            ..DpConfig::default()
        };
        match kind {
            DefenseKind::Mia | DefenseKind::Advreg => {}
            DefenseKind::Pia => {
                game.lr_encoder = 3e-4;
                game.lr_utility = 3e-4;
                game.lr_adversary = 1e-2;
                game.adversary_steps = 5;
                arch = ArchConfig {
                    rep_dim: 8,
                    ..ArchConfig::default()
                };
                sweep.lambda = vec![0.0, 0.25, 0.5, 0.75];
            }
            DefenseKind::Dra => {
                game.rounds = 1000;
                game.lr_adversary = 1e-3;
                arch = ArchConfig::default();
                sweep.lambda = vec![0.4];
                sweep.epsilon = vec![0.0, 0.5, 1.0, 1.5];
            }
            DefenseKind::Dpsgd => {
                sweep.lambda = vec![0.0];
                sweep.sigma = vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
            }
            DefenseKind::DpEncoder => {
                sweep.lambda = vec![0.0];
                sweep.sigma = vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
            }
            DefenseKind::None => sweep.lambda = vec![0.0],
        }
        Self {
            defense: kind,
            game,
            arch,
            dp,
            attack: AttackConfig::default(),
            lira: LiraConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig {
                mia: MiaSynthSpec::default(),
                pia: PiaSynthSpec::default(),
                dra: DraSynthSpec::default(),
                csv: None,
            },
            sweep,
            seeds: vec![0],
            output_dir: PathBuf::from("runs"),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Error::Config(m.to_string());
        if self.seeds.is_empty() {
            return Err(cfg("seed list is empty"));
        }
        let s = &self.sweep;
        if s.lambda.is_empty() || s.epsilon.is_empty() || s.sigma.is_empty() {
            return Err(cfg("sweep lists must be non-empty"));
        }
        if self.workers == 0 {
            return Err(cfg("workers must be positive"));
        }
        for &l in &s.lambda {
            self.game.clone().with_lambda(l).validate()?;
        }
        if s.epsilon.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(cfg("sweep.epsilon values must be >= 0"));
        }
        if s.sigma.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(cfg("sweep.sigma values must be >= 0"));
        }
        if matches!(self.defense, DefenseKind::Dpsgd | DefenseKind::DpEncoder) {
            self.dp.validate()?;
        }
        if !(self.eval.attack_frac > 0.0 && self.eval.attack_frac < 1.0) {
            return Err(cfg("eval.attack_frac must be in (0, 1)"));
        }
        if let Some(csv) = &self.data.csv {
            let membership = matches!(
                self.defense,
                DefenseKind::Mia | DefenseKind::Advreg | DefenseKind::Dpsgd | DefenseKind::DpEncoder
            );
            if membership && csv.nonmembers.is_none() {
                return Err(cfg("data.csv.nonmembers is required for membership defenses"));
            }
            if self.defense == DefenseKind::Pia && csv.attribute_column.is_none() {
                return Err(cfg("data.csv.attribute_column is required for the property defense"));
            }
        }
        Ok(())
    }

    /// Grid expanded for this defense kind, in a fixed order.
    pub fn sweep_points(&self) -> Vec<SweepPoint> {
        let s = &self.sweep;
        let (lambdas, epsilons, sigmas): (&[f64], &[f64], &[f64]) = match self.defense {
            DefenseKind::Mia | DefenseKind::Advreg | DefenseKind::Pia => (&s.lambda, &[0.0], &[0.0]),
            DefenseKind::Dra => (&s.lambda, &s.epsilon, &[0.0]),
            DefenseKind::Dpsgd | DefenseKind::DpEncoder => (&[0.0], &[0.0], &s.sigma),
            DefenseKind::None => (&[0.0], &[0.0], &[0.0]),
        };
        let mut out = Vec::new();
        for &lambda in lambdas {
            for &epsilon in epsilons {
                for &sigma in sigmas {
                    out.push(SweepPoint { lambda, epsilon, sigma });
                }
            }
        }
        out
    }

    /// Game settings for one job.
    pub fn game_for(&self, seed: u64, point: &SweepPoint) -> GameConfig {
        let mut g = self.game.clone().with_seed(seed).with_lambda(point.lambda);
        g.epsilon = point.epsilon;
        g
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let kind = match pairs.iter().find(|(k, _)| k == "defense") {
            Some((_, v)) => v.parse()?,
            None => return Err(Error::Config("missing `defense` key".into())),
        };
        let mut cfg = Self::preset(kind);
        cfg.apply(pairs.iter().filter(|(k, _)| k != "defense").map(|(k, v)| (k.as_str(), v.as_str())))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Set dotted keys on top of the current values.
    pub fn apply<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut open = HashSet::new();
        for (key, raw) in pairs {
            set_path(&mut tree, key, raw, &mut open)?;
        }
        *self = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Environment overrides for the output directory and worker count.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        if let Ok(n) = std::env::var(ENV_THREADS) {
            self.workers = n
                .trim()
                .parse()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| Error::Config(format!("{ENV_THREADS} = `{n}` is not a positive integer")))?;
        }
        Ok(())
    }

    /// The configuration in the flat text format, one leaf per line.
    pub fn to_text(&self) -> Result<String> {
        let tree = serde_json::to_value(self)?;
        let mut lines = Vec::new();
        flatten("", &tree, &mut lines);
        lines.retain(|l| !l.starts_with("defense ="));
        lines.insert(0, format!("defense = {}", self.defense));
        Ok(lines.join("\n") + "\n")
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(seen, _): &(String, String)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn scalar(raw: &str, like: &Value) -> Result<Value> {
    let raw = raw.trim();
    let bad = || Error::Config(format!("cannot read `{raw}` as {}", kind_of(like)));
    Ok(match like {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_f64() => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::Number(_) => match raw.parse::<u64>() {
            Ok(v) => Value::from(v),
            Err(_) => {
                let v: f64 = raw.parse().map_err(|_| bad())?;
                serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
            }
        },
        Value::String(_) => Value::String(raw.to_string()),
        _ => {
            if raw == "none" || raw.is_empty() {
                Value::Null
            } else {
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
            }
        }
    })
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "a list",
        Value::Object(_) => "a section",
        Value::Null => "a value",
    }
}

/// Sets one leaf. Sections that were `none` are created on first use and
/// accept new keys for the rest of the call (`open`).
fn set_path(tree: &mut Value, key: &str, raw: &str, open: &mut HashSet<String>) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let section = parts[..i].join(".");
        if node.is_null() {
            *node = Value::Object(Map::new());
            open.insert(section.clone());
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{section}` is not a section")))?;
        if !map.contains_key(*part) {
            if !open.contains(&section) {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            map.insert(part.to_string(), Value::Null);
        }
        let child = map.get_mut(*part).expect("inserted above");
        if last {
            *child = match &*child {
                Value::Array(items) => {
                    let like = items.first().cloned().unwrap_or(Value::Null);
                    let elems: Result<Vec<Value>> = raw
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| scalar(s, &like))
                        .collect();
                    Value::Array(elems?)
                }
                Value::Object(_) => return Err(Error::Config(format!("`{key}` is a section, not a value"))),
                other => scalar(raw, other)?,
            };
            return Ok(());
        }
        node = child;
    }
    Ok(())
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            let parts: Vec<String> = items.iter().map(render).collect();
            out.push(format!("{prefix} = {}", parts.join(", ")));
        }
        other => out.push(format!("{prefix} = {}", render(other))),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "none".into(),
        other => other.to_string(),
    }
}
