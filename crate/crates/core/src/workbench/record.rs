//! Self-describing results records, stored one JSON object per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackReport, ReconReport};
use crate::bounds::BoundReport;
use crate::defense::RoundLosses;
use crate::error::{Error, Result};

use super::config::{DefenseKind, ExperimentConfig, SweepPoint};

/// Bumped whenever the record layout changes incompatibly.
pub const RECORD_FORMAT: u32 = 1;

/// Pipeline stages, used to tag failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Data,
    Train,
    Checkpoint,
    Utility,
    Attack,
    Bounds,
    Persist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

/// One attacker's result. `held_out` is false for attackers whose training
/// data overlaps the evaluation set (the in-game adversary head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedAttack {
    pub name: String,
    pub held_out: bool,
    pub report: AttackReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRecord {
    pub format: u32,
    pub version: String,
    pub kind: DefenseKind,
    pub seed: u64,
    pub point: SweepPoint,
    pub config: ExperimentConfig,
    pub losses: Vec<RoundLosses>,
    pub utility: Option<f64>,
    pub attacks: Vec<NamedAttack>,
    pub recon: Option<ReconReport>,
    pub bounds: Option<BoundReport>,
    pub checkpoint: Option<String>,
    pub wall_clock_s: f64,
    pub error: Option<StageError>,
}

impl ResultsRecord {
    pub fn new(config: &ExperimentConfig, seed: u64, point: SweepPoint) -> Self {
        Self {
            format: RECORD_FORMAT,
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: config.defense,
            seed,
            point,
            config: config.clone(),
            losses: Vec::new(),
            utility: None,
            attacks: Vec::new(),
            recon: None,
            bounds: None,
            checkpoint: None,
            wall_clock_s: 0.0,
            error: None,
        }
    }

    pub fn attack(&self, name: &str) -> Option<&AttackReport> {
        self.attacks.iter().find(|a| a.name == name).map(|a| &a.report)
    }

    /// Best accuracy among held-out membership or property attackers.
    pub fn strongest_attack(&self) -> Option<f64> {
        self.attacks
            .iter()
            .filter(|a| a.held_out && a.name != super::run::LIRA)
            .map(|a| a.report.accuracy)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    /// Named scalar metrics (everything but wall-clock time), for replay checks.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(u) = self.utility {
            out.push(("utility".to_string(), u));
        }
        for l in &self.losses {
            out.push((format!("loss.{}.privacy", l.round), l.privacy));
            out.push((format!("loss.{}.utility", l.round), l.utility));
        }
        for a in &self.attacks {
            out.push((format!("{}.accuracy", a.name), a.report.accuracy));
            if let Some(auc) = a.report.auc {
                out.push((format!("{}.auc", a.name), auc));
            }
            for (f, t) in &a.report.tpr_at {
                out.push((format!("{}.tpr@{f}", a.name), *t));
            }
        }
        if let Some(r) = &self.recon {
            out.push(("recon.mean_mse".to_string(), r.mean_mse));
            out.push(("recon.train_mse".to_string(), r.train_mse));
        }
        if let Some(b) = &self.bounds {
            for l in &b.leakage {
                out.push((format!("bound.leakage.{:?}", l.estimator), l.bound));
            }
            if let Some((_, t)) = b.tradeoff {
                out.push(("bound.tradeoff".to_string(), t));
            }
            if let Some(a) = b.advantage {
                out.push(("bound.advantage".to_string(), a));
            }
        }
        out
    }

    pub fn check_compatible(&self) -> Result<()> {
        if self.format != RECORD_FORMAT {
            return Err(Error::IncompatibleVersion(format!(
                "record format {} (version {}), expected {RECORD_FORMAT}",
                self.format, self.version
            )));
        }
        Ok(())
    }
}

/// Append records to a JSON-lines file, creating it if needed.
pub fn append_records(path: impl AsRef<Path>, records: &[ResultsRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    Ok(())
}

/// Read every record of a JSON-lines file. Blank lines are skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultsRecord>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ResultsRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            detail: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;
    use crate::workbench::ExperimentConfig;

    fn sample() -> ResultsRecord {
        let cfg = ExperimentConfig::preset(DefenseKind::Mia);
        let mut r = ResultsRecord::new(&cfg, 3, SweepPoint { lambda: 0.25, epsilon: 0.0, sigma: 0.0 });
        r.utility = Some(0.8125);
        r.losses.push(RoundLosses { round: 0, privacy: 0.69, utility: 0.1 + 0.2 });
        r.attacks.push(NamedAttack {
            name: "membership".into(),
            held_out: true,
            report: AttackReport {
                kind: AttackKind::Membership,
                accuracy: 0.55,
                roc: vec![(0.0, 0.0), (0.3, 0.4), (1.0, 1.0)],
                tpr_at: vec![(0.01, 0.02)],
                auc: Some(0.6),
                per_class: vec![0.5, 0.6],
                chance: 0.5,
            },
        });
        r.error = Some(StageError { stage: Stage::Bounds, message: "x".into() });
        r
    }

    #[test]
    fn json_lines_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/records.jsonl");
        let a = sample();
        let mut b = sample();
        b.seed = 4;
        append_records(&path, std::slice::from_ref(&a)).unwrap();
        append_records(&path, &[b.clone()]).unwrap();
        assert_eq!(read_records(&path).unwrap(), vec![a, b]);
    }

    #[test]
    fn metrics_and_strongest() {
        let r = sample();
        assert_eq!(r.strongest_attack(), Some(0.55));
        assert!(r.metrics().iter().any(|(k, v)| k == "membership.auc" && *v == 0.6));
        let mut bad = r.clone();
        bad.format = 99;
        assert!(bad.check_compatible().is_err());
    }
}
