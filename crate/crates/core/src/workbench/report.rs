//! Summary tables over results records.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::DefenseKind;
use super::record::{ResultsRecord, RECORD_FORMAT};
use super::run::LIRA;

/// One table row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub kind: DefenseKind,
    pub seed: u64,
    pub lambda: f64,
    pub epsilon: f64,
    pub sigma: f64,
    pub utility: Option<f64>,
    pub strongest_attack: Option<f64>,
    pub auc: Option<f64>,
    pub tpr_at_1pct: Option<f64>,
    pub lira_tpr_at_1pct: Option<f64>,
    pub recon_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    /// Rows grouped by defense kind, each group sorted by λ, then ε, σ, seed.
    pub rows: Vec<ReportRow>,
    pub csv: String,
    pub markdown: String,
    /// `(file name, CSV)` of every ROC curve.
    pub roc_files: Vec<(String, String)>,
}

const COLUMNS: [&str; 12] = [
    "kind",
    "seed",
    "lambda",
    "epsilon",
    "sigma",
    "utility",
    "strongest_attack",
    "auc",
    "tpr_at_0.01",
    "lira_tpr_at_0.01",
    "recon_mse",
    "error",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

impl ReportRow {
    fn from_record(r: &ResultsRecord) -> Self {
        let best = r
            .attacks
            .iter()
            .filter(|a| a.held_out && a.name != LIRA)
            .max_by(|a, b| a.report.accuracy.total_cmp(&b.report.accuracy));
        Self {
            kind: r.kind,
            seed: r.seed,
            lambda: r.point.lambda,
            epsilon: r.point.epsilon,
            sigma: r.point.sigma,
            utility: r.utility,
            strongest_attack: best.map(|a| a.report.accuracy),
            auc: best.and_then(|a| a.report.auc),
            tpr_at_1pct: best.and_then(|a| a.report.tpr_at(0.01)),
            lira_tpr_at_1pct: r.attack(LIRA).and_then(|a| a.tpr_at(0.01)),
            recon_mse: r.recon.as_ref().map(|x| x.mean_mse),
            error: r.error.as_ref().map(|e| format!("{:?}: {}", e.stage, e.message).to_lowercase()),
        }
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.kind.to_string(),
            self.seed.to_string(),
            self.lambda.to_string(),
            self.epsilon.to_string(),
            self.sigma.to_string(),
            cell(self.utility),
            cell(self.strongest_attack),
            cell(self.auc),
            cell(self.tpr_at_1pct),
            cell(self.lira_tpr_at_1pct),
            cell(self.recon_mse),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Tables of utility against attack metrics per sweep point.
pub fn report(records: &[ResultsRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for r in records {
        if r.format != RECORD_FORMAT {
            return Err(Error::IncompatibleVersion(format!(
                "record format {} (version {}) next to format {RECORD_FORMAT}",
                r.format, r.version
            )));
        }
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&records[a], &records[b]);
        x.kind
            .cmp(&y.kind)
            .then(x.point.lambda.total_cmp(&y.point.lambda))
            .then(x.point.epsilon.total_cmp(&y.point.epsilon))
            .then(x.point.sigma.total_cmp(&y.point.sigma))
            .then(x.seed.cmp(&y.seed))
    });
    let rows: Vec<ReportRow> = order.iter().map(|&i| ReportRow::from_record(&records[i])).collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for row in &rows {
        w.write_record(row.cells())?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .expect("csv output is utf-8");

    let mut markdown = String::new();
    let mut current = None;
    for row in &rows {
        if current != Some(row.kind) {
            current = Some(row.kind);
            let _ = writeln!(markdown, "{}## {}\n", if markdown.is_empty() { "" } else { "\n" }, row.kind);
            let _ = writeln!(markdown, "| {} |", COLUMNS[1..].join(" | "));
            let _ = writeln!(markdown, "|{}", "---|".repeat(COLUMNS.len() - 1));
        }
        let _ = writeln!(markdown, "| {} |", row.cells()[1..].join(" | "));
    }

    let mut roc_files = Vec::new();
    for &i in &order {
        let r = &records[i];
        for a in r.attacks.iter().filter(|a| !a.report.roc.is_empty()) {
            let name = format!(
                "roc-{}-{}-seed{}-lam{}-eps{}-sig{}.csv",
                r.kind, a.name, r.seed, r.point.lambda, r.point.epsilon, r.point.sigma
            );
            let mut body = String::from("fpr,tpr\n");
            for (f, t) in &a.report.roc {
                let _ = writeln!(body, "{f},{t}");
            }
            roc_files.push((name, body));
        }
    }
    Ok(Report {
        rows,
        csv,
        markdown,
        roc_files,
    })
}

/// Write `summary.csv`, `summary.md` and `roc/*.csv` under `dir`.
pub fn write_report(report: &Report, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("roc"))?;
    let mut written = vec![dir.join("summary.csv"), dir.join("summary.md")];
    std::fs::write(&written[0], &report.csv)?;
    std::fs::write(&written[1], &report.markdown)?;
    for (name, body) in &report.roc_files {
        let p = dir.join("roc").join(name);
        std::fs::write(&p, body)?;
        written.push(p);
    }
    Ok(written)
}
