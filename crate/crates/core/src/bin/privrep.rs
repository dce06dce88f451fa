use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use privrep::workbench::{
    evaluate_checkpoint, export_representations, prepare_data, read_records, recompute_bounds, report, run_with,
    threat_of, write_report, Checkpoint, ExperimentConfig, JobOptions, ResultsRecord,
};
use privrep::Result;

#[derive(Parser)]
#[command(name = "privrep", version, about = "Train, attack and audit privacy-preserving encoders")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// Flat key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Verb {
    /// Train defenses and save checkpoints (utility only, no attacks).
    Train(Common),
    /// Attack a saved checkpoint.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Recompute bound reports from stored records and print them as JSON.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/records.jsonl`.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Full pipeline over every seed and sweep point.
    Sweep(Common),
    /// Write the released representations of a checkpoint as CSV.
    ExportReps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary tables and ROC files from stored records.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: Option<PathBuf>,
        /// Defaults to `<output_dir>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply_env()?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary(r: &ResultsRecord) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "{} seed={} lambda={} epsilon={} sigma={} utility={} attack={}",
        r.kind,
        r.seed,
        r.point.lambda,
        r.point.epsilon,
        r.point.sigma,
        f(r.utility),
        f(r.strongest_attack())
    );
    if let Some(rc) = &r.recon {
        s += &format!(" recon_mse={:.4}", rc.mean_mse);
    }
    if let Some(e) = &r.error {
        s += &format!(" error[{:?}]={}", e.stage, e.message);
    }
    s
}

fn filter_seed(records: Vec<ResultsRecord>, seed: Option<u64>) -> Vec<ResultsRecord> {
    records.into_iter().filter(|r| seed.is_none_or(|s| r.seed == s)).collect()
}

fn main_inner(cli: Cli) -> Result<bool> {
    match cli.verb {
        Verb::Train(common) => {
            let cfg = load(&common)?;
            let recs = run_with(&cfg, JobOptions { train_only: true })?;
            recs.iter().for_each(|r| println!("{}", summary(r)));
            Ok(recs.iter().all(|r| r.error.is_none()))
        }
        Verb::Sweep(common) => {
            let cfg = load(&common)?;
            let recs = run_with(&cfg, JobOptions { train_only: false })?;
            recs.iter().for_each(|r| println!("{}", summary(r)));
            println!("records appended to {}", cfg.output_dir.join("records.jsonl").display());
            Ok(recs.iter().all(|r| r.error.is_none()))
        }
        Verb::Attack { common, checkpoint } => {
            let cfg = load(&common)?;
            let mut ckpt = Checkpoint::load(&checkpoint)?;
            if let Some(s) = common.seed {
                ckpt.seed = s;
            }
            let mut rec = evaluate_checkpoint(&cfg, &ckpt)?;
            rec.checkpoint = Some(checkpoint.display().to_string());
            privrep::workbench::append_records(cfg.output_dir.join("records.jsonl"), std::slice::from_ref(&rec))?;
            println!("{}", summary(&rec));
            Ok(rec.error.is_none())
        }
        Verb::Bounds { common, records } => {
            let cfg = load(&common)?;
            let path = records.unwrap_or_else(|| cfg.output_dir.join("records.jsonl"));
            let recs = filter_seed(read_records(&path)?, common.seed);
            let mut out = Vec::new();
            for r in &recs {
                r.check_compatible()?;
                if let Some(b) = &r.bounds {
                    out.push(serde_json::json!({
                        "kind": r.kind,
                        "seed": r.seed,
                        "point": r.point,
                        "bounds": recompute_bounds(b, threat_of(r.kind))?,
                    }));
                }
            }
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(true)
        }
        Verb::ExportReps { common, checkpoint, out } => {
            let cfg = load(&common)?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let seed = common.seed.unwrap_or(ckpt.seed);
            let data = prepare_data(&cfg, seed)?.export_set()?;
            let n = export_representations(&ckpt, &data, &out, seed)?;
            println!("wrote {n} rows to {}", out.display());
            Ok(true)
        }
        Verb::Report { common, records, out } => {
            let cfg = load(&common)?;
            let path = records.unwrap_or_else(|| cfg.output_dir.join("records.jsonl"));
            let recs = filter_seed(read_records(&path)?, common.seed);
            let rep = report(&recs)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("report"));
            let files = write_report(&rep, &dir)?;
            print!("{}", rep.markdown);
            println!("wrote {} files under {}", files.len(), dir.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
