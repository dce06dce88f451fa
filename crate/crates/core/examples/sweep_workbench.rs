//! A small config-driven sweep: records, checkpoints, a report and an export
//! of released representations, all under one output directory.
//!
//! cargo run --release --example sweep_workbench -- [output_dir]

use std::path::PathBuf;

use privrep::workbench::{
    export_representations, prepare_data, report, run, write_report, Checkpoint, ExperimentConfig,
};

const CONFIG: &str = "
defense = mia
game.rounds = 300
arch.encoder_hidden = 32
data.mia.n_members = 200
data.mia.n_nonmembers = 200
data.mia.n_test = 500
data.mia.subclusters = 40
sweep.lambda = 0, 0.5, 1
seeds = 0, 1
";

fn main() -> privrep::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("privrep-sweep"));
    let mut cfg = ExperimentConfig::from_text(CONFIG)?;
    cfg.output_dir = out.clone();
    cfg.apply_env()?;
    println!("{}", cfg.to_text()?);

    let records = run(&cfg)?;
    let rep = report(&records)?;
    print!("{}", rep.markdown);
    let files = write_report(&rep, out.join("report"))?;
    println!("report: {} files under {}", files.len(), out.join("report").display());

    if let Some(path) = records.iter().find_map(|r| r.checkpoint.as_ref()) {
        let ckpt = Checkpoint::load(path)?;
        let data = prepare_data(&cfg, ckpt.seed)?.export_set()?;
        let n = export_representations(&ckpt, &data, out.join("reps.csv"), ckpt.seed)?;
        println!("exported {n} representations from {path}");
    }
    Ok(())
}
