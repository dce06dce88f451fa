//! Low-FPR membership audit with shadow models against the in-game
//! membership head, at the utility-only and the privacy-only end of the game.
//!
//! cargo run --release --example lira_audit -- [seed]

use privrep::workbench::run::LIRA;
use privrep::workbench::{run_point, DefenseKind, ExperimentConfig, JobOptions, SweepPoint};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::preset(DefenseKind::Mia);
    cfg.eval.lira = true;
    for lambda in [0.0, 1.0] {
        let point = SweepPoint { lambda, epsilon: 0.0, sigma: 0.0 };
        let (rec, _) = run_point(&cfg, seed, point, JobOptions { train_only: false });
        let Some(lira) = rec.attack(LIRA) else {
            println!("lambda {lambda}: no audit ({:?})", rec.error);
            continue;
        };
        println!(
            "lambda {lambda:.1}  auc {:.3}  tpr@0.1% {:.3}  tpr@1% {:.3}  tpr@10% {:.3}",
            lira.auc.unwrap_or(f64::NAN),
            lira.tpr_at(0.001).unwrap_or(f64::NAN),
            lira.tpr_at(0.01).unwrap_or(f64::NAN),
            lira.tpr_at(0.1).unwrap_or(f64::NAN)
        );
    }
}
