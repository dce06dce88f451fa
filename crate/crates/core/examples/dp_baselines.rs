//! Differential-privacy baselines on the membership task: DP-SGD over a
//! grid of noise multipliers and Gaussian noise on encoder outputs.
//!
//! cargo run --release --example dp_baselines -- [seed]

use privrep::workbench::{run_point, DefenseKind, ExperimentConfig, JobOptions};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    for kind in [DefenseKind::Dpsgd, DefenseKind::DpEncoder] {
        let cfg = ExperimentConfig::preset(kind);
        for point in cfg.sweep_points() {
            let (rec, _) = run_point(&cfg, seed, point, JobOptions { train_only: false });
            match (&rec.error, rec.utility, rec.strongest_attack()) {
                (None, Some(u), Some(a)) => println!("{kind} sigma {:.2}  utility {u:.3}  attack {a:.3}", point.sigma),
                (e, ..) => println!("{kind} sigma {:.2}  failed: {e:?}", point.sigma),
            }
        }
    }
}
