//! Reconstruction defense with a learned bounded perturbation. Larger ε
//! should make decoding harder.
//!
//! cargo run --release --example dra_defense -- [seed] [gaussian-tanh|uniform]

use privrep::attacks::train_dra_attacker;
use privrep::defense::train_dra_defense;
use privrep::mi::PerturbationFamily;
use privrep::rng;
use privrep::workbench::{prepare_data, DefenseKind, ExperimentConfig, SweepPoint, TaskData};

fn main() -> privrep::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::preset(DefenseKind::Dra);
    if args.next().as_deref() == Some("uniform") {
        cfg.eval.family = PerturbationFamily::Uniform;
    }
    let TaskData::Reconstruction(task) = prepare_data(&cfg, seed)? else {
        unreachable!()
    };

    for epsilon in [0.0, 0.5, 1.5] {
        let point = SweepPoint { lambda: 0.4, epsilon, sigma: 0.0 };
        let state = train_dra_defense(&task.train, &cfg.arch, &cfg.game_for(seed, &point), cfg.eval.family)?;
        let mut r = rng::substream(seed, "eval");
        let utility = state.utility_accuracy(&task.test, cfg.eval.utility_draws, &mut r)?;
        let (_, rec) = train_dra_attacker(&state, &task.train, &task.test, &cfg.eval.decoder_hidden, task.shape, &cfg.attack)?;
        print!("eps {epsilon:.1}  utility {utility:.3}  recon mse {:.4}", rec.mean_mse);
        if let Some(s) = rec.mean_ssim {
            print!("  ssim {s:.3}");
        }
        println!();
    }
    Ok(())
}
