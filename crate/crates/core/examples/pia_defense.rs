//! Property defense on bags of samples. The matched attacker aggregates bags
//! like the defender does, the substitute uses the other aggregator.
//!
//! cargo run --release --example pia_defense -- [seed]

use privrep::attacks::train_pia_attacker;
use privrep::defense::train_pia_defense;
use privrep::workbench::{prepare_data, DefenseKind, ExperimentConfig, SweepPoint, TaskData};

fn main() -> privrep::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig::preset(DefenseKind::Pia);
    let TaskData::Property(task) = prepare_data(&cfg, seed)? else {
        unreachable!()
    };
    let mode = cfg.eval.aggregator;
    let k = task.ratio_grid.len();
    println!("{} train bags, {} test bags, {k} ratios (chance {:.3})", task.train_bags.len(), task.test_bags.len(), 1.0 / k as f64);

    for lambda in [0.0, 0.75] {
        let point = SweepPoint { lambda, epsilon: 0.0, sigma: 0.0 };
        let state = train_pia_defense(&task.train_bags, &task.ratio_grid, &cfg.arch, &cfg.game_for(seed, &point), mode)?;
        let (_, matched) = train_pia_attacker(&state.encoder, &task.train_bags, &task.test_bags, k, mode, &cfg.arch, &cfg.attack)?;
        let (_, substitute) =
            train_pia_attacker(&state.encoder, &task.train_bags, &task.test_bags, k, mode.other(), &cfg.arch, &cfg.attack)?;
        println!(
            "lambda {lambda:.2}  utility {:.3}  matched {:.3}  substitute {:.3}",
            state.utility_accuracy(&task.utility_test)?,
            matched.accuracy,
            substitute.accuracy
        );
    }
    Ok(())
}
