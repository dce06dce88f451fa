//! Membership defense: train the game at two λ values and attack the
//! released representations with a held-out attacker.
//!
//! cargo run --release --example mia_defense -- [seed]

use privrep::attacks::{membership_report, train_mia_attacker};
use privrep::defense::train_mia_defense;
use privrep::workbench::{prepare_data, DefenseKind, ExperimentConfig, SweepPoint};

fn main() -> privrep::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig::preset(DefenseKind::Mia);
    let data = prepare_data(&cfg, seed)?;
    let m = data.membership()?;
    let d0 = m.reference_nonmembers()?;
    let (attack_train, _) = m.attack_train()?;
    let (attack_test, u_test) = m.attack_test()?;

    for lambda in [0.0, 0.75] {
        let point = SweepPoint { lambda, epsilon: 0.0, sigma: 0.0 };
        let state = train_mia_defense(&m.members, &d0, &cfg.arch, &cfg.game_for(seed, &point))?;
        let attacker = train_mia_attacker(&state.encoder, &attack_train, &cfg.arch, &cfg.attack)?;
        let reps = state.represent(attack_test.view())?;
        let rep = membership_report(&attacker, reps.view(), &u_test)?;
        println!(
            "lambda {lambda:.2}  utility {:.3}  attack acc {:.3}  auc {:.3}  tpr@1% {:.3}",
            state.utility_accuracy(&m.utility_test)?,
            rep.accuracy,
            rep.auc.unwrap_or(f64::NAN),
            rep.tpr_at(0.01).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
