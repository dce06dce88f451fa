//! Closed-form privacy guarantees: attack-success ceilings from conditional
//! entropy, the reconstruction error floor, the utility-privacy tradeoff and
//! a Lipschitz estimate of a trained head.
//!
//! cargo run --release --example bounds

use privrep::bounds::{
    dra_error_bound, inv_binary_entropy_exact, inv_binary_entropy_lower, lipschitz_upper, mia_leakage_bound,
    pia_leakage_bound, tradeoff_bound, GeometrySpec, ThreatVariant, TradeoffInputs,
};
use privrep::nn::{Activation, Mlp, MlpSpec};
use privrep::rng;

fn main() -> privrep::Result<()> {
    println!("H(u|r) bits   H2^-1 exact   lower   mia ceiling   pia ceiling");
    for h in [0.1, 0.25, 0.5, 0.75, 0.9, 1.0] {
        println!(
            "{h:>11.2}   {:>11.4}   {:.4}   {:>11.4}   {:>11.4}",
            inv_binary_entropy_exact(h)?,
            inv_binary_entropy_lower(h)?,
            mia_leakage_bound(h)?,
            pia_leakage_bound(h)?
        );
    }

    let geom = GeometrySpec::hypercube(4, 0.1)?;
    for mi in [0.0, 0.5, 1.0, 2.0] {
        println!("I(x; r) = {mi:.1} nats: expected recon error >= {:.4}", dra_error_bound(mi, &geom)?);
    }

    for adv in [0.0, 0.25, 0.5, 1.0] {
        let t = tradeoff_bound(&TradeoffInputs::new(0.5, 0.5, 0.5, adv)?, ThreatVariant::Mia);
        println!("advantage {adv:.2}: utility risk >= {t:.4}");
    }

    let head = Mlp::new(MlpSpec::new(vec![16, 32, 2], Activation::Relu, Activation::Identity), &mut rng::from_seed(7))?;
    println!("random head Lipschitz upper bound {:.3}", lipschitz_upper(&head));
    Ok(())
}
