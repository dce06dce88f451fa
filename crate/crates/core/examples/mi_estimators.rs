//! Mutual-information estimators on a correlated Gaussian pair: the CLUB
//! upper estimate and cross-entropy lower bound against a binary proxy, a
//! JSD critic on joint vs shuffled pairs, and the entropy of the bounded
//! perturbation families.
//!
//! cargo run --release --example mi_estimators -- [rho]

use ndarray::{concatenate, s, Array2, Axis};
use privrep::mi::{ce_lower_bound, club_mi_value, jsd_mi_objective, perturbation_entropy, PerturbationFamily, PerturbationParams};
use privrep::nn::{fit_classifier, Activation, FitConfig, Mlp, MlpSpec};
use privrep::rng;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

fn main() -> privrep::Result<()> {
    let rho: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let n = 4000;
    let mut r = rng::substream(0, rng::streams::DATA);
    let mut x = Array2::zeros((n, 1));
    let mut y = Array2::zeros((n, 1));
    for i in 0..n {
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        x[[i, 0]] = a;
        y[[i, 0]] = rho * a + (1.0 - rho * rho).sqrt() * b;
    }
    println!("rho {rho}: I(x; y) = {:.3} nats", -0.5 * (1.0 - rho * rho).ln());

    let fit = FitConfig { epochs: 60, lr: 3e-3, batch_size: 64, ..Default::default() };
    let u: Vec<usize> = y.column(0).iter().map(|&v| (v > 0.0) as usize).collect();
    let (xtr, xte) = (x.slice(s![..n / 2, ..]), x.slice(s![n / 2.., ..]));
    let mut init = rng::substream(0, rng::streams::INIT);
    let mut head = Mlp::new(MlpSpec::new(vec![1, 64, 2], Activation::Relu, Activation::Identity), &mut init)?;
    fit_classifier(&mut head, xtr, &u[..n / 2], &fit, &mut init)?;
    let club = club_mi_value(&head, xte, &u[n / 2..])?;
    let ce = ce_lower_bound(&head, xte, &u[n / 2..])?;
    println!("sign(y) proxy: club {:.3}  ce lower bound {:.3}  (ln 2 = {:.3})", club.value, ce.value, 2f64.ln());

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut init);
    let joint = concatenate![Axis(1), x, y];
    let shuffled = concatenate![Axis(1), x, y.select(Axis(0), &perm)];
    let train = concatenate![Axis(0), joint.slice(s![..n / 2, ..]), shuffled.slice(s![..n / 2, ..])];
    let labels: Vec<usize> = (0..n).map(|i| (i < n / 2) as usize).collect();
    let mut critic = Mlp::new(MlpSpec::new(vec![2, 64, 2], Activation::Relu, Activation::Identity), &mut init)?;
    fit_classifier(&mut critic, train.view(), &labels, &fit, &mut init)?;
    let score = |m: Array2<f64>| -> privrep::Result<Vec<f64>> {
        Ok(critic.forward_batch(m.view())?.rows().into_iter().map(|r| r[1] - r[0]).collect())
    };
    let pos = score(joint.slice(s![n / 2.., ..]).to_owned())?;
    let neg = score(shuffled.slice(s![n / 2.., ..]).to_owned())?;
    println!("jsd critic objective per pair {:.4}", jsd_mi_objective(&pos, &neg)? / pos.len() as f64);

    for family in [PerturbationFamily::GaussianTanh, PerturbationFamily::Uniform] {
        for log_sigma in [-2.0, -1.0, 0.0] {
            let mut p = PerturbationParams::new(4, 1.0, family)?;
            p.log_sigma = vec![log_sigma; 4];
            let h = perturbation_entropy(&p, 20_000, &mut rng::substream(0, rng::streams::NOISE))?;
            println!("{family:?} eps 1 log sigma {log_sigma:+.1}: entropy {h:.3} nats");
        }
    }
    Ok(())
}
