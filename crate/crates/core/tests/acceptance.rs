//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line straight to
//! stdout (not captured by the harness) and then asserts.

use std::io::Write as _;
use std::sync::OnceLock;

use ndarray::{concatenate, s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use privrep::attacks::roc_and_tpr;
use privrep::bounds::{
    dra_error_bound, inv_binary_entropy_lower, mia_leakage_bound, tradeoff_bound, GeometrySpec, ThreatVariant,
    TradeoffInputs,
};
use privrep::defense::dra::derangement;
use privrep::defense::{
    advreg_mode_loss, aggregate, head_cross_entropy, mia_losses, sample_bags, AggregatorMode, ArchConfig, DraGameState,
    MiaGameState, PiaGameState,
};
use privrep::domain::{Dataset, DatasetBag, GameConfig, RepSource, Representation};
use privrep::dp::{clip, SplitModel};
use privrep::mi::{ce_lower_bound, club_mi_value, jsd_mi_objective, jsd_score_grads, PerturbationFamily, PerturbationParams};
use privrep::nn::gradcheck::{central_diff, compare};
use privrep::nn::loss::softmax_cross_entropy;
use privrep::nn::{fit_classifier, Activation, FitConfig, Mlp, MlpSpec};
use privrep::rng;
use privrep::workbench::run::LIRA;
use privrep::workbench::{
    evaluate_checkpoint, run_point, Checkpoint, DefenseKind, ExperimentConfig, JobOptions, ResultsRecord, SweepPoint,
};

const FULL: JobOptions = JobOptions { train_only: false };

fn line(n: u32, name: &str, pass: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "acceptance {n:>2} {verdict} {name}: {detail}");
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn point(lambda: f64, epsilon: f64, sigma: f64) -> SweepPoint {
    SweepPoint { lambda, epsilon, sigma }
}

fn run_ok(cfg: &ExperimentConfig, seed: u64, p: SweepPoint) -> (ResultsRecord, Checkpoint) {
    let (rec, ckpt) = run_point(cfg, seed, p, FULL);
    if let Some(e) = &rec.error {
        panic!("{} seed {seed} {p:?} failed at {:?}: {}", cfg.defense, e.stage, e.message);
    }
    (rec, ckpt.expect("checkpoint"))
}

/// Seed-mean `(point, utility, strongest attack)` rows in point order.
fn summarize(points: &[SweepPoint], recs: &[ResultsRecord]) -> Vec<(SweepPoint, f64, f64)> {
    points
        .iter()
        .map(|p| {
            let at: Vec<&ResultsRecord> = recs.iter().filter(|r| r.point == *p).collect();
            (
                *p,
                mean(at.iter().map(|r| r.utility.unwrap())),
                mean(at.iter().map(|r| r.strongest_attack().unwrap())),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// membership sweep shared by criteria 1, 2 and 5

const MIA_SEEDS: u64 = 8;
const LIRA_SEEDS: u64 = 5;
const DP_SEEDS: u64 = 3;

struct MiaSweep {
    cfg: ExperimentConfig,
    runs: Vec<(ResultsRecord, Checkpoint)>,
}

fn mia_sweep() -> &'static MiaSweep {
    static SWEEP: OnceLock<MiaSweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let cfg = ExperimentConfig::preset(DefenseKind::Mia);
        let mut runs = Vec::new();
        for seed in 0..MIA_SEEDS {
            for p in cfg.sweep_points() {
                runs.push(run_ok(&cfg, seed, p));
            }
        }
        MiaSweep { cfg, runs }
    })
}

fn mia_summary() -> Vec<(SweepPoint, f64, f64)> {
    let sw = mia_sweep();
    let recs: Vec<ResultsRecord> = sw.runs.iter().map(|(r, _)| r.clone()).collect();
    summarize(&sw.cfg.sweep_points(), &recs)
}

#[test]
fn criterion_01_mia_trend() {
    let sw = mia_sweep();
    let rows = mia_summary();
    let acc: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let util: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let lam: Vec<f64> = rows.iter().map(|r| r.0.lambda).collect();
    assert_eq!(lam, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    let monotone = acc.windows(2).all(|w| w[1] <= w[0] + 0.02);
    let slowest = sw.runs.iter().map(|(r, _)| r.wall_clock_s).fold(0.0, f64::max);
    let pass = monotone && acc[0] >= 0.55 && acc[3] <= 0.52 && util[3] >= util[0] - 0.05 && slowest <= 300.0;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    line(
        1,
        "MIA trend",
        pass,
        format!(
            "attack {} utility {} ({} seeds, slowest run {slowest:.1}s)",
            fmt(&acc),
            fmt(&util),
            MIA_SEEDS
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_lira_direction() {
    let sw = mia_sweep();
    let mut cfg = sw.cfg.clone();
    cfg.eval.lira = true;
    let tpr = |lambda: f64| -> Vec<f64> {
        (0..LIRA_SEEDS)
            .map(|seed| {
                let (_, ckpt) = sw
                    .runs
                    .iter()
                    .find(|(r, _)| r.seed == seed && r.point.lambda == lambda)
                    .expect("sweep point");
                let rec = evaluate_checkpoint(&cfg, ckpt).unwrap();
                assert!(rec.error.is_none(), "{:?}", rec.error);
                rec.attack(LIRA).and_then(|a| a.tpr_at(0.01)).expect("lira tpr")
            })
            .collect()
    };
    let (open, closed) = (tpr(0.0), tpr(1.0));
    let (m0, m1) = (median(open.clone()), median(closed.clone()));
    let pass = m0 > 3.0 * m1;
    line(
        2,
        "LiRA direction",
        pass,
        format!("median TPR@1%FPR {m0:.4} at lambda=0 vs {m1:.4} at lambda=1 ({LIRA_SEEDS} seeds; {open:.3?} / {closed:.3?})"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_pia_trend() {
    let cfg = ExperimentConfig::preset(DefenseKind::Pia);
    let pts = [point(0.0, 0.0, 0.0), point(0.75, 0.0, 0.0)];
    let mut per = Vec::new();
    for p in pts {
        let recs: Vec<ResultsRecord> = (0..3).map(|seed| run_ok(&cfg, seed, p).0).collect();
        let att = |name: &str| mean(recs.iter().map(|r| r.attack(name).unwrap().accuracy));
        per.push((
            mean(recs.iter().map(|r| r.strongest_attack().unwrap())),
            att("property-matched"),
            att("property-substitute"),
            mean(recs.iter().map(|r| r.utility.unwrap())),
        ));
    }
    let (open, closed) = (per[0], per[1]);
    let chance = 1.0 / cfg.data.pia.ratio_grid.len() as f64;
    let sub_ok = per.iter().all(|x| x.2 <= x.1 + 0.02);
    let pass = open.1 >= 2.0 * chance && closed.0 <= 1.5 * chance && open.3 - closed.3 <= 0.05 && sub_ok;
    line(
        3,
        "PIA trend",
        pass,
        format!(
            "matched {:.3} -> {:.3}, strongest at 0.75 {:.3}, substitute {:.3}/{:.3}, utility {:.3} -> {:.3} (chance {chance:.2}, 3 seeds)",
            open.1, closed.1, closed.0, open.2, closed.2, open.3, closed.3
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_04_dra_trend() {
    let mut details = Vec::new();
    let mut pass = true;
    for family in [PerturbationFamily::GaussianTanh, PerturbationFamily::Uniform] {
        let mut cfg = ExperimentConfig::preset(DefenseKind::Dra);
        cfg.eval.family = family;
        let mut mse = Vec::new();
        let mut util = Vec::new();
        for &eps in &cfg.sweep.epsilon {
            let recs: Vec<ResultsRecord> = (0..2).map(|seed| run_ok(&cfg, seed, point(0.4, eps, 0.0)).0).collect();
            mse.push(mean(recs.iter().map(|r| r.recon.as_ref().unwrap().mean_mse)));
            util.push(mean(recs.iter().map(|r| r.utility.unwrap())));
        }
        let ok = mse.windows(2).all(|w| w[1] > w[0]) && util.windows(2).all(|w| w[1] <= w[0]);
        pass &= ok;
        details.push(format!("{family:?}: mse {mse:.3?} utility {util:.3?}"));
    }
    line(4, "DRA trend", pass, format!("{} (2 seeds)", details.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_05_dp_dominance() {
    let ours = mia_summary();
    let mut pass = true;
    let mut details = Vec::new();
    for kind in [DefenseKind::Dpsgd, DefenseKind::DpEncoder] {
        let cfg = ExperimentConfig::preset(kind);
        let pts = cfg.sweep_points();
        let recs: Vec<ResultsRecord> = (0..DP_SEEDS)
            .flat_map(|seed| pts.iter().map(move |&p| (seed, p)))
            .map(|(seed, p)| run_ok(&cfg, seed, p).0)
            .collect();
        let base = summarize(&pts, &recs);
        // our operating point at a privacy level is the best-utility λ with
        // matched attack accuracy
        let mut pairs = 0;
        for b in &base {
            let best = ours
                .iter()
                .filter(|o| (o.2 - b.2).abs() <= 0.01)
                .max_by(|x, y| x.1.total_cmp(&y.1));
            if let Some(o) = best {
                pairs += 1;
                if o.1 < b.1 - 0.03 {
                    pass = false;
                    details.push(format!(
                        "{kind} sigma={} utility {:.3} beats best matched lambda={} utility {:.3}",
                        b.0.sigma, b.1, o.0.lambda, o.1
                    ));
                }
            }
        }
        pass &= pairs > 0;
        let curve: Vec<String> = base.iter().map(|b| format!("{}:{:.3}/{:.3}", b.0.sigma, b.1, b.2)).collect();
        details.push(format!("{kind} [{}] {pairs} matched points", curve.join(" ")));
    }
    let curve: Vec<String> = ours.iter().map(|o| format!("{}:{:.3}/{:.3}", o.0.lambda, o.1, o.2)).collect();
    details.insert(0, format!("ours [{}]", curve.join(" ")));
    line(5, "DP dominance", pass, format!("utility/attack {}", details.join("; ")));
    assert!(pass);
}

// ---------------------------------------------------------------------------

fn gaussian_pairs(seed: u64, n: usize, rho: f64) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng::substream(seed, rng::streams::DATA);
    let mut x = Array2::zeros((n, 1));
    let mut y = vec![0.0; n];
    for i in 0..n {
        let a: f64 = r.sample(StandardNormal);
        let b: f64 = r.sample(StandardNormal);
        x[[i, 0]] = a;
        y[i] = rho * a + (1.0 - rho * rho).sqrt() * b;
    }
    (x, y)
}

#[test]
fn criterion_06_mi_sanity() {
    let n = 4000;
    let fit = FitConfig {
        epochs: 60,
        lr: 3e-3,
        batch_size: 64,
        ..Default::default()
    };
    let mut clubs = Vec::new();
    let mut ces = Vec::new();
    let mut jsd_max = f64::NEG_INFINITY;
    for seed in 0..5 {
        let (x, y) = gaussian_pairs(seed, n, 0.9);
        // binary proxy of the partner, like the membership bit
        let u: Vec<usize> = y.iter().map(|&v| (v > 0.0) as usize).collect();
        let (xtr, xte) = (x.slice(s![..n / 2, ..]), x.slice(s![n / 2.., ..]));
        let mut init = rng::substream(seed, rng::streams::INIT);
        let mut head = Mlp::new(MlpSpec::new(vec![1, 64, 2], Activation::Relu, Activation::Identity), &mut init).unwrap();
        fit_classifier(&mut head, xtr, &u[..n / 2], &fit, &mut init).unwrap();
        clubs.push(club_mi_value(&head, xte, &u[n / 2..]).unwrap().value);
        ces.push(ce_lower_bound(&head, xte, &u[n / 2..]).unwrap().value);

        // critic on joint vs shuffled pairs
        let yc = Array2::from_shape_vec((n, 1), y.clone()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut init);
        let ys = yc.select(Axis(0), &perm);
        let joint = concatenate![Axis(1), x, yc];
        let shuffled = concatenate![Axis(1), x, ys];
        let pairs = concatenate![Axis(0), joint.slice(s![..n / 2, ..]), shuffled.slice(s![..n / 2, ..])];
        let labels: Vec<usize> = (0..n).map(|i| (i < n / 2) as usize).collect();
        let mut critic = Mlp::new(MlpSpec::new(vec![2, 64, 2], Activation::Relu, Activation::Identity), &mut init).unwrap();
        fit_classifier(&mut critic, pairs.view(), &labels, &fit, &mut init).unwrap();
        let score = |m: &Array2<f64>| -> Vec<f64> {
            let l = critic.forward_batch(m.view()).unwrap();
            l.rows().into_iter().map(|r| r[1] - r[0]).collect()
        };
        let pos = score(&joint.slice(s![n / 2.., ..]).to_owned());
        let neg = score(&shuffled.slice(s![n / 2.., ..]).to_owned());
        jsd_max = jsd_max.max(jsd_mi_objective(&pos, &neg).unwrap());
        for _ in 0..200 {
            let k = init.random_range(1..20);
            let scale = 10f64.powf(init.random_range(-2.0..3.0));
            let p: Vec<f64> = (0..k).map(|_| scale * init.sample::<f64, _>(StandardNormal)).collect();
            let q: Vec<f64> = (0..k).map(|_| scale * init.sample::<f64, _>(StandardNormal)).collect();
            jsd_max = jsd_max.max(jsd_mi_objective(&p, &q).unwrap());
        }
    }
    let pass = clubs.iter().all(|c| (0.4..=1.7).contains(c)) && ces.iter().all(|&c| c <= 0.9304) && jsd_max <= 0.0;
    line(
        6,
        "MI estimator sanity",
        pass,
        format!("rho=0.9 club {clubs:.3?} ce-lower {ces:.3?} max jsd objective {jsd_max:.3e} (5 seeds)"),
    );
    assert!(pass);
}

/// Independent bisection for `H₂⁻¹` on `[0, ½]`.
fn inverse_entropy_oracle(h: f64) -> f64 {
    let h2 = |p: f64| if p <= 0.0 { 0.0 } else { -p * p.log2() - (1.0 - p) * (1.0 - p).log2() };
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if h2(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn criterion_07_bound_formulas() {
    let leak = mia_leakage_bound(1.0).unwrap();
    let leak_ok = (leak - 0.80658).abs() <= 1e-5;
    let grid_ok = (1..=1000).all(|i| {
        let h = i as f64 / 1000.0;
        inv_binary_entropy_lower(h).unwrap() <= inverse_entropy_oracle(h) + 1e-12
    });
    let trade = tradeoff_bound(&TradeoffInputs::new(0.5, 1.0, 0.1, 1.0).unwrap(), ThreatVariant::Mia);
    let trade_ok = trade == 0.3;
    let e2 = std::f64::consts::E.powi(2);
    let geom = GeometrySpec {
        d: 2,
        p: 2,
        vol_boundary_x: 2.0 * e2,
        vol_boundary_eta: 1.0,
    };
    let at_zero = dra_error_bound(0.0, &geom).unwrap();
    let dra_ok = (at_zero - 2.0 / (2.0 + std::f64::consts::LN_2)).abs() < 1e-12
        && dra_error_bound(50.0, &geom).unwrap() == 0.0
        && dra_error_bound(-0.1, &geom).is_err()
        && dra_error_bound(0.0, &GeometrySpec { vol_boundary_eta: 2.0 * e2, ..geom.clone() }).is_err()
        && dra_error_bound(0.0, &GeometrySpec { vol_boundary_eta: 0.0, ..geom.clone() }).is_err();
    let pass = leak_ok && grid_ok && trade_ok && dra_ok;
    line(
        7,
        "bound formulas",
        pass,
        format!(
            "leakage(1 bit) {leak:.6}, lower <= exact on 1000 points {grid_ok}, tradeoff {trade}, dra bound at I=0 {at_zero:.4} with clamp/errors {dra_ok}"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------

const RTOL: f64 = 1e-3;
const ATOL: f64 = 1e-7;
const STEP: f64 = 1e-6;

fn random_data(n: usize, d: usize, classes: usize, r: &mut rng::Rng) -> Dataset {
    let x = Array2::from_shape_simple_fn((n, d), || r.random_range(-1.5..1.5));
    let y = (0..n).map(|_| r.random_range(0..classes)).collect();
    let a = (0..n).map(|_| r.random_range(0..2)).collect();
    Dataset::new(x, y, Some(a), classes).unwrap()
}

fn random_arch(r: &mut rng::Rng) -> ArchConfig {
    let output = if r.random_bool(0.5) { Activation::Tanh } else { Activation::Identity };
    ArchConfig {
        encoder_hidden: vec![r.random_range(2..6)],
        rep_dim: r.random_range(2..5),
        head_hidden: vec![r.random_range(2..6)],
        activation: Activation::Tanh,
        encoder_output: output,
    }
}

fn game(seed: u64, r: &mut rng::Rng) -> GameConfig {
    GameConfig {
        lambda: r.random_range(0.05..0.95),
        alpha: r.random_range(0.1..2.0),
        epsilon: r.random_range(0.2..1.5),
        ..GameConfig::default().with_seed(seed)
    }
}

fn check(name: &str, analytic: &[f64], numeric: &[f64], failures: &mut Vec<String>) {
    if let Err(m) = compare(analytic, numeric, RTOL, ATOL) {
        failures.push(format!("{name}: {m:?}"));
    }
}

#[test]
fn criterion_08_gradient_checks() {
    let mut failures = Vec::new();
    let mut checked = 0;
    for inst in 0..20u64 {
        let mut r = rng::from_seed(1000 + inst);
        let d = r.random_range(2..5);
        let classes = r.random_range(2..4);

        // membership game, encoder side
        let s = MiaGameState::new(d, classes, random_arch(&mut r), game(inst, &mut r)).unwrap();
        let (d1, d0) = (random_data(r.random_range(2..7), d, classes, &mut r), random_data(r.random_range(2..7), d, classes, &mut r));
        let (_, g) = s.encoder_objective(d1.view(), &d1.labels, d0.view()).unwrap();
        let num = central_diff(
            |p| {
                let mut t = s.clone();
                t.encoder.set_params(p).unwrap();
                t.encoder_objective(d1.view(), &d1.labels, d0.view()).unwrap().0
            },
            s.encoder.params(),
            STEP,
        );
        check("mia encoder", &g, &num, &mut failures);

        // adversary and utility heads: mean cross-entropy in their own parameters
        let reps = s.represent(d1.view()).unwrap();
        let privrep::defense::UtilityHead::Mlp(utility) = &s.utility_head else {
            panic!("game state without a utility head")
        };
        for (name, head, labels) in [
            ("membership head", &s.membership_head, vec![1; d1.len()]),
            ("utility head", utility, d1.labels.clone()),
        ] {
            let (_, g, _) = head_cross_entropy(head, reps.view(), &labels).unwrap();
            let num = central_diff(
                |p| {
                    let m = Mlp::from_params(head.spec().clone(), p.to_vec()).unwrap();
                    head_cross_entropy(&m, reps.view(), &labels).unwrap().0
                },
                head.params(),
                STEP,
            );
            check(name, &g, &num, &mut failures);
        }

        // property game, both aggregators
        let pool = random_data(120, d, classes, &mut r);
        let grid = vec![0.2, 0.5];
        let bags = sample_bags(&pool, &grid, (3, 6), 3, inst).unwrap();
        let refs: Vec<&DatasetBag> = bags.iter().collect();
        for mode in [AggregatorMode::Mean, AggregatorMode::Max] {
            let s = PiaGameState::new(d, classes, grid.clone(), mode, random_arch(&mut r), game(inst, &mut r)).unwrap();
            let (_, g) = s.encoder_objective(&refs).unwrap();
            let num = central_diff(
                |p| {
                    let mut t = s.clone();
                    t.encoder.set_params(p).unwrap();
                    t.encoder_objective(&refs).unwrap().0
                },
                s.encoder.params(),
                STEP,
            );
            check("pia encoder", &g, &num, &mut failures);
        }

        // reconstruction game: encoder and perturbation (with the entropy term)
        for family in [PerturbationFamily::GaussianTanh, PerturbationFamily::Uniform] {
            let mut s = DraGameState::new(d, classes, random_arch(&mut r), game(inst, &mut r), family).unwrap();
            let m = s.perturbation.dim();
            s.perturbation.mu = (0..m).map(|_| r.random_range(-0.5..0.5)).collect();
            s.perturbation.log_sigma = (0..m).map(|_| r.random_range(-0.7..0.3)).collect();
            let data = random_data(r.random_range(3..8), d, classes, &mut r);
            let z = s.perturbation.base_noise(data.len(), &mut r);
            let delta = s.perturbation.transform(z.view());
            let perm = derangement(data.len(), &mut r).unwrap();
            let (_, g) = s.encoder_objective(data.view(), &data.labels, delta.view(), &perm).unwrap();
            let num = central_diff(
                |p| {
                    let mut t = s.clone();
                    t.encoder.set_params(p).unwrap();
                    t.encoder_objective(data.view(), &data.labels, delta.view(), &perm).unwrap().0
                },
                s.encoder.params(),
                STEP,
            );
            check("dra encoder", &g, &num, &mut failures);
            let (_, g) = s.perturbation_objective(data.view(), &data.labels, z.view()).unwrap();
            let num = central_diff(
                |p| {
                    let mut t = s.clone();
                    t.perturbation.set_flat(p).unwrap();
                    t.perturbation_objective(data.view(), &data.labels, z.view()).unwrap().0
                },
                &s.perturbation.flat(),
                STEP,
            );
            check("dra perturbation", &g, &num, &mut failures);
        }

        // critic scores of the JSD objective
        let k = r.random_range(1..6);
        let pos: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
        let neg: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
        let (gp, gn) = jsd_score_grads(&pos, &neg);
        let both: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        let num = central_diff(|v| jsd_mi_objective(&v[..k], &v[k..]).unwrap(), &both, STEP);
        check("jsd scores", &[gp, gn].concat(), &num, &mut failures);

        // dp-sgd split model, per-sample loss
        let arch = random_arch(&mut r);
        let mut init = rng::from_seed(inst);
        let model = SplitModel {
            encoder: Mlp::new(arch.encoder_spec(d), &mut init).unwrap(),
            head: Mlp::new(arch.head_spec(arch.rep_dim, classes), &mut init).unwrap(),
        };
        let one = random_data(1, d, classes, &mut r);
        let g = model.per_sample_grads(one.view(), &one.labels).unwrap().remove(0);
        let ne = model.encoder.params().len();
        let all: Vec<f64> = model.encoder.params().iter().chain(model.head.params()).copied().collect();
        let num = central_diff(
            |p| {
                let mut t = model.clone();
                t.encoder.set_params(&p[..ne]).unwrap();
                t.head.set_params(&p[ne..]).unwrap();
                let rep = t.encoder.forward_batch(one.view()).unwrap();
                let logits = t.head.forward_batch(rep.view()).unwrap();
                softmax_cross_entropy(logits.view(), &one.labels).unwrap().0
            },
            &all,
            STEP,
        );
        check("dp-sgd per-sample", &g, &num, &mut failures);
        checked += 1;
    }
    let pass = failures.is_empty();
    line(
        8,
        "gradient checks",
        pass,
        format!("{checked} random instances, rtol {RTOL}: {}", if pass { "all match".to_string() } else { failures.join("; ") }),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------

fn small_mia_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(DefenseKind::Mia);
    cfg.game.rounds = 20;
    cfg.data.mia.n_members = 120;
    cfg.data.mia.n_nonmembers = 120;
    cfg.data.mia.n_test = 120;
    cfg.attack.fit.epochs = 10;
    cfg
}

#[test]
fn criterion_09_structural_invariants() {
    let mut r = rng::from_seed(9);
    let mut notes = Vec::new();

    let mut bound_ok = true;
    for family in [PerturbationFamily::GaussianTanh, PerturbationFamily::Uniform] {
        let mut p = PerturbationParams::new(4, r.random_range(0.1..2.0), family).unwrap();
        p.mu = (0..4).map(|_| r.random_range(-3.0..3.0)).collect();
        p.log_sigma = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        let z = p.base_noise(25_000, &mut r);
        let delta = p.transform(z.view());
        bound_ok &= delta.iter().all(|v| v.abs() <= p.epsilon);
    }
    notes.push(format!("|delta| <= eps over 2x10^5 draws {bound_ok}"));

    let mut roc_ok = true;
    for _ in 0..300 {
        let n = r.random_range(2..60);
        let scores: Vec<f64> = (0..n).map(|_| (r.random_range(0..8) as f64) * r.random_range(0.5..1.0)).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let c = roc_and_tpr(&scores, &labels, &[0.01, 0.1, 0.5]).unwrap();
        let pts = &c.points;
        roc_ok &= pts.first() == Some(&(0.0, 0.0)) && pts.last() == Some(&(1.0, 1.0));
        roc_ok &= pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
    }
    notes.push(format!("ROC monotone and anchored on 300 cases {roc_ok}"));

    let reps: Vec<Representation> = (0..12)
        .map(|i| Representation::new((0..5).map(|_| r.random_range(-1.0..1.0)).collect(), RepSource::Sample(i)).unwrap())
        .collect();
    let mut perm_ok = true;
    for mode in [AggregatorMode::Mean, AggregatorMode::Max] {
        let base = aggregate(&reps, mode).unwrap().values;
        for _ in 0..100 {
            let mut shuffled = reps.clone();
            shuffled.shuffle(&mut r);
            let v = aggregate(&shuffled, mode).unwrap().values;
            perm_ok &= v.iter().zip(&base).all(|(a, b)| (a - b).abs() <= 1e-12);
        }
    }
    notes.push(format!("aggregation invariant over 100 permutations {perm_ok}"));

    let mut clip_ok = true;
    for _ in 0..500 {
        let c = r.random_range(0.01..5.0);
        let scale = 10f64.powf(r.random_range(-3.0..3.0));
        let g: Vec<f64> = (0..r.random_range(1..40)).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect();
        let norm = clip(&g, c).iter().map(|v| v * v).sum::<f64>().sqrt();
        clip_ok &= norm <= c * (1.0 + 1e-12);
    }
    notes.push(format!("clipped norms <= C on 500 gradients {clip_ok}"));

    let cfg = small_mia_config();
    let p = point(0.5, 0.0, 0.0);
    let (a, _) = run_point(&cfg, 3, p, FULL);
    let (b, _) = run_point(&cfg, 3, p, FULL);
    let (ma, mb) = (a.metrics(), b.metrics());
    let replay_ok = a.error.is_none()
        && ma.len() == mb.len()
        && !ma.is_empty()
        && ma.iter().zip(&mb).all(|(x, y)| x.0 == y.0 && (x.1 - y.1).abs() <= 1e-6);
    let identical = ma == mb;
    notes.push(format!("seed replay of {} metrics {replay_ok} (bit-identical {identical})", ma.len()));

    let pass = bound_ok && roc_ok && perm_ok && clip_ok && replay_ok;
    line(9, "structural invariants", pass, notes.join(", "));
    assert!(pass);
}

#[test]
fn criterion_10_advreg_identity() {
    let mut worst = 0.0f64;
    for seed in 0..10u64 {
        let mut r = rng::from_seed(seed);
        let d = r.random_range(2..6);
        let classes = r.random_range(2..5);
        let arch = random_arch(&mut r);
        let s = MiaGameState::advreg(d, classes, arch, GameConfig::default().with_seed(seed)).unwrap();
        let d1 = random_data(r.random_range(3..20), d, classes, &mut r);
        let d0 = random_data(r.random_range(3..20), d, classes, &mut r);
        let (l1, l2) = mia_losses(&s, &d1, &d0).unwrap();
        for lambda in [0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            let v = advreg_mode_loss(&s, &d1, &d0, lambda).unwrap();
            worst = worst.max((v - (lambda * l1 - (1.0 - lambda) * l2)).abs());
        }
    }
    let pass = worst <= 1e-10;
    line(
        10,
        "AdvReg identity",
        pass,
        format!("max |advreg - surrogate| {worst:.2e} over 10 random parameter sets x 6 lambdas"),
    );
    assert!(pass);
}
