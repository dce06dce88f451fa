//! Experiment orchestration: data, defense training, frozen-encoder attacks,
//! utility, bounds, persistence.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::attacks::{
    membership_report, shadow_lira_with_reference, train_dra_attacker_on_pairs, train_mia_attacker_on_reps,
    train_pia_attacker, AttackConfig, AttackKind, AttackReport, ReconReport,
};
use crate::bounds::{
    conditional_entropy_from_probs, delta_constants, delta_y, dra_advantage, empirical_advantage, lipschitz_upper,
    BoundReport, EntropyEstimator, LeakageBoundResult, ThreatVariant, TradeoffInputs,
};
use crate::data::{load_csv, synth_dra_task, synth_mia_task, synth_pia_bags, CsvSchema, DraTask, PiaTask};
use crate::defense::{sample_bags, train_dra_defense, train_mia_defense, train_pia_defense, RoundLosses};
use crate::defense::mia::train_advreg;
use crate::domain::{make_split, Dataset, SplitPlan};
use crate::dp::{dp_encoder_noise, train_dpsgd, DpConfig, SplitModel};
use crate::error::{invalid, Error, Result};
use crate::nn::{argmax_rows, fit_classifier, predict_proba, Mlp};
use crate::rng::{self, streams};

use super::checkpoint::{Checkpoint, MEMBERSHIP_HEAD, PROPERTY_HEAD, UTILITY_HEAD};
use super::config::{DefenseKind, ExperimentConfig, SweepPoint};
use super::record::{append_records, NamedAttack, ResultsRecord, Stage, StageError};

pub const MEMBERSHIP: &str = "membership";
pub const ADVERSARY_HEAD: &str = "adversary-head";
pub const LIRA: &str = "lira";
pub const PROPERTY_MATCHED: &str = "property-matched";
pub const PROPERTY_SUBSTITUTE: &str = "property-substitute";

pub const RECORDS_FILE: &str = "records.jsonl";

/// Members, non-members and a task test set, with the attacker's split over
/// `[members..., non-members...]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MembershipData {
    pub members: Dataset,
    pub nonmembers: Dataset,
    pub utility_test: Dataset,
    pub plan: SplitPlan,
}

impl MembershipData {
    fn all(&self) -> Result<Dataset> {
        self.members.concat(&self.nonmembers)
    }

    fn membership_bits(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| (i < self.members.len()) as usize).collect()
    }

    /// Attack-train rows (task labels kept) and their membership bits.
    pub fn attack_train(&self) -> Result<(Dataset, Vec<usize>)> {
        Ok((self.all()?.subset(&self.plan.attack_train)?, self.membership_bits(&self.plan.attack_train)))
    }

    pub fn attack_test(&self) -> Result<(Dataset, Vec<usize>)> {
        Ok((self.all()?.subset(&self.plan.attack_test)?, self.membership_bits(&self.plan.attack_test)))
    }

    /// Non-members known to the defender: those in the attack-train split.
    pub fn reference_nonmembers(&self) -> Result<Dataset> {
        let n = self.members.len();
        let idx: Vec<usize> = self.plan.attack_train.iter().copied().filter(|&i| i >= n).collect();
        self.all()?.subset(&idx)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TaskData {
    Membership(MembershipData),
    Property(PiaTask),
    Reconstruction(DraTask),
}

impl TaskData {
    pub fn membership(&self) -> Result<&MembershipData> {
        match self {
            Self::Membership(m) => Ok(m),
            _ => Err(invalid("membership data expected")),
        }
    }

    /// Samples for representation export: members and non-members with the
    /// membership bit as attribute, the property test pool, or the
    /// reconstruction test set.
    pub fn export_set(&self) -> Result<Dataset> {
        match self {
            Self::Membership(m) => {
                let mut all = m.all()?;
                let mut u = vec![1; m.members.len()];
                u.resize(all.len(), 0);
                all.attributes = Some(u);
                Ok(all)
            }
            Self::Property(p) => Ok(p.test_pool.clone()),
            Self::Reconstruction(d) => Ok(d.test.clone()),
        }
    }
}

fn csv_schema(csv: &super::config::CsvSource) -> CsvSchema {
    let s = CsvSchema::new(csv.label_column.clone());
    match &csv.attribute_column {
        Some(a) => s.with_attribute(a.clone()),
        None => s,
    }
}

/// Build the data of one job. Synthetic specs take `seed`.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<TaskData> {
    match cfg.defense {
        DefenseKind::Pia => {
            let spec = crate::data::PiaSynthSpec {
                seed,
                ..cfg.data.pia.clone()
            };
            match &cfg.data.csv {
                None => Ok(TaskData::Property(synth_pia_bags(&spec)?)),
                Some(csv) => {
                    let schema = csv_schema(csv);
                    let train_pool = load_csv(&csv.train, &schema)?;
                    let test_pool = load_csv(&csv.test, &schema)?;
                    let bag_seed = rng::substream_seed(seed, "bags");
                    let train_bags = sample_bags(&train_pool, &spec.ratio_grid, spec.bag_size, spec.n_train_bags, bag_seed)?;
                    let test_bags = sample_bags(&test_pool, &spec.ratio_grid, spec.bag_size, spec.n_test_bags, bag_seed ^ 1)?;
                    Ok(TaskData::Property(PiaTask {
                        utility_test: test_pool.clone(),
                        train_pool,
                        test_pool,
                        train_bags,
                        test_bags,
                        ratio_grid: spec.ratio_grid.clone(),
                    }))
                }
            }
        }
        DefenseKind::Dra => match &cfg.data.csv {
            None => Ok(TaskData::Reconstruction(synth_dra_task(&crate::data::DraSynthSpec {
                seed,
                ..cfg.data.dra.clone()
            })?)),
            Some(csv) => {
                let schema = csv_schema(csv);
                Ok(TaskData::Reconstruction(DraTask {
                    train: load_csv(&csv.train, &schema)?,
                    test: load_csv(&csv.test, &schema)?,
                    shape: cfg.data.dra.grid,
                }))
            }
        },
        _ => {
            let (members, nonmembers, utility_test) = match &cfg.data.csv {
                None => {
                    let t = synth_mia_task(&crate::data::MiaSynthSpec {
                        seed,
                        ..cfg.data.mia.clone()
                    })?;
                    (t.members, t.nonmembers, t.utility_test)
                }
                Some(csv) => {
                    let schema = csv_schema(csv);
                    let path = csv
                        .nonmembers
                        .as_ref()
                        .ok_or_else(|| Error::Config("data.csv.nonmembers is required".into()))?;
                    (load_csv(&csv.train, &schema)?, load_csv(path, &schema)?, load_csv(&csv.test, &schema)?)
                }
            };
            let plan = make_split(members.len(), nonmembers.len(), cfg.eval.attack_frac, seed)?;
            Ok(TaskData::Membership(MembershipData {
                members,
                nonmembers,
                utility_test,
                plan,
            }))
        }
    }
}

/// Train the defense of one job and freeze it.
pub fn train_point(cfg: &ExperimentConfig, data: &TaskData, seed: u64, point: SweepPoint) -> Result<(Checkpoint, Vec<RoundLosses>)> {
    let game = cfg.game_for(seed, &point);
    match cfg.defense {
        DefenseKind::Mia | DefenseKind::Advreg | DefenseKind::None => {
            let m = data.membership()?;
            let d0 = m.reference_nonmembers()?;
            let st = if cfg.defense == DefenseKind::Advreg {
                train_advreg(&m.members, &d0, &cfg.arch, &game)?
            } else {
                train_mia_defense(&m.members, &d0, &cfg.arch, &game)?
            };
            Ok((Checkpoint::from_mia(cfg.defense, &st, point), st.history))
        }
        DefenseKind::Pia => {
            let TaskData::Property(t) = data else {
                return Err(invalid("property data expected"));
            };
            let st = train_pia_defense(&t.train_bags, &t.ratio_grid, &cfg.arch, &game, cfg.eval.aggregator)?;
            Ok((Checkpoint::from_pia(&st, point), st.history))
        }
        DefenseKind::Dra => {
            let TaskData::Reconstruction(t) = data else {
                return Err(invalid("reconstruction data expected"));
            };
            let st = train_dra_defense(&t.train, &cfg.arch, &game, cfg.eval.family)?;
            Ok((Checkpoint::from_dra(&st, point), st.history))
        }
        DefenseKind::Dpsgd => {
            let m = data.membership()?;
            let mut init = rng::substream(seed, streams::INIT);
            let mut model = SplitModel {
                encoder: Mlp::new(cfg.arch.encoder_spec(m.members.dim()), &mut init)?,
                head: Mlp::new(cfg.arch.head_spec(cfg.arch.rep_dim, m.members.n_classes), &mut init)?,
            };
            let dp = DpConfig {
                noise_sigma: point.sigma,
                ..cfg.dp.clone()
            };
            let mut noise = rng::substream(seed, streams::NOISE);
            train_dpsgd(&mut model, m.members.view(), &m.members.labels, &dp, &mut noise)?;
            Ok((Checkpoint::from_split(cfg.defense, &model, seed, point, 0.0), Vec::new()))
        }
        DefenseKind::DpEncoder => {
            let m = data.membership()?;
            let d0 = m.reference_nonmembers()?;
            let st = train_mia_defense(&m.members, &d0, &cfg.arch, &game.clone().with_lambda(0.0))?;
            let mut noise = rng::substream(seed, streams::NOISE);
            let reps = dp_encoder_noise(st.represent(m.members.view())?.view(), point.sigma, &mut noise)?;
            let mut r = rng::substream(seed, "head");
            let mut head = Mlp::new(cfg.arch.head_spec(cfg.arch.rep_dim, m.members.n_classes), &mut r)?;
            fit_classifier(&mut head, reps.view(), &m.members.labels, &cfg.eval.head_fit, &mut r)?;
            let model = SplitModel {
                encoder: st.encoder.clone(),
                head,
            };
            Ok((Checkpoint::from_split(cfg.defense, &model, seed, point, point.sigma), st.history))
        }
    }
}

/// Task accuracy of the released representations on the held-out test set.
pub fn utility_of(cfg: &ExperimentConfig, ckpt: &Checkpoint, data: &TaskData) -> Result<f64> {
    let test = match data {
        TaskData::Membership(m) => &m.utility_test,
        TaskData::Property(p) => &p.utility_test,
        TaskData::Reconstruction(d) => &d.test,
    };
    let draws = if ckpt.perturbation.is_some() { cfg.eval.utility_draws.max(1) } else { 1 };
    let mut r = rng::substream(ckpt.seed, "eval");
    let mut total = 0.0;
    for _ in 0..draws {
        let pred = ckpt.predict(test.view(), &mut r)?;
        total += pred.iter().zip(&test.labels).filter(|(p, y)| p == y).count() as f64 / test.len() as f64;
    }
    Ok(total / draws as f64)
}

/// What the bound stage needs from the attack stage.
struct Evidence {
    probs: Array2<f64>,
    u: Vec<usize>,
    variant: ThreatVariant,
    task_y: Vec<usize>,
    reps: Array2<f64>,
}

fn max_row_norm(r: ArrayView2<f64>) -> f64 {
    r.axis_iter(Axis(0))
        .map(|row| row.dot(&row).sqrt())
        .fold(0.0, f64::max)
}

fn held_out(name: &str, report: AttackReport) -> NamedAttack {
    NamedAttack {
        name: name.to_string(),
        held_out: true,
        report,
    }
}

fn attack_cfg(cfg: &ExperimentConfig, seed: u64) -> AttackConfig {
    AttackConfig {
        seed,
        ..cfg.attack.clone()
    }
}

/// Attacks against a frozen defense. Returns the attack reports, the
/// reconstruction report and the evidence used by the bounds.
fn attack_point(
    cfg: &ExperimentConfig,
    ckpt: &Checkpoint,
    data: &TaskData,
) -> Result<(Vec<NamedAttack>, Option<ReconReport>, Option<Evidence>)> {
    let seed = ckpt.seed;
    let acfg = attack_cfg(cfg, seed);
    let enc = ckpt.encoder()?;
    let mut attacks = Vec::new();
    match data {
        TaskData::Membership(_) if ckpt.kind == DefenseKind::None => Ok((attacks, None, None)),
        TaskData::Membership(m) => {
            let (at, u_tr) = m.attack_train()?;
            let (ate, u_te) = m.attack_test()?;
            let mut noise = rng::substream(seed, streams::NOISE);
            let rtr = ckpt.publish(at.view(), &mut noise)?;
            let rte = ckpt.publish(ate.view(), &mut noise)?;
            let spec = cfg.arch.head_spec(enc.output_dim(), 2);
            let attacker = train_mia_attacker_on_reps(rtr.view(), &u_tr, &spec, &acfg)?;
            attacks.push(held_out(MEMBERSHIP, membership_report(&attacker, rte.view(), &u_te)?));
            if let Some(head) = ckpt.network(MEMBERSHIP_HEAD) {
                attacks.push(NamedAttack {
                    name: ADVERSARY_HEAD.to_string(),
                    held_out: false,
                    report: membership_report(head, rte.view(), &u_te)?,
                });
                if cfg.eval.lira {
                    attacks.push(held_out(LIRA, lira_audit(cfg, ckpt, m, head)?));
                }
            }
            let probs = predict_proba(&attacker, rte.view())?;
            let evidence = Evidence {
                probs,
                u: u_te,
                variant: ThreatVariant::Mia,
                task_y: ate.labels.clone(),
                reps: rte,
            };
            Ok((attacks, None, Some(evidence)))
        }
        TaskData::Property(t) => {
            let mode = ckpt.aggregator.unwrap_or(cfg.eval.aggregator);
            let k = t.ratio_grid.len();
            let (attacker, matched) = train_pia_attacker(enc, &t.train_bags, &t.test_bags, k, mode, &cfg.arch, &acfg)?;
            attacks.push(held_out(PROPERTY_MATCHED, matched));
            if cfg.eval.substitute_attack {
                let (_, sub) = train_pia_attacker(enc, &t.train_bags, &t.test_bags, k, mode.other(), &cfg.arch, &acfg)?;
                attacks.push(held_out(PROPERTY_SUBSTITUTE, sub));
            }
            let feats = crate::attacks::bag_features(enc, &t.test_bags, mode)?;
            let u: Vec<usize> = t.test_bags.iter().map(|b| b.property).collect();
            if let Some(head) = ckpt.network(PROPERTY_HEAD) {
                attacks.push(held_out(ADVERSARY_HEAD, property_report(head, feats.view(), &u, k)?));
            }
            let probs = predict_proba(&attacker, feats.view())?;
            let evidence = Evidence {
                probs,
                u,
                variant: ThreatVariant::Pia,
                task_y: Vec::new(),
                reps: feats,
            };
            Ok((attacks, None, Some(evidence)))
        }
        TaskData::Reconstruction(d) => {
            let mut noise = rng::substream(seed, streams::NOISE);
            let rtr = ckpt.publish(d.train.view(), &mut noise)?;
            let rte = ckpt.publish(d.test.view(), &mut noise)?;
            let (_, recon) = train_dra_attacker_on_pairs(
                rtr.view(),
                d.train.view(),
                rte.view(),
                d.test.view(),
                &cfg.eval.decoder_hidden,
                d.shape,
                &acfg,
            )?;
            let evidence = Evidence {
                probs: Array2::zeros((0, 0)),
                u: Vec::new(),
                variant: ThreatVariant::Dra,
                task_y: d.test.labels.clone(),
                reps: rte,
            };
            Ok((attacks, Some(recon), Some(evidence)))
        }
    }
}

fn property_report(head: &Mlp, feats: ArrayView2<f64>, u: &[usize], k: usize) -> Result<AttackReport> {
    let pred = argmax_rows(head.forward_batch(feats)?.view());
    let per_class = (0..k)
        .map(|c| {
            let idx: Vec<usize> = (0..u.len()).filter(|&i| u[i] == c).collect();
            if idx.is_empty() {
                0.0
            } else {
                idx.iter().filter(|&&i| pred[i] == c).count() as f64 / idx.len() as f64
            }
        })
        .collect();
    Ok(AttackReport {
        kind: AttackKind::Property,
        accuracy: pred.iter().zip(u).filter(|(p, y)| p == y).count() as f64 / u.len() as f64,
        roc: Vec::new(),
        tpr_at: Vec::new(),
        auc: None,
        per_class,
        chance: 1.0 / k as f64,
    })
}

/// Shadow-model LiRA against the defense's membership head. The pool holds
/// all members and `lira_fresh` unseen test points; shadows also train on
/// the defender's reference non-members.
fn lira_audit(cfg: &ExperimentConfig, ckpt: &Checkpoint, m: &MembershipData, head: &Mlp) -> Result<AttackReport> {
    let fresh_n = cfg.eval.lira_fresh.min(m.utility_test.len());
    let fresh = m.utility_test.subset(&(0..fresh_n).collect::<Vec<_>>())?;
    let pool = m.members.concat(&fresh)?;
    let enc = ckpt.encoder()?;
    let reps = enc.forward_batch(pool.view())?;
    let mut u = vec![1; m.members.len()];
    u.resize(pool.len(), 0);
    let ones = vec![1; pool.len()];
    let d0 = m.reference_nonmembers()?;
    let r0 = enc.forward_batch(d0.view())?;
    let zeros = vec![0; d0.len()];
    let lcfg = crate::attacks::LiraConfig {
        seed: ckpt.seed,
        ..cfg.lira.clone()
    };
    shadow_lira_with_reference(head, reps.view(), &ones, &u, Some((r0.view(), &zeros)), head.spec(), &lcfg)
}

fn bounds_from(ckpt: &Checkpoint, ev: &Evidence, recon: Option<&ReconReport>) -> Result<BoundReport> {
    let mut report = BoundReport {
        leakage: Vec::new(),
        tradeoff: None,
        dra_error: None,
        advantage: None,
    };
    let c_l = ckpt.network(UTILITY_HEAD).map(lipschitz_upper).unwrap_or(1.0);
    let r = max_row_norm(ev.reps.view());
    match ev.variant {
        ThreatVariant::Mia | ThreatVariant::Pia => {
            let (plug, ce) = conditional_entropy_from_probs(ev.probs.view(), &ev.u)?;
            report.leakage.push(LeakageBoundResult::new(plug, EntropyEstimator::PlugIn)?);
            report.leakage.push(LeakageBoundResult::new(ce, EntropyEstimator::CrossEntropy)?);
            let adv = empirical_advantage(&argmax_rows(ev.probs.view()), &ev.u)?;
            report.advantage = Some(adv);
            if ev.variant == ThreatVariant::Mia {
                if let Ok((d, _)) = delta_constants(&ev.task_y, &ev.u) {
                    let inputs = TradeoffInputs::new(d, r, c_l, adv)?;
                    report.tradeoff = Some((inputs, crate::bounds::tradeoff_bound(&inputs, ev.variant)));
                }
            }
        }
        ThreatVariant::Dra => {
            let recon = recon.ok_or_else(|| invalid("reconstruction report missing"))?;
            let d = ckpt.input_dim()? as f64;
            let errors: Vec<f64> = recon.per_sample_mse.iter().map(|m| (m * d).sqrt()).collect();
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            let eta = sorted[sorted.len() / 2];
            if let Ok(adv) = dra_advantage(&errors, &ev.task_y, eta) {
                report.advantage = Some(adv);
                if let Ok(dy) = delta_y(&ev.task_y) {
                    let inputs = TradeoffInputs::new(dy, r, c_l, adv)?;
                    report.tradeoff = Some((inputs, crate::bounds::tradeoff_bound(&inputs, ev.variant)));
                }
            }
        }
    }
    Ok(report)
}

/// Recompute every bound of a stored report from its recorded inputs.
pub fn recompute_bounds(report: &BoundReport, variant: ThreatVariant) -> Result<BoundReport> {
    let leakage = report
        .leakage
        .iter()
        .map(|l| LeakageBoundResult::new(l.h_cond_bits, l.estimator))
        .collect::<Result<Vec<_>>>()?;
    let tradeoff = report
        .tradeoff
        .map(|(i, _)| (i, crate::bounds::tradeoff_bound(&i, variant)));
    Ok(BoundReport {
        leakage,
        tradeoff,
        dra_error: report.dra_error,
        advantage: report.advantage,
    })
}

pub fn threat_of(kind: DefenseKind) -> ThreatVariant {
    match kind {
        DefenseKind::Pia => ThreatVariant::Pia,
        DefenseKind::Dra => ThreatVariant::Dra,
        _ => ThreatVariant::Mia,
    }
}

fn tag<T>(stage: Stage, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|e| StageError {
        stage,
        message: e.to_string(),
    })
}

/// Utility, attacks and bounds for a frozen defense, filled into `record`.
pub fn evaluate_into(cfg: &ExperimentConfig, ckpt: &Checkpoint, data: &TaskData, record: &mut ResultsRecord) {
    let res = (|| -> std::result::Result<(), StageError> {
        record.utility = Some(tag(Stage::Utility, utility_of(cfg, ckpt, data))?);
        let (attacks, recon, evidence) = tag(Stage::Attack, attack_point(cfg, ckpt, data))?;
        record.attacks = attacks;
        record.recon = recon;
        if let Some(ev) = evidence {
            record.bounds = Some(tag(Stage::Bounds, bounds_from(ckpt, &ev, record.recon.as_ref()))?);
        }
        Ok(())
    })();
    if let Err(e) = res {
        record.error = Some(e);
    }
}

/// Re-evaluate a saved checkpoint; the data are rebuilt from the config and
/// the checkpoint's seed.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> Result<ResultsRecord> {
    if ckpt.kind != cfg.defense {
        return Err(Error::Config(format!(
            "checkpoint holds a `{}` defense, config asks for `{}`",
            ckpt.kind, cfg.defense
        )));
    }
    let start = Instant::now();
    let mut record = ResultsRecord::new(cfg, ckpt.seed, ckpt.point);
    match prepare_data(cfg, ckpt.seed) {
        Ok(data) => evaluate_into(cfg, ckpt, &data, &mut record),
        Err(e) => {
            record.error = Some(StageError {
                stage: Stage::Data,
                message: e.to_string(),
            })
        }
    }
    record.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Options of a single job.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JobOptions {
    /// Skip the attack and bound stages.
    pub train_only: bool,
}

/// Run one (seed, sweep point) job without touching the disk. Stage failures
/// are recorded in the returned record; the checkpoint is present whenever
/// training succeeded.
pub fn run_point(cfg: &ExperimentConfig, seed: u64, point: SweepPoint, opts: JobOptions) -> (ResultsRecord, Option<Checkpoint>) {
    let start = Instant::now();
    let mut record = ResultsRecord::new(cfg, seed, point);
    let mut ckpt = None;
    match prepare_data(cfg, seed) {
        Err(e) => {
            record.error = Some(StageError {
                stage: Stage::Data,
                message: e.to_string(),
            })
        }
        Ok(data) => match train_point(cfg, &data, seed, point) {
            Err(e) => {
                record.error = Some(StageError {
                    stage: Stage::Train,
                    message: e.to_string(),
                })
            }
            Ok((c, losses)) => {
                record.losses = losses;
                if opts.train_only {
                    match utility_of(cfg, &c, &data) {
                        Ok(u) => record.utility = Some(u),
                        Err(e) => {
                            record.error = Some(StageError {
                                stage: Stage::Utility,
                                message: e.to_string(),
                            })
                        }
                    }
                } else {
                    evaluate_into(cfg, &c, &data, &mut record);
                }
                ckpt = Some(c);
            }
        },
    }
    record.wall_clock_s = start.elapsed().as_secs_f64();
    (record, ckpt)
}

pub fn checkpoint_path(dir: &Path, kind: DefenseKind, seed: u64, point: &SweepPoint) -> PathBuf {
    dir.join("checkpoints").join(format!(
        "{kind}-seed{seed}-lam{}-eps{}-sig{}.ckpt",
        point.lambda, point.epsilon, point.sigma
    ))
}

/// Every (seed, sweep point) job of `cfg`, run with at most `cfg.workers`
/// concurrent jobs. Each record is appended to `output_dir/records.jsonl` as
/// soon as its job ends and checkpoints go to `output_dir/checkpoints/`.
/// Records come back in (seed, sweep point) order.
pub fn run_with(cfg: &ExperimentConfig, opts: JobOptions) -> Result<Vec<ResultsRecord>> {
    cfg.validate()?;
    let jobs: Vec<(u64, SweepPoint)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.sweep_points().into_iter().map(move |p| (s, p)))
        .collect();
    let out = cfg.output_dir.clone();
    std::fs::create_dir_all(&out)?;
    let records_path = out.join(RECORDS_FILE);
    let lock = Mutex::new(());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let records: Vec<ResultsRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(seed, point)| {
                let (mut record, ckpt) = run_point(cfg, seed, point, opts);
                if let Some(c) = ckpt {
                    let path = checkpoint_path(&out, cfg.defense, seed, &point);
                    match c.save(&path) {
                        Ok(()) => record.checkpoint = Some(path.display().to_string()),
                        Err(e) if record.error.is_none() => {
                            record.error = Some(StageError {
                                stage: Stage::Checkpoint,
                                message: e.to_string(),
                            })
                        }
                        Err(_) => {}
                    }
                }
                let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
                if let Err(e) = append_records(&records_path, std::slice::from_ref(&record)) {
                    if record.error.is_none() {
                        record.error = Some(StageError {
                            stage: Stage::Persist,
                            message: e.to_string(),
                        });
                    }
                }
                record
            })
            .collect()
    });
    Ok(records)
}

/// Full pipeline over every job of `cfg`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultsRecord>> {
    run_with(cfg, JobOptions { train_only: false })
}

/// Alias of [`run`]: a sweep is a run over a multi-point grid.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultsRecord>> {
    run(cfg)
}

/// Write `path` as CSV: representation coordinates `r0..`, then `label` and
/// `attribute` (empty when the sample has none). Returns the number of rows.
pub fn export_representations(ckpt: &Checkpoint, data: &Dataset, path: impl AsRef<Path>, seed: u64) -> Result<usize> {
    let mut rng = rng::substream(seed, streams::NOISE);
    let reps = ckpt.publish(data.view(), &mut rng)?;
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..reps.ncols()).map(|j| format!("r{j}")).collect();
    header.push("label".into());
    header.push("attribute".into());
    w.write_record(&header)?;
    for (i, row) in reps.axis_iter(Axis(0)).enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(data.labels[i].to_string());
        rec.push(data.attributes.as_ref().map(|a| a[i].to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(reps.nrows())
}
