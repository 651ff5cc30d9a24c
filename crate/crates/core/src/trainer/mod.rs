//! Adversarial training with warm start and periodic coreset selection.

mod checkpoint;

use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{self, AttackConfig};
use crate::error::{Error, Result};
use crate::features::{adv_grad_features, batch_aggregate, ObjectiveKind};
use crate::model::{self, Activation, Dataset, ModelParams, Target};
use crate::seeding::{derive, stream, tag};
use crate::solvers::{self, hash64, Budget, Coreset, Provenance, SolverConfig};
use crate::verifier::{gamma_error, GammaRecord};

pub use checkpoint::Checkpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    /// The rate is multiplied by `factor` after each of these epochs.
    pub decay_epochs: Vec<usize>,
    pub factor: f64,
}

impl LrSchedule {
    pub fn constant(rate: f64) -> Self {
        LrSchedule { initial: rate, decay_epochs: Vec::new(), factor: 1.0 }
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.initial * self.factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warm_start: f64,
    pub period: usize,
    pub fraction: f64,
    pub batch_size: usize,
    pub selection_batch_size: usize,
    pub lr: LrSchedule,
    pub weight_decay: f64,
    pub objective: ObjectiveKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub attack: AttackConfig,
    /// Overrides the attack iteration count during selection.
    pub selection_iterations: Option<usize>,
    pub eval_attack: AttackConfig,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    /// The solver's budget is replaced by `fraction` during training.
    pub solver: SolverConfig,
    /// One step per epoch over the whole coreset.
    pub full_batch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            warm_start: 0.5,
            period: 5,
            fraction: 0.5,
            batch_size: 64,
            selection_batch_size: 32,
            lr: LrSchedule::constant(0.1),
            weight_decay: 0.0,
            objective: ObjectiveKind::AdversarialCe,
            hidden: vec![32],
            activation: Activation::Relu,
            attack: AttackConfig::default(),
            selection_iterations: None,
            eval_attack: AttackConfig::default(),
            eval_every: 1,
            solver: SolverConfig::default(),
            full_batch: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.warm_start) {
            return bad(format!("warm_start must lie in [0, 1], got {}", self.warm_start));
        }
        if self.period == 0 {
            return bad("selection period must be >= 1".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("coreset fraction must lie in (0, 1], got {}", self.fraction));
        }
        if self.batch_size == 0 || self.selection_batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if !(self.lr.initial > 0.0 && self.lr.initial.is_finite()) || !(self.lr.factor > 0.0) {
            return bad("learning rate and decay factor must be > 0".into());
        }
        if self.lr.decay_epochs.windows(2).any(|w| w[0] >= w[1]) || self.lr.decay_epochs.last().is_some_and(|&d| d >= self.epochs) {
            return bad("decay epochs must be strictly increasing and below the epoch count".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight decay must be >= 0".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        if self.selection_iterations == Some(0) {
            return bad("selection iterations must be >= 1".into());
        }
        self.objective.validate()?;
        self.attack.validate()?;
        self.eval_attack.validate()?;
        self.solver.validate()?;
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        hash64(format!("{self:?}").as_bytes())
    }

    pub fn layer_sizes(&self, d: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![d];
        sizes.extend(&self.hidden);
        sizes.push(classes);
        sizes
    }

    pub fn selection_attack(&self) -> AttackConfig {
        let mut a = self.attack.clone();
        if let Some(it) = self.selection_iterations {
            a.iterations = it;
        }
        a
    }

    pub fn selection_solver(&self, epoch: usize) -> SolverConfig {
        SolverConfig { budget: Budget::Fraction(self.fraction), seed: derive(self.seed, &[tag::SOLVER, epoch as u64]), ..self.solver.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochPlan {
    Warm,
    Select,
    Reuse,
}

/// Number of leading full-data epochs, `round(κ·E·k)`.
pub fn warm_epochs(cfg: &TrainConfig) -> usize {
    ((cfg.warm_start * cfg.epochs as f64 * cfg.fraction).round() as usize).min(cfg.epochs)
}

/// What epoch `t` (1-based) does.
pub fn epoch_plan(cfg: &TrainConfig, t: usize) -> EpochPlan {
    let warm = warm_epochs(cfg);
    if t <= warm {
        EpochPlan::Warm
    } else if (t - warm - 1) % cfg.period == 0 {
        EpochPlan::Select
    } else {
        EpochPlan::Reuse
    }
}

pub fn init_params(cfg: &TrainConfig, d: usize, classes: usize) -> Result<ModelParams> {
    ModelParams::init(&cfg.layer_sizes(d, classes), cfg.activation, derive(cfg.seed, &[tag::INIT]))
}

pub fn train_attack_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    derive(seed, &[tag::TRAIN_ATTACK, epoch as u64, batch as u64])
}

pub fn shuffle_stream(seed: u64, epoch: usize) -> crate::seeding::Rng {
    stream(seed, &[tag::SHUFFLE, epoch as u64])
}

/// The evaluation attack with its run-independent seed.
pub fn eval_attack(cfg: &TrainConfig) -> AttackConfig {
    cfg.eval_attack.with_seed(derive(cfg.seed, &[tag::EVAL_ATTACK]))
}

/// `θ ← θ − α (g + λ_wd θ)`.
pub fn sgd_step(params: &mut ModelParams, grads: &ModelParams, lr: f64, weight_decay: f64) {
    for (p, g) in params.iter_mut().zip(grads.iter()) {
        *p -= lr * (g + weight_decay * *p);
    }
}

/// Weighted mean objective of a batch under fresh adversarial inputs and its
/// gradient. `row_weights` must sum to one.
pub fn batch_objective(
    params: &ModelParams,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    row_weights: &[f64],
    objective: ObjectiveKind,
    attack: &AttackConfig,
) -> Result<(f64, ModelParams)> {
    let weighted = |losses: &[f64]| losses.iter().zip(row_weights).map(|(l, w)| l * w).sum::<f64>();
    match objective {
        ObjectiveKind::Vanilla => {
            let cache = model::forward(params, x)?;
            let t = Target::Hard(labels);
            let grads = model::backward_weighted(params, &cache, &cache.logit_residual(&t), row_weights)?;
            Ok((weighted(&cache.sample_losses(&t)), grads))
        }
        ObjectiveKind::AdversarialCe => {
            let adv = attacks::pgd_attack(params, x, Target::Hard(labels), attack)?;
            let cache = model::forward(params, adv.x_adv.view())?;
            let t = Target::Hard(labels);
            let grads = model::backward_weighted(params, &cache, &cache.logit_residual(&t), row_weights)?;
            Ok((weighted(&cache.sample_losses(&t)), grads))
        }
        ObjectiveKind::Trades { lambda } => {
            let adv = attacks::trades_inner_max(params, x, attack)?;
            let clean = model::forward(params, x)?;
            let advc = model::forward(params, adv.x_adv.view())?;
            let hard = Target::Hard(labels);
            let soft = Target::Soft(clean.probs.view());
            let losses: Vec<f64> = clean
                .sample_losses(&hard)
                .iter()
                .zip(advc.sample_losses(&soft))
                .map(|(a, b)| a + b / lambda)
                .collect();
            let side = model::target_side_ce_dlogits(clean.probs.view(), advc.log_probs.view());
            let d_clean = clean.logit_residual(&hard) + &(side / lambda);
            let d_adv = advc.logit_residual(&soft) / lambda;
            let mut grads = model::backward_weighted(params, &clean, &d_clean, row_weights)?;
            grads.axpy(1.0, &model::backward_weighted(params, &advc, &d_adv, row_weights)?);
            Ok((weighted(&losses), grads))
        }
    }
}

const EVAL_CHUNK: usize = 256;

/// Clean accuracy and robust accuracy. A sample counts as robust only when it
/// is classified correctly both at the clean point and at the attack output.
pub fn evaluate(params: &ModelParams, data: &Dataset, attack: &AttackConfig) -> Result<(f64, f64)> {
    attack.validate()?;
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyInput("evaluation set is empty".into()));
    }
    let x = data.features();
    let y = data.labels();
    let chunks: Vec<(usize, usize)> = (0..n).step_by(EVAL_CHUNK).map(|s| (s, (s + EVAL_CHUNK).min(n))).collect();
    let counts = chunks
        .par_iter()
        .enumerate()
        .map(|(c, &(a, b))| {
            let xc = x.slice(s![a..b, ..]);
            let yc = &y[a..b];
            let clean = model::predict(params, xc)?;
            let cfg = attack.with_seed(derive(attack.seed, &[c as u64]));
            let adv = attacks::pgd_attack(params, xc, Target::Hard(yc), &cfg)?;
            let robust = model::predict(params, adv.x_adv.view())?;
            let mut counts = (0usize, 0usize);
            for i in 0..yc.len() {
                if clean[i] == yc[i] {
                    counts.0 += 1;
                    if robust[i] == yc[i] {
                        counts.1 += 1;
                    }
                }
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>>>()?;
    let (c, r) = counts.iter().fold((0, 0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    Ok((c as f64 / n as f64, r as f64 / n as f64))
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Sample-level coreset.
    pub coreset: Coreset,
    /// Γ of the previous coreset (or of the empty set) at the current parameters.
    pub gamma_before: f64,
    pub gamma_after: f64,
    pub units: usize,
}

/// Regenerates adversarial gradient features at the current parameters,
/// groups them into batches and runs the solver.
pub fn select_coreset(params: &ModelParams, data: &Dataset, cfg: &TrainConfig, epoch: usize, previous: Option<&Coreset>) -> Result<Selection> {
    let attack = cfg.selection_attack().with_seed(derive(cfg.seed, &[tag::SELECT_ATTACK, epoch as u64]));
    let features = adv_grad_features(params, data, cfg.objective, &attack)?;
    let gamma_before = match previous {
        Some(c) => gamma_error(&features, c)?,
        None => model::norm2(features.total().as_slice().expect("contiguous")),
    };
    let units = batch_aggregate(&features, cfg.selection_batch_size, derive(cfg.seed, &[tag::SELECT_BATCHES, epoch as u64]))?;
    let solver = cfg.selection_solver(epoch);
    let unit_coreset = if cfg.fraction >= 1.0 {
        Coreset::full(units.units(), Provenance { solver: solver.method.name().into(), config_hash: solver.hash(), epoch })
    } else {
        solvers::select(&units, &solver, epoch)?
    };
    let coreset = unit_coreset.expand(&units.index_map)?;
    let gamma_after = gamma_error(&features, &coreset)?;
    Ok(Selection { coreset, gamma_before, gamma_after, units: units.units() })
}

/// One pass over the shuffled coreset with weighted mini-batch steps.
/// Returns the weighted mean training loss.
pub fn weighted_sgd_epoch(params: &mut ModelParams, data: &Dataset, coreset: &Coreset, cfg: &TrainConfig, epoch: usize, counters: &mut Counters) -> Result<f64> {
    if coreset.is_empty() {
        return Err(Error::EmptyInput("coreset is empty".into()));
    }
    let mut order: Vec<(usize, f64)> = coreset.indices.iter().copied().zip(coreset.weights.iter().copied()).collect();
    order.shuffle(&mut shuffle_stream(cfg.seed, epoch));
    let bs = if cfg.full_batch { order.len() } else { cfg.batch_size };
    let lr = cfg.lr.rate(epoch);
    let x = data.features();
    let (mut loss_sum, mut mass) = (0.0, 0.0);
    for (b, chunk) in order.chunks(bs).enumerate() {
        let total: f64 = chunk.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            continue;
        }
        let idx: Vec<usize> = chunk.iter().map(|p| p.0).collect();
        let w: Vec<f64> = chunk.iter().map(|p| p.1 / total).collect();
        let xb = x.select(Axis(0), &idx);
        let yb: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
        let attack = cfg.attack.with_seed(train_attack_seed(cfg.seed, epoch, b));
        let (loss, grads) = batch_objective(params, xb.view(), &yb, &w, cfg.objective, &attack)
            .map_err(|e| Error::Aborted { epoch, msg: format!("batch {b}: {e}") })?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Aborted { epoch, msg: format!("non-finite loss or gradient in batch {b}") });
        }
        sgd_step(params, &grads, lr, cfg.weight_decay);
        counters.samples_trained += idx.len() as u64;
        loss_sum += loss * total;
        mass += total;
    }
    Ok(if mass > 0.0 { loss_sum / mass } else { 0.0 })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    /// Samples pushed through a training step.
    pub samples_trained: u64,
    /// Samples whose gradient features were computed for selection.
    pub selection_samples: u64,
    pub selections: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timers {
    pub selection: f64,
    pub training: f64,
    pub evaluation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub clean_acc: Option<f64>,
    pub robust_acc: Option<f64>,
    pub gamma: Option<f64>,
    pub epoch_seconds: Option<f64>,
    pub coreset_samples: usize,
}

impl MetricsRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTiming {
    pub epoch: usize,
    pub plan: &'static str,
    pub selection_seconds: f64,
    pub training_seconds: f64,
    pub evaluation_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub records: Vec<MetricsRecord>,
    pub timings: Vec<EpochTiming>,
    pub gamma_trace: Vec<GammaRecord>,
    pub coreset: Option<Coreset>,
    pub counters: Counters,
    pub timers: Timers,
}

/// Hooks and persistence for a training run.
#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Written after every selection event, at the end, and on failure.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    pub on_epoch: Option<&'a mut dyn FnMut(&MetricsRecord, &EpochTiming) -> Result<()>>,
}

pub fn train(cfg: &TrainConfig, data: &Dataset, eval_data: &Dataset) -> Result<TrainOutput> {
    train_with(cfg, data, eval_data, TrainOptions::default())
}

pub fn train_with(cfg: &TrainConfig, data: &Dataset, eval_data: &Dataset, mut opts: TrainOptions<'_>) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.n() == 0 {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if eval_data.d() != data.d() || eval_data.classes() > data.classes() {
        return Err(Error::Dimension("evaluation data does not match training data".into()));
    }
    let (mut params, mut coreset, start) = match opts.resume.take() {
        Some(ck) => {
            ck.check_compatible(cfg, data.d(), data.classes())?;
            (ck.params, ck.coreset, ck.epoch + 1)
        }
        None => (init_params(cfg, data.d(), data.classes())?, None, 1),
    };
    let full = Coreset::full(data.n(), Provenance { solver: "full".into(), config_hash: cfg.hash(), epoch: 0 });
    let evaluator = eval_attack(cfg);
    let mut out = TrainOutput {
        params: params.clone(),
        records: Vec::new(),
        timings: Vec::new(),
        gamma_trace: Vec::new(),
        coreset: None,
        counters: Counters::default(),
        timers: Timers::default(),
    };

    for epoch in start..=cfg.epochs {
        let epoch_start = params.clone();
        let fail = |e: Error, coreset: &Option<Coreset>| -> Error {
            if let Some(path) = &opts.checkpoint {
                let ck = Checkpoint::new(cfg, epoch - 1, epoch_start.clone(), coreset.clone());
                if let Err(w) = ck.save(path) {
                    return Error::Aborted { epoch, msg: format!("{e}; checkpoint also failed: {w}") };
                }
            }
            e
        };
        let plan = epoch_plan(cfg, epoch);
        let t0 = Instant::now();
        let mut gamma = None;
        if plan == EpochPlan::Select {
            let sel = select_coreset(&params, data, cfg, epoch, coreset.as_ref()).map_err(|e| fail(e, &coreset))?;
            out.counters.selection_samples += data.n() as u64;
            out.counters.selections += 1;
            gamma = Some(sel.gamma_after);
            out.gamma_trace.push(GammaRecord {
                epoch,
                gamma: sel.gamma_after,
                gamma_before: sel.gamma_before,
                coreset_size: sel.coreset.len(),
                solver: cfg.solver.method.name().to_string(),
            });
            coreset = Some(sel.coreset);
        }
        let selection_seconds = t0.elapsed().as_secs_f64();
        let active = match plan {
            EpochPlan::Warm => &full,
            _ => coreset.as_ref().expect("a selection precedes reuse"),
        };
        let t1 = Instant::now();
        let loss = weighted_sgd_epoch(&mut params, data, active, cfg, epoch, &mut out.counters).map_err(|e| fail(e, &coreset))?;
        let training_seconds = t1.elapsed().as_secs_f64();
        if plan == EpochPlan::Select {
            if let Some(path) = &opts.checkpoint {
                Checkpoint::new(cfg, epoch, params.clone(), coreset.clone()).save(path)?;
            }
        }

        let t2 = Instant::now();
        let evaluate_now = epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0);
        let (clean_acc, robust_acc) = if evaluate_now {
            let (c, r) = evaluate(&params, eval_data, &evaluator).map_err(|e| fail(e, &coreset))?;
            (Some(c), Some(r))
        } else {
            (None, None)
        };
        let evaluation_seconds = t2.elapsed().as_secs_f64();
        out.timers.selection += selection_seconds;
        out.timers.training += training_seconds;
        out.timers.evaluation += evaluation_seconds;

        let record = MetricsRecord {
            epoch,
            loss,
            clean_acc,
            robust_acc,
            gamma,
            epoch_seconds: Some(selection_seconds + training_seconds),
            coreset_samples: active.len(),
        };
        let timing = EpochTiming {
            epoch,
            plan: match plan {
                EpochPlan::Warm => "warm",
                EpochPlan::Select => "select",
                EpochPlan::Reuse => "reuse",
            },
            selection_seconds,
            training_seconds,
            evaluation_seconds,
        };
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&record, &timing)?;
        }
        out.records.push(record);
        out.timings.push(timing);
    }
    if let Some(path) = &opts.checkpoint {
        Checkpoint::new(cfg, cfg.epochs, params.clone(), coreset.clone()).save(path)?;
    }
    out.params = params;
    out.coreset = coreset;
    Ok(out)
}

/// Full-batch weighted loss `Σ w_i ℓ_i / Σ w_i` on clean inputs.
pub fn weighted_clean_loss(params: &ModelParams, data: &Dataset, coreset: &Coreset) -> Result<f64> {
    let x: Array2<f64> = data.features().select(Axis(0), &coreset.indices);
    let y: Vec<usize> = coreset.indices.iter().map(|&i| data.labels()[i]).collect();
    let cache = model::forward(params, x.view())?;
    let losses = cache.sample_losses(&Target::Hard(&y));
    let total = coreset.weight_sum();
    Ok(losses.iter().zip(&coreset.weights).map(|(l, w)| l * w).sum::<f64>() / total)
}
