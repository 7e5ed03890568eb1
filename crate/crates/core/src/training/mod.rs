//! Training drivers: standard (STD), PGD adversarial (RAT) and
//! gradient-approximated adversarial (GAAT) training, optionally delayed
//! (DAT), with SGD, learning-rate milestones and best-checkpoint selection.

mod config;
mod sgd;

pub use config::{EarlyStopping, LrSchedule, Method, TrainConfig};
pub use sgd::{sgd_step, SgdState};

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attacks::{gaat_attack, pgd_attack, AttackConfig, HessianMode};
use crate::autodiff;
use crate::data::Dataset;
use crate::diagnostics::{residuals, MetricsRecord, PhaseTimes};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, ModelParams, ModelSpec};
use crate::tensor::Scalar;

/// `γ₀ · factor^k`, `k` being the number of milestones strictly before
/// `epoch` (epochs count from 1).
pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    let passed = schedule.milestones.iter().filter(|&&m| m < epoch).count();
    schedule.initial * schedule.factor.powi(passed as i32)
}

/// Mixes a run seed with stream tags into an independent seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = seed ^ 0x243f_6a88_85a3_08d3;
    for &t in tags {
        h = splitmix(h ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_ATTACK: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// A parameter snapshot with its validation scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f64> {
    pub epoch: usize,
    pub params: ModelParams<T>,
    pub val_nat_acc: f64,
    pub val_adv_acc: f64,
}

/// Everything a run produced.
#[derive(Debug)]
pub struct TrainOutcome<T = f64> {
    /// Parameters after the last completed epoch.
    pub params: ModelParams<T>,
    /// Best validation-robust checkpoint, when validation is enabled.
    pub best: Option<Checkpoint<T>>,
    pub metrics: Vec<MetricsRecord>,
    pub elapsed: Duration,
    /// Set when an epoch failed; `params` then holds the last good state.
    pub failure: Option<(usize, Error)>,
}

impl<T> TrainOutcome<T> {
    /// Turns a recorded failure into an error.
    pub fn into_result(self) -> Result<Self> {
        match self.failure {
            Some((_, e)) => Err(e),
            None => Ok(self),
        }
    }
}

/// Natural and (optionally) adversarial accuracy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub nat_acc: f64,
    pub adv_acc: Option<f64>,
}

const EVAL_BATCH: usize = 250;

/// Accuracy on `dataset`, under exact PGD when `attack` is given.
pub fn evaluate<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    dataset: &Dataset,
    attack: Option<&AttackConfig>,
    seed: u64,
) -> Result<Evaluation> {
    let order: Vec<usize> = (0..dataset.len()).collect();
    let (mut nat, mut adv) = (0usize, 0usize);
    for (b, chunk) in order.chunks(EVAL_BATCH).enumerate() {
        let (x, y) = dataset.batch::<T>(chunk)?;
        let pred = spec.predict(params, &x)?;
        nat += pred.iter().zip(&y).filter(|(p, l)| p == l).count();
        if let Some(cfg) = attack {
            let s = derive_seed(seed, &[STREAM_EVAL, b as u64]);
            let a = pgd_attack(spec, params.tensors(), &x, &y, cfg, s)?;
            let logits = spec.logits(params, &x.add(&a.delta)?)?;
            adv += argmax_rows(&logits).iter().zip(&y).filter(|(p, l)| p == l).count();
        }
    }
    let n = dataset.len() as f64;
    Ok(Evaluation {
        nat_acc: nat as f64 / n,
        adv_acc: attack.map(|_| adv as f64 / n),
    })
}

/// One cell of an attack-strength grid.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepCell {
    pub steps: usize,
    pub eps: f64,
    pub nat_acc: f64,
    pub adv_acc: f64,
}

/// Step size used for a `steps`-step evaluation attack of budget `eps`.
pub fn eval_step_size(eps: f64, steps: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        2.5 * eps / steps as f64
    }
}

/// Exact-PGD accuracy over every `(steps, eps)` pair, row-major in
/// `steps`. The step size is `2.5·eps/steps` with a zero start.
pub fn sweep<T: Scalar>(
    spec: &ModelSpec,
    params: &ModelParams<T>,
    dataset: &Dataset,
    steps: &[usize],
    eps: &[f64],
    clamp_input: Option<(f64, f64)>,
    seed: u64,
) -> Result<Vec<SweepCell>> {
    let nat_acc = evaluate(spec, params, dataset, None, seed)?.nat_acc;
    let mut out = Vec::with_capacity(steps.len() * eps.len());
    for &t in steps {
        for &e in eps {
            let attack = AttackConfig::new(t, eval_step_size(e, t), e).with_clamp(clamp_input);
            let ev = evaluate(spec, params, dataset, Some(&attack), seed)?;
            out.push(SweepCell {
                steps: t,
                eps: e,
                nat_acc,
                adv_acc: ev.adv_acc.unwrap_or(nat_acc),
            });
        }
    }
    Ok(out)
}

/// Trains `spec` from seeded initialization.
pub fn train<T: Scalar>(spec: &ModelSpec, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(spec, dataset, config, |_, _| Ok(()))
}

/// [`train`] with a hook run after every epoch, e.g. to stream metrics.
pub fn train_with<T: Scalar>(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    on_epoch: impl FnMut(&MetricsRecord, &ModelParams<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let params = spec.init::<T>(config.seed)?;
    train_from(spec, params, dataset, config, on_epoch)
}

/// Continues training from `params`.
pub fn train_from<T: Scalar>(
    spec: &ModelSpec,
    mut params: ModelParams<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&MetricsRecord, &ModelParams<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if dataset.image_shape() != spec.input_shape() || dataset.classes() != spec.classes() {
        return Err(Error::Argument(format!(
            "dataset {:?} with {} classes does not fit model input {:?} with {} classes",
            dataset.image_shape(),
            dataset.classes(),
            spec.input_shape(),
            spec.classes()
        )));
    }
    let begin = Instant::now();
    let (train_set, val_set) = match &config.early_stopping {
        Some(es) => {
            let (a, b) = dataset.split_tail(es.val_fraction)?;
            (a, Some(b))
        }
        None => (dataset.clone(), None),
    };
    let val_attack = config.early_stopping.as_ref().map(|es| es.attack(&config.attack));
    let mut state = SgdState::new(&params);
    let mut outcome = TrainOutcome {
        params: params.clone(),
        best: None,
        metrics: Vec::new(),
        elapsed: Duration::ZERO,
        failure: None,
    };
    let mut since_best = 0usize;
    for epoch in 1..=config.epochs {
        let before = (params.clone(), state.clone());
        let result = run_epoch(spec, &mut params, &mut state, &train_set, config, epoch).and_then(|(mut rec, mut times)| {
            if let (Some(val), Some(attack)) = (&val_set, &val_attack) {
                let t = Instant::now();
                let ev = evaluate(spec, &params, val, Some(attack), derive_seed(config.seed, &[epoch as u64]))?;
                times.evaluation = t.elapsed();
                rec.nat_acc = Some(ev.nat_acc);
                rec.adv_acc = ev.adv_acc;
            }
            rec.set_times(&times);
            Ok(rec)
        });
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                params = before.0;
                outcome.failure = Some((epoch, e));
                break;
            }
        };
        if let (Some(nat), Some(adv)) = (rec.nat_acc, rec.adv_acc) {
            let better = outcome.best.as_ref().is_none_or(|b| adv > b.val_adv_acc);
            if better {
                outcome.best = Some(Checkpoint {
                    epoch,
                    params: params.clone(),
                    val_nat_acc: nat,
                    val_adv_acc: adv,
                });
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        on_epoch(&rec, &params)?;
        outcome.metrics.push(rec);
        outcome.params = params.clone();
        let patience = config.early_stopping.as_ref().and_then(|e| e.patience);
        if patience.is_some_and(|p| since_best >= p) {
            log::info!("no validation improvement for {since_best} epochs; stopping after epoch {epoch}");
            break;
        }
    }
    outcome.params = params;
    outcome.elapsed = begin.elapsed();
    Ok(outcome)
}

fn run_epoch<T: Scalar>(
    spec: &ModelSpec,
    params: &mut ModelParams<T>,
    state: &mut SgdState<T>,
    train_set: &Dataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(MetricsRecord, PhaseTimes)> {
    let lr = lr_at(&config.lr, epoch);
    let adversarial = config.is_adversarial_epoch(epoch);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        &[STREAM_SHUFFLE, epoch as u64],
    )));
    let mut times = PhaseTimes::default();
    let mut grad_evals = 0u64;
    let (mut loss_sum, mut seen) = (0.0, 0usize);
    let (mut r_sum, mut r_max, mut r_count) = (0.0, 0.0f64, 0usize);
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let (x, y) = train_set.batch::<T>(chunk)?;
        let x = if adversarial {
            let seed = derive_seed(config.seed, &[STREAM_ATTACK, epoch as u64, b as u64]);
            let adv = match config.method {
                Method::Rat => pgd_attack(spec, params.tensors(), &x, &y, &config.attack, seed)?,
                Method::Gaat => gaat_attack(spec, params.tensors(), &x, &y, &config.attack, &config.hessian, seed)?,
                Method::Std => unreachable!("STD epochs are never adversarial"),
            };
            times.adversary_generation += adv.elapsed;
            times.hessian_setup += adv.timings.hessian_setup;
            grad_evals += adv.grad_evals as u64;
            if config.track_residual {
                let r = residuals(spec, params.tensors(), &x, &y, &adv.delta, &HessianMode::GaussNewton)?;
                r_sum += r.iter().sum::<f64>();
                r_max = r.iter().fold(r_max, |m, &v| m.max(v));
                r_count += r.len();
            }
            x.add(&adv.delta)?
        } else {
            x
        };
        let t = Instant::now();
        let (losses, grads) = autodiff::loss_and_param_grad(spec, params.tensors(), &x, &y)?;
        sgd_step(params, &grads, state, lr, config.momentum, config.weight_decay)?;
        times.param_update += t.elapsed();
        loss_sum += losses.iter().sum::<f64>();
        seen += losses.len();
    }
    let record = MetricsRecord {
        epoch,
        loss: loss_sum / seen as f64,
        residual_mean: (r_count > 0).then(|| r_sum / r_count as f64),
        residual_max: (r_count > 0).then_some(r_max),
        grad_evals,
        ..Default::default()
    };
    Ok((record, times))
}
