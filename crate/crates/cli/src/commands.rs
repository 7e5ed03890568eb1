use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use log::{info, warn};

use gaat::attacks::AttackConfig;
use gaat::diagnostics::{bench_attacks, residual_series, MetricsRecord, MetricsWriter};
use gaat::models::{load_checkpoint, save_checkpoint, CheckpointMeta, Precision};
use gaat::training::{derive_seed, evaluate, sweep as sweep_grid, train_with};
use gaat::{Dataset, ModelParams, ModelSpec, Scalar};

use crate::config::{self, DataConfig, RunConfig, Splits};
use crate::{Common, PrecisionArg};

const CONFIG: u8 = 2;
const DATA: u8 = 3;
const NUMERIC: u8 = 4;
const OTHER: u8 = 1;

/// Stream tag for residual probes, distinct from the library's streams.
const STREAM_RESIDUAL: u64 = 11;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

/// Exit code for a library error raised while running.
fn classify(error: anyhow::Error) -> Failure {
    let code = match error.downcast_ref::<gaat::Error>() {
        Some(e) if e.is_numeric() => NUMERIC,
        Some(e) if e.is_data() => DATA,
        Some(gaat::Error::Argument(_)) => CONFIG,
        _ => OTHER,
    };
    Failure { code, error }
}

type Outcome = Result<(), Failure>;

/// A validated configuration with its data loaded.
struct Run {
    cfg: RunConfig,
    splits: Splits,
    out: PathBuf,
    precision: Precision,
    deterministic: bool,
}

/// Parses, applies overrides and validates everything that can be checked
/// without side effects, then creates the output directory and loads data.
fn prepare(common: &Common, extra_paths: &[&Path]) -> Result<Run, Failure> {
    let mut cfg = config::load(&common.config).map_err(fail(CONFIG))?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.paper_literal {
        cfg.train.attack.clamp_input = None;
        cfg.train.momentum = 0.0;
        cfg.train.weight_decay = 0.0;
        if let Some(e) = &mut cfg.eval {
            e.attack.clamp_input = None;
        }
    }
    cfg.train.seed = cfg.seed;
    let precision = match common.precision {
        Some(PrecisionArg::F32) => Precision::F32,
        Some(PrecisionArg::F64) => Precision::F64,
        None => cfg.precision.unwrap_or_default(),
    };
    cfg.validate().map_err(fail(CONFIG))?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| fail(CONFIG)(anyhow!("no output directory: set `out` or pass --out")))?;
    if out.exists() && !out.is_dir() {
        return Err(fail(CONFIG)(anyhow!("output path {} is not a directory", out.display())));
    }
    cfg.data.check_paths().map_err(fail(DATA))?;
    for p in extra_paths {
        if !p.is_file() {
            return Err(fail(DATA)(anyhow!("{} does not exist", p.display())));
        }
    }
    let splits = cfg.data.load(cfg.seed).map_err(|e| classify(e.into()))?;
    fs::create_dir_all(&out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(fail(OTHER))?;
    info!(
        "{} training examples{}",
        splits.train.len(),
        splits.test.as_ref().map(|t| format!(", {} test", t.len())).unwrap_or_default()
    );
    Ok(Run {
        cfg,
        splits,
        out,
        precision,
        deterministic: common.deterministic_output,
    })
}

macro_rules! dispatch {
    ($run:expr, $f:ident $(, $arg:expr)*) => {
        match $run.precision {
            Precision::F32 => $f::<f32>(&$run $(, $arg)*),
            Precision::F64 => $f::<f64>(&$run $(, $arg)*),
        }
    };
}

pub fn train(common: &Common) -> Outcome {
    let run = prepare(common, &[])?;
    dispatch!(run, run_training, None)
}

pub fn residual(common: &Common) -> Outcome {
    let run = prepare(common, &[])?;
    let steps = run.cfg.residual.steps.clone();
    dispatch!(run, run_training, Some(steps.as_slice()))
}

fn test_set(run: &Run) -> &Dataset {
    match &run.splits.test {
        Some(t) => t,
        None => {
            warn!("no test set configured; evaluating on the training set");
            &run.splits.train
        }
    }
}

fn run_training<T: Scalar>(run: &Run, residual_steps: Option<&[usize]>) -> Outcome {
    let cfg = &run.cfg;
    let train_cfg = &cfg.train;
    let spec = cfg.model_spec(&run.splits.train);
    let start = Instant::now();
    let mut metrics = MetricsWriter::create(run.out.join("metrics.csv")).map_err(|e| classify(e.into()))?;

    let probe = match residual_steps {
        Some(steps) => {
            let n = cfg.residual.probe_size.min(run.splits.train.len());
            let idx: Vec<usize> = (0..n).collect();
            let (x, y) = run.splits.train.batch::<T>(&idx).map_err(|e| classify(e.into()))?;
            let mut header = String::from("epoch");
            for s in steps {
                write!(header, ",r_steps{s}").unwrap();
            }
            Some((steps, x, y, vec![header]))
        }
        None => None,
    };
    let mut probe = probe;

    let outcome = train_with::<T>(&spec, &run.splits.train, train_cfg, |rec: &MetricsRecord, params: &ModelParams<T>| {
        let row = if run.deterministic { rec.clone().without_times() } else { rec.clone() };
        metrics.write(&row)?;
        info!(
            "epoch {:>3}: loss {:.4} nat {} adv {} grad evals {}",
            rec.epoch,
            rec.loss,
            fmt_opt(rec.nat_acc),
            fmt_opt(rec.adv_acc),
            rec.grad_evals
        );
        if let Some((steps, x, y, lines)) = &mut probe {
            let seed = derive_seed(cfg.seed, &[STREAM_RESIDUAL, rec.epoch as u64]);
            let r = residual_series(&spec, params.tensors(), x, y, &train_cfg.attack, steps, seed)?;
            let mut line = rec.epoch.to_string();
            for v in &r {
                write!(line, ",{v:e}").unwrap();
            }
            info!("epoch {:>3}: residuals {}", rec.epoch, line);
            lines.push(line);
            write_lines(&run.out.join("residual.csv"), lines)?;
        }
        Ok(())
    })
    .map_err(|e| classify(e.into()))?;

    let last_epoch = outcome.metrics.last().map(|m| m.epoch);
    let final_meta = CheckpointMeta {
        epoch: last_epoch,
        ..Default::default()
    };
    let save = |name: &str, params: &ModelParams<T>, meta: &CheckpointMeta| {
        save_checkpoint(run.out.join(name), &spec, params, meta).map_err(|e| classify(e.into()))
    };
    save("final.ckpt", &outcome.params, &final_meta)?;
    match &outcome.best {
        Some(b) => save(
            "best.ckpt",
            &b.params,
            &CheckpointMeta {
                epoch: Some(b.epoch),
                val_nat_acc: Some(b.val_nat_acc),
                val_adv_acc: Some(b.val_adv_acc),
            },
        )?,
        None => save("best.ckpt", &outcome.params, &final_meta)?,
    }
    if let Some((epoch, err)) = outcome.failure {
        return Err(Failure {
            code: NUMERIC,
            error: anyhow::Error::new(err).context(format!("training failed in epoch {epoch}; last good parameters saved")),
        });
    }

    let chosen = outcome.best.as_ref().map(|b| &b.params).unwrap_or(&outcome.params);
    let attack = cfg.eval_attack();
    let ev = evaluate(&spec, chosen, test_set(run), Some(&attack), derive_seed(cfg.seed, &[STREAM_RESIDUAL + 1]))
        .map_err(|e| classify(e.into()))?;
    let minutes = if run.deterministic { 0.0 } else { start.elapsed().as_secs_f64() / 60.0 };
    let summary = format!(
        "{} {:.4} {:.4} {:.2}",
        train_cfg.label(),
        ev.nat_acc,
        ev.adv_acc.unwrap_or(ev.nat_acc),
        minutes
    );
    println!("{summary}");
    write_lines(&run.out.join("summary.txt"), &["method nat_acc adv_acc minutes".to_string(), summary])
        .map_err(|e| classify(e.into()))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn write_lines(path: &Path, lines: &[String]) -> gaat::Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| gaat::Error::io(path, e))
}

/// Budgets in `k/255` for CIFAR data, otherwise `0, 0.025, …, 0.15`.
fn default_eps(data: &DataConfig) -> Vec<f64> {
    match data {
        DataConfig::Cifar10 { .. } | DataConfig::Cifar100 { .. } => (1..=6).map(|k| (2 * k) as f64 / 255.0).collect(),
        _ => (0..=6).map(|k| 0.025 * k as f64).collect(),
    }
}

pub fn sweep(common: &Common, checkpoint: Option<PathBuf>, steps: Option<Vec<usize>>, eps: Option<Vec<f64>>) -> Outcome {
    // Grid and checkpoint are checked before anything is created.
    let cfg = config::load(&common.config).map_err(fail(CONFIG))?;
    let out = common.out.clone().or(cfg.out.clone());
    let ckpt = checkpoint
        .or(cfg.sweep.checkpoint.clone())
        .or_else(|| out.map(|o| o.join("best.ckpt")))
        .ok_or_else(|| fail(CONFIG)(anyhow!("no checkpoint given")))?;
    let steps = steps.or(cfg.sweep.steps.clone()).unwrap_or_else(|| vec![1, 2, 5, 10, 20, 40]);
    let eps = eps.or(cfg.sweep.eps.clone()).unwrap_or_else(|| default_eps(&cfg.data));
    if steps.is_empty() || eps.is_empty() {
        return Err(fail(CONFIG)(anyhow!("empty sweep grid")));
    }
    if let Some(e) = eps.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(fail(CONFIG)(anyhow!("invalid budget {e}")));
    }
    let run = prepare(common, &[&ckpt])?;
    dispatch!(run, run_sweep, &ckpt, &steps, &eps)
}

fn load_model<T: Scalar>(path: &Path, data: &Dataset) -> Result<(ModelSpec, ModelParams<T>), Failure> {
    let file = load_checkpoint::<T>(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(fail(DATA))?;
    if file.spec.input_shape() != data.image_shape() || file.spec.classes() != data.classes() {
        return Err(fail(CONFIG)(anyhow!(
            "checkpoint model {} does not match data of shape {:?} with {} classes",
            file.spec.id(),
            data.image_shape(),
            data.classes()
        )));
    }
    Ok((file.spec, file.params))
}

fn run_sweep<T: Scalar>(run: &Run, ckpt: &Path, steps: &[usize], eps: &[f64]) -> Outcome {
    let data = test_set(run);
    let (spec, params) = load_model::<T>(ckpt, data)?;
    let cells = sweep_grid(&spec, &params, data, steps, eps, run.cfg.train.attack.clamp_input, run.cfg.seed)
        .map_err(|e| classify(e.into()))?;
    let mut lines = vec!["steps,eps,adv_acc".to_string()];
    for c in &cells {
        info!("steps {:>3} eps {:.4}: adv {:.4} (nat {:.4})", c.steps, c.eps, c.adv_acc, c.nat_acc);
        lines.push(format!("{},{},{}", c.steps, c.eps, c.adv_acc));
    }
    write_lines(&run.out.join("sweep.csv"), &lines).map_err(|e| classify(e.into()))
}

pub fn bench(common: &Common) -> Outcome {
    let cfg = config::load(&common.config).map_err(fail(CONFIG))?;
    let extra: Vec<&Path> = cfg.bench.checkpoint.as_deref().into_iter().collect();
    let run = prepare(common, &extra)?;
    dispatch!(run, run_bench)
}

fn run_bench<T: Scalar>(run: &Run) -> Outcome {
    let cfg = &run.cfg;
    let data = &run.splits.train;
    let (spec, params) = match &cfg.bench.checkpoint {
        Some(p) => load_model::<T>(p, data)?,
        None => {
            let spec = cfg.model_spec(data);
            let params = spec.init::<T>(cfg.seed).map_err(|e| classify(e.into()))?;
            (spec, params)
        }
    };
    let n = cfg.bench.batch_size.min(data.len());
    let idx: Vec<usize> = (0..n).collect();
    let (x, y) = data.batch::<T>(&idx).map_err(|e| classify(e.into()))?;
    let attack: &AttackConfig = &cfg.train.attack;
    let b = bench_attacks(
        &spec,
        params.tensors(),
        &x,
        &y,
        attack,
        &cfg.train.hessian,
        cfg.bench.warmup,
        cfg.bench.repetitions,
    )
    .map_err(|e| classify(e.into()))?;
    println!("batch {n}, T = {}, {} repetitions (median)", b.steps, b.repetitions);
    println!("{:<22}{:>12}{:>12}", "", "RAT", "GAAT");
    println!("{:<22}{:>12.3}{:>12.3}", "generation [ms]", b.rat_ms, b.gaat_ms);
    println!("{:<22}{:>12.3}{:>12.3}", "single step [ms]", b.rat_step_ms, b.gaat_step_ms);
    println!("{:<22}{:>12}{:>12}", "grad evals", b.rat_grad_evals, b.gaat_grad_evals);
    println!("jacobian {:.3} ms, hessian setup {:.3} ms, GAAT/RAT ratio {:.3}", b.jacobian_ms, b.hessian_setup_ms, b.ratio);
    let text = toml::to_string(&b).map_err(|e| fail(OTHER)(e.into()))?;
    let path = run.out.join("bench.toml");
    fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(fail(OTHER))
}
