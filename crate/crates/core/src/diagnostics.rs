//! Measurement layer: the Taylor residual, phase timing and metrics CSV.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attacks::{gaat_attack, pgd_attack, quadratic_approx_losses, AttackConfig, HessianMode};
use crate::autodiff::{self, Objective};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-example `|ℓ(x+δ) − ℓ(x) − δ·J − ½δ·Hδ|`.
pub fn residuals<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    delta: &Tensor<T>,
    mode: &HessianMode,
) -> Result<Vec<f64>> {
    let approx = quadratic_approx_losses(obj, params, x, labels, delta, mode)?;
    let actual = autodiff::per_example_losses(obj, params, &x.add(delta)?, labels)?;
    Ok(actual.iter().zip(&approx).map(|(a, q)| (a - q).abs()).collect())
}

/// Batch mean of [`residuals`].
pub fn residual<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    delta: &Tensor<T>,
    mode: &HessianMode,
) -> Result<f64> {
    let r = residuals(obj, params, x, labels, delta, mode)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Mean residual of PGD perturbations with each step count in `steps`,
/// all sharing `base`'s step size, budget and start.
pub fn residual_series<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    base: &AttackConfig,
    steps: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    steps
        .iter()
        .map(|&t| {
            let cfg = AttackConfig { steps: t, ..base.clone() };
            let adv = pgd_attack(obj, params, x, labels, &cfg, seed)?;
            residual(obj, params, x, labels, &adv.delta, &HessianMode::GaussNewton)
        })
        .collect()
}

/// Median timings of repeated RAT and GAAT generation on one batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackBench {
    pub repetitions: usize,
    pub steps: usize,
    pub rat_ms: f64,
    pub gaat_ms: f64,
    /// One exact PGD step (gradient, sign, projection).
    pub rat_step_ms: f64,
    /// One approximate step.
    pub gaat_step_ms: f64,
    pub jacobian_ms: f64,
    pub hessian_setup_ms: f64,
    pub ratio: f64,
    pub rat_grad_evals: usize,
    pub gaat_grad_evals: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times `repetitions` alternating RAT/GAAT generations after `warmup`
/// untimed rounds.
#[allow(clippy::too_many_arguments)]
pub fn bench_attacks<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    attack: &AttackConfig,
    mode: &HessianMode,
    warmup: usize,
    repetitions: usize,
) -> Result<AttackBench> {
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mut series: [Vec<f64>; 6] = Default::default();
    let (mut rat_evals, mut gaat_evals) = (0, 0);
    for r in 0..warmup + repetitions {
        let rat = pgd_attack(obj, params, x, labels, attack, r as u64)?;
        let gaat = gaat_attack(obj, params, x, labels, attack, mode, r as u64)?;
        if r < warmup {
            continue;
        }
        rat_evals = rat.grad_evals;
        gaat_evals = gaat.grad_evals;
        let avg = |v: &[Duration]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().map(|&d| ms(d)).sum::<f64>() / v.len() as f64
            }
        };
        series[0].push(ms(rat.elapsed));
        series[1].push(ms(gaat.elapsed));
        series[2].push(avg(&rat.timings.steps));
        series[3].push(avg(&gaat.timings.steps));
        series[4].push(ms(gaat.timings.jacobian));
        series[5].push(ms(gaat.timings.hessian_setup));
    }
    let [mut a, mut b, mut c, mut d, mut e, mut f] = series;
    let (rat_ms, gaat_ms) = (median(&mut a), median(&mut b));
    Ok(AttackBench {
        repetitions,
        steps: attack.steps,
        rat_ms,
        gaat_ms,
        rat_step_ms: median(&mut c),
        gaat_step_ms: median(&mut d),
        jacobian_ms: median(&mut e),
        hessian_setup_ms: median(&mut f),
        ratio: gaat_ms / rat_ms,
        rat_grad_evals: rat_evals,
        gaat_grad_evals: gaat_evals,
    })
}

/// Runs `f` and reports how long it took on the monotonic clock.
pub fn phase_timer<R>(f: impl FnOnce() -> R) -> (R, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// Accumulated time per training phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub adversary_generation: Duration,
    pub hessian_setup: Duration,
    pub param_update: Duration,
    pub evaluation: Duration,
}

/// One row of the metrics CSV. Columns that do not apply are left empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub nat_acc: Option<f64>,
    pub adv_acc: Option<f64>,
    pub residual_mean: Option<f64>,
    pub residual_max: Option<f64>,
    pub t_advgen_ms: f64,
    pub t_hessian_ms: f64,
    pub t_update_ms: f64,
    pub t_eval_ms: f64,
    pub grad_evals: u64,
}

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "loss",
    "nat_acc",
    "adv_acc",
    "residual_mean",
    "residual_max",
    "t_advgen_ms",
    "t_hessian_ms",
    "t_update_ms",
    "t_eval_ms",
    "grad_evals",
];

impl MetricsRecord {
    pub fn set_times(&mut self, t: &PhaseTimes) {
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        self.t_advgen_ms = ms(t.adversary_generation);
        self.t_hessian_ms = ms(t.hessian_setup);
        self.t_update_ms = ms(t.param_update);
        self.t_eval_ms = ms(t.evaluation);
    }

    /// Zeroes the wall-clock columns, leaving only reproducible values.
    pub fn without_times(mut self) -> Self {
        self.set_times(&PhaseTimes::default());
        self
    }
}

/// CSV writer that flushes after every row.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    path: PathBuf,
    last_epoch: Option<usize>,
}

impl MetricsWriter {
    /// Creates the file and writes the header.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(METRICS_HEADER)?;
        inner.flush().map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter {
            inner,
            path,
            last_epoch: None,
        })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if self.last_epoch.is_some_and(|e| record.epoch <= e) {
            return Err(Error::Argument(format!(
                "metrics epoch {} does not follow {}",
                record.epoch,
                self.last_epoch.unwrap_or_default()
            )));
        }
        self.inner.serialize(record)?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))?;
        self.last_epoch = Some(record.epoch);
        Ok(())
    }
}

/// Writes all records to `path`.
pub fn write_metrics_csv<'a>(records: impl IntoIterator<Item = &'a MetricsRecord>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

/// Parses a metrics CSV produced by [`MetricsWriter`].
pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header = rdr.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Dataset(format!("{}: unexpected metrics header", path.display())));
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Writes any serializable rows as CSV with a header, flushing at the end.
pub fn write_rows<S: Serialize>(path: impl AsRef<Path>, rows: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let mut f = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    f.flush().map_err(|e| Error::io(path, e))
}
