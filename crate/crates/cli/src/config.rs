//! The run configuration file (TOML).
//!
//! ```toml
//! seed = 17
//! out = "runs/mnist-gaat"
//! precision = "f64"
//!
//! [data]
//! kind = "mnist"            # mnist | cifar10 | cifar100 | blobs
//! dir = "data/mnist"
//! train_subset = 8000
//!
//! [model]
//! arch = "conv-relu"        # mlp | conv-relu | mini-resnet
//!
//! [train]
//! epochs = 10
//! batch_size = 64
//! method = "GAAT"           # STD | RAT | GAAT
//! momentum = 0.9
//! weight_decay = 2e-4
//! attack = { steps = 10, step_size = 0.02, epsilon = 0.1, init = "uniform-random" }
//! lr = { initial = 0.05, factor = 0.2, milestones = [6, 8] }
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;

use gaat::attacks::AttackConfig;
use gaat::data::{load_cifar_bin, load_mnist_dir, load_mnist_idx, subset, subset_indices, synthetic_blobs_with, CifarKind};
use gaat::models::Precision;
use gaat::{Dataset, ModelSpec, TrainConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub precision: Option<Precision>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub residual: ResidualConfig,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Mnist {
        /// Directory with `train-*` and optionally `t10k-*` IDX files.
        dir: Option<PathBuf>,
        train_images: Option<PathBuf>,
        train_labels: Option<PathBuf>,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
        #[serde(flatten)]
        split: SplitConfig,
    },
    Cifar10 {
        train_files: Vec<PathBuf>,
        #[serde(default)]
        test_files: Vec<PathBuf>,
        #[serde(flatten)]
        split: SplitConfig,
    },
    Cifar100 {
        train_files: Vec<PathBuf>,
        #[serde(default)]
        test_files: Vec<PathBuf>,
        #[serde(flatten)]
        split: SplitConfig,
    },
    Blobs {
        n: usize,
        dim: usize,
        classes: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(flatten)]
        split: SplitConfig,
    },
}

fn default_sigma() -> f64 {
    0.05
}

/// How the training and test sets are carved out.
#[derive(Debug, Default, Deserialize)]
pub struct SplitConfig {
    /// Stratified training subset size.
    pub train_subset: Option<usize>,
    /// Stratified test subset size.
    pub test_subset: Option<usize>,
    /// Held-out share used as test set when no test files are given.
    pub test_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    /// MLP hidden widths (default `[100]`).
    pub hidden: Option<Vec<usize>>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    Mlp,
    ConvRelu,
    MiniResnet,
}

/// Final test-set attack; defaults to 40-step PGD at the training budget.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub attack: AttackConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub checkpoint: Option<PathBuf>,
    pub steps: Option<Vec<usize>>,
    pub eps: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_bench_batch")]
    pub batch_size: usize,
    #[serde(default = "default_reps")]
    pub repetitions: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    pub checkpoint: Option<PathBuf>,
}

fn default_bench_batch() -> usize {
    128
}
fn default_reps() -> usize {
    21
}
fn default_warmup() -> usize {
    2
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: default_bench_batch(),
            repetitions: default_reps(),
            warmup: default_warmup(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    #[serde(default = "default_residual_steps")]
    pub steps: Vec<usize>,
    /// Training examples (from the front of the set) probed every epoch.
    #[serde(default = "default_probe")]
    pub probe_size: usize,
}

fn default_residual_steps() -> Vec<usize> {
    vec![1, 4, 10, 16]
}
fn default_probe() -> usize {
    512
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            steps: default_residual_steps(),
            probe_size: default_probe(),
        }
    }
}

/// Reads and validates the file. Relative paths in it resolve against the
/// directory holding the config.
pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if cfg.train.seed != 0 {
        bail!("set `seed` at the top level, not in [train]");
    }
    let base = path.parent().unwrap_or(Path::new("."));
    cfg.data.resolve(base);
    for p in [&mut cfg.out, &mut cfg.sweep.checkpoint, &mut cfg.bench.checkpoint].into_iter().flatten() {
        rebase(base, p);
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        if let Some(e) = &self.eval {
            e.attack.validate()?;
        }
        if self.bench.batch_size == 0 || self.bench.repetitions == 0 {
            bail!("bench batch size and repetitions must be positive");
        }
        if self.residual.probe_size == 0 {
            bail!("residual probe size must be positive");
        }
        if let Some(h) = &self.model.hidden {
            if self.model.arch != Arch::Mlp || h.contains(&0) {
                bail!("`hidden` applies to the mlp architecture and must be positive");
            }
        }
        if let Some(f) = self.data.split().test_fraction {
            if !(f > 0.0 && f < 1.0) {
                bail!("test_fraction {f} not in (0, 1)");
            }
        }
        Ok(())
    }

    pub fn model_spec(&self, data: &Dataset) -> ModelSpec {
        let input = data.image_shape();
        let classes = data.classes();
        match self.model.arch {
            Arch::Mlp => ModelSpec::mlp(input, self.model.hidden.clone().unwrap_or_else(|| vec![100]), classes),
            Arch::ConvRelu => ModelSpec::conv_relu(input, classes),
            Arch::MiniResnet => ModelSpec::mini_resnet(input, classes),
        }
    }

    /// Test-set attack: explicit, or 40 steps at the training budget.
    pub fn eval_attack(&self) -> AttackConfig {
        match &self.eval {
            Some(e) => e.attack.clone(),
            None => {
                let eps = self.train.attack.epsilon;
                AttackConfig::new(40, gaat::training::eval_step_size(eps, 40), eps)
                    .with_clamp(self.train.attack.clamp_input)
            }
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Training and (optional) test sets.
pub struct Splits {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl DataConfig {
    fn split(&self) -> &SplitConfig {
        match self {
            DataConfig::Mnist { split, .. }
            | DataConfig::Cifar10 { split, .. }
            | DataConfig::Cifar100 { split, .. }
            | DataConfig::Blobs { split, .. } => split,
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            DataConfig::Mnist {
                dir,
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [dir, train_images, train_labels, test_images, test_labels].into_iter().flatten() {
                    rebase(base, p);
                }
            }
            DataConfig::Cifar10 { train_files, test_files, .. } | DataConfig::Cifar100 { train_files, test_files, .. } => {
                for p in train_files.iter_mut().chain(test_files.iter_mut()) {
                    rebase(base, p);
                }
            }
            DataConfig::Blobs { .. } => {}
        }
    }

    /// Every referenced file must exist before anything runs.
    pub fn check_paths(&self) -> anyhow::Result<()> {
        let must = |p: &Path| -> anyhow::Result<()> {
            if !p.exists() {
                bail!("data path {} does not exist", p.display());
            }
            Ok(())
        };
        match self {
            DataConfig::Mnist {
                dir,
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                match (dir, train_images, train_labels) {
                    (_, Some(i), Some(l)) => {
                        must(i)?;
                        must(l)?;
                    }
                    (Some(d), None, None) => must(d)?,
                    _ => bail!("mnist data needs `dir` or both `train_images` and `train_labels`"),
                }
                for p in [test_images, test_labels].into_iter().flatten() {
                    must(p)?;
                }
            }
            DataConfig::Cifar10 { train_files, test_files, .. } | DataConfig::Cifar100 { train_files, test_files, .. } => {
                if train_files.is_empty() {
                    bail!("cifar data needs at least one training file");
                }
                for p in train_files.iter().chain(test_files) {
                    must(p)?;
                }
            }
            DataConfig::Blobs { .. } => {}
        }
        Ok(())
    }

    pub fn load(&self, seed: u64) -> gaat::Result<Splits> {
        let (train, test) = match self {
            DataConfig::Mnist {
                dir,
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                let train = match (train_images, train_labels) {
                    (Some(i), Some(l)) => load_mnist_idx(i, l)?,
                    _ => load_mnist_dir(dir.as_ref().expect("checked"), "train")?,
                };
                let test = match (test_images, test_labels, dir) {
                    (Some(i), Some(l), _) => Some(load_mnist_idx(i, l)?),
                    (None, None, Some(d)) => load_mnist_dir(d, "t10k").ok(),
                    _ => None,
                };
                (train, test)
            }
            DataConfig::Cifar10 { train_files, test_files, .. } | DataConfig::Cifar100 { train_files, test_files, .. } => {
                let kind = if matches!(self, DataConfig::Cifar10 { .. }) {
                    CifarKind::Cifar10
                } else {
                    CifarKind::Cifar100
                };
                let train = load_cifar_bin(train_files, kind)?;
                let test = if test_files.is_empty() {
                    None
                } else {
                    Some(load_cifar_bin(test_files, kind)?)
                };
                (train, test)
            }
            DataConfig::Blobs { n, dim, classes, sigma, .. } => (synthetic_blobs_with(*n, *dim, *classes, *sigma, seed)?, None),
        };
        let split = self.split();
        let (train, test) = match (test, split.test_fraction) {
            (None, Some(f)) => {
                let k = ((train.len() as f64) * f).round() as usize;
                let test_idx = subset_indices(train.labels(), train.classes(), k, seed)?;
                let mut held = vec![false; train.len()];
                for &i in &test_idx {
                    held[i] = true;
                }
                let rest: Vec<usize> = (0..train.len()).filter(|&i| !held[i]).collect();
                (train.select(&rest, "train")?, Some(train.select(&test_idx, "test")?))
            }
            (t, _) => (train, t),
        };
        let train = match split.train_subset {
            Some(n) => subset(&train, n, seed)?,
            None => train,
        };
        let test = match (test, split.test_subset) {
            (Some(t), Some(n)) => Some(subset(&t, n, seed)?),
            (t, _) => t,
        };
        Ok(Splits { train, test })
    }
}
