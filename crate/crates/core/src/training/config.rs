use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, HessianMode, InitMode};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "STD")]
    Std,
    #[serde(rename = "RAT")]
    Rat,
    #[serde(rename = "GAAT")]
    Gaat,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Std => "STD",
            Method::Rat => "RAT",
            Method::Gaat => "GAAT",
        }
    }
}

/// Step decay at fixed epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    #[serde(default = "one")]
    pub factor: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
}

fn one() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            factor: 1.0,
            milestones: Vec::new(),
        }
    }
}

/// Per-epoch validation and best-checkpoint selection by adversarial
/// accuracy under a short exact PGD attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStopping {
    /// Trailing share of the training set held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// PGD steps of the validation attack.
    #[serde(default = "default_val_steps")]
    pub val_steps: usize,
    /// Stop after this many epochs without improvement; `None` trains on.
    #[serde(default)]
    pub patience: Option<usize>,
}

fn default_val_fraction() -> f64 {
    0.1
}

fn default_val_steps() -> usize {
    10
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping {
            val_fraction: default_val_fraction(),
            val_steps: default_val_steps(),
            patience: None,
        }
    }
}

impl EarlyStopping {
    /// Validation attack: same budget and clamp as training, step size
    /// `2.5·ε / steps`, zero start.
    pub fn attack(&self, train: &AttackConfig) -> AttackConfig {
        let steps = self.val_steps;
        AttackConfig {
            steps,
            step_size: if steps > 0 { 2.5 * train.epsilon / steps as f64 } else { 0.0 },
            epsilon: train.epsilon,
            init: InitMode::Zero,
            clamp_input: train.clamp_input,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub method: Method,
    pub attack: AttackConfig,
    #[serde(default)]
    pub hessian: HessianMode,
    pub lr: LrSchedule,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Clean training through this epoch, adversarial afterwards.
    #[serde(default)]
    pub dat_switch_epoch: Option<usize>,
    #[serde(default)]
    pub early_stopping: Option<EarlyStopping>,
    /// Record the Gauss–Newton residual of every generated perturbation.
    #[serde(default = "yes")]
    pub track_residual: bool,
    #[serde(default)]
    pub seed: u64,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    pub fn new(method: Method, epochs: usize, batch_size: usize, attack: AttackConfig, lr: LrSchedule) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            method,
            attack,
            hessian: HessianMode::GaussNewton,
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            dat_switch_epoch: None,
            early_stopping: None,
            track_residual: true,
            seed: 0,
        }
    }

    /// Switch epoch of `N/2`, the default delayed schedule.
    pub fn with_default_dat(mut self) -> Self {
        self.dat_switch_epoch = Some(self.epochs / 2);
        self
    }

    pub fn is_adversarial_epoch(&self, epoch: usize) -> bool {
        self.method != Method::Std && self.dat_switch_epoch.is_none_or(|s| epoch > s)
    }

    /// Row label such as `DAT+GAAT`.
    pub fn label(&self) -> String {
        match (self.method, self.dat_switch_epoch) {
            (Method::Std, _) | (_, None) => self.method.label().to_string(),
            (m, Some(_)) => format!("DAT+{}", m.label()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.lr.initial.is_finite() && self.lr.initial >= 0.0 && self.lr.factor.is_finite() && self.lr.factor > 0.0) {
            return bad(format!("invalid learning-rate schedule {:?}", self.lr));
        }
        if self.lr.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("milestones must be strictly increasing".into());
        }
        if self.lr.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return bad(format!("milestones must precede the final epoch {}", self.epochs));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return bad(format!("momentum {} not in [0, 1)", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight decay {} must be >= 0", self.weight_decay));
        }
        if self.dat_switch_epoch.is_some_and(|s| s > self.epochs) {
            return bad("dat_switch_epoch exceeds the number of epochs".into());
        }
        if let HessianMode::Diagonal { probes: 0 } = self.hessian {
            return bad("diagonal Hessian mode needs at least one probe".into());
        }
        if let Some(es) = &self.early_stopping {
            if !(es.val_fraction > 0.0 && es.val_fraction < 1.0) {
                return bad(format!("validation fraction {} not in (0, 1)", es.val_fraction));
            }
        }
        self.attack.validate()
    }
}
