//! Adversary generation under an l∞ budget.
//!
//! [`pgd_attack`] runs exact projected sign-gradient ascent, paying one
//! backward pass per step. [`gaat_attack`] computes the input gradient `J`
//! once at the clean input, builds a Hessian [`Surrogate`] once, and then
//! steps along `sign(J + Hδ)` without touching the network again.
//!
//! Both share the same δ⁰ policy, projection and input-domain clamp, so on
//! a loss that is exactly quadratic in the input (with the dense oracle
//! Hessian) they produce identical trajectories.

mod surrogate;

pub use surrogate::{build_surrogate, diag_hessian_surrogate, gauss_newton_hvp, HessianMode, Surrogate};

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Objective};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Starting point of the perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    #[default]
    Zero,
    UniformRandom,
}

/// `{T, α, ε}` plus the δ⁰ policy and the optional pixel range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub steps: usize,
    pub step_size: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub init: InitMode,
    /// After each projection, `x + δ` is clamped into this range.
    #[serde(default = "default_clamp")]
    pub clamp_input: Option<(f64, f64)>,
}

fn default_clamp() -> Option<(f64, f64)> {
    Some((0.0, 1.0))
}

impl AttackConfig {
    pub fn new(steps: usize, step_size: f64, epsilon: f64) -> Self {
        AttackConfig {
            steps,
            step_size,
            epsilon,
            init: InitMode::Zero,
            clamp_input: default_clamp(),
        }
    }

    pub fn with_init(mut self, init: InitMode) -> Self {
        self.init = init;
        self
    }

    pub fn with_clamp(mut self, clamp: Option<(f64, f64)>) -> Self {
        self.clamp_input = clamp;
        self
    }

    /// Rejects impossible settings. ε = 0 is accepted (the empty ball);
    /// α > 2ε only logs a warning.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Argument(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Argument(format!("step size must be finite and >= 0, got {}", self.step_size)));
        }
        if let Some((lo, hi)) = self.clamp_input {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Argument(format!("invalid input range [{lo}, {hi}]")));
            }
        }
        if self.step_size > 2.0 * self.epsilon && self.steps > 0 {
            log::warn!(
                "step size {} exceeds twice the budget {}",
                self.step_size,
                self.epsilon
            );
        }
        Ok(())
    }
}

/// Wall-clock breakdown of one adversary generation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttackTimings {
    /// Gradient at the clean input (GAAT only).
    pub jacobian: Duration,
    /// Surrogate construction (GAAT only).
    pub hessian_setup: Duration,
    /// One entry per ascent step.
    pub steps: Vec<Duration>,
}

/// A generated perturbation and what it cost.
#[derive(Clone, Debug)]
pub struct Adversary<T = f64> {
    pub delta: Tensor<T>,
    /// Full backward passes consumed, Hessian probes included.
    pub grad_evals: usize,
    pub elapsed: Duration,
    pub timings: AttackTimings,
}

/// δ⁰: zeros, or i.i.d. uniform on `[−ε, ε]` from `seed`.
pub fn init_delta<T: Scalar>(x: &Tensor<T>, config: &AttackConfig, seed: u64) -> Tensor<T> {
    match config.init {
        InitMode::Zero => Tensor::zeros(x.shape().to_vec()),
        InitMode::UniformRandom => {
            let eps = config.epsilon;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = (0..x.len())
                .map(|_| {
                    if eps > 0.0 {
                        T::from_f64(rng.random_range(-eps..=eps))
                    } else {
                        T::zero()
                    }
                })
                .collect();
            Tensor::from_raw(x.shape().to_vec(), data)
        }
    }
}

/// Elementwise clamp to `[−ε, ε]`.
pub fn project_linf<T: Scalar>(delta: &Tensor<T>, epsilon: f64) -> Result<Tensor<T>> {
    delta.clamp(-epsilon, epsilon)
}

/// Shrinks δ where `x + δ` leaves `[lo, hi]` so that it lands on the
/// boundary. Coordinates already inside are untouched, which keeps the
/// projection's guarantee intact.
pub fn clamp_to_domain<T: Scalar>(x: &Tensor<T>, delta: &mut Tensor<T>, lo: f64, hi: f64) -> Result<()> {
    if x.shape() != delta.shape() {
        return Err(Error::shape("clamp_to_domain", x.shape(), delta.shape()));
    }
    let (l, h) = (T::from_f64(lo), T::from_f64(hi));
    let (lp, hp) = (l.primal(), h.primal());
    for (&xi, d) in x.data().iter().zip(delta.data_mut()) {
        let v = (xi + *d).primal();
        if v > hp {
            *d = h - xi;
            // Rounding of `hi − x` can overshoot by an ulp.
            for _ in 0..4 {
                if (xi + *d).primal() <= hp {
                    break;
                }
                *d = *d - ((xi + *d) - h);
            }
        } else if v < lp {
            *d = l - xi;
            for _ in 0..4 {
                if (xi + *d).primal() >= lp {
                    break;
                }
                *d = *d + (l - (xi + *d));
            }
        }
    }
    Ok(())
}

fn step<T: Scalar>(
    x: &Tensor<T>,
    delta: &Tensor<T>,
    direction: &Tensor<T>,
    config: &AttackConfig,
) -> Result<Tensor<T>> {
    let mut next = delta.clone();
    next.axpy(config.step_size, direction)?;
    let mut next = project_linf(&next, config.epsilon)?;
    if let Some((lo, hi)) = config.clamp_input {
        clamp_to_domain(x, &mut next, lo, hi)?;
    }
    Ok(next)
}

fn start<T: Scalar>(x: &Tensor<T>, labels: &[usize], config: &AttackConfig, seed: u64) -> Result<Tensor<T>> {
    config.validate()?;
    if x.batch() != labels.len() {
        return Err(Error::Argument(format!("{} inputs but {} labels", x.batch(), labels.len())));
    }
    let mut delta = init_delta(x, config, seed);
    if let Some((lo, hi)) = config.clamp_input {
        clamp_to_domain(x, &mut delta, lo, hi)?;
    }
    Ok(delta)
}

/// Exact PGD: `T` steps of `δ ← Π(δ + α·sign(∇ℓ(x+δ)))`.
pub fn pgd_attack<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    seed: u64,
) -> Result<Adversary<T>> {
    pgd_attack_observed(obj, params, x, labels, config, seed, |_, _| {})
}

/// [`pgd_attack`] that reports each step's sign direction to `observe`.
pub fn pgd_attack_observed<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    seed: u64,
    mut observe: impl FnMut(usize, &Tensor<T>),
) -> Result<Adversary<T>> {
    let begin = Instant::now();
    let mut delta = start(x, labels, config, seed)?;
    let mut timings = AttackTimings::default();
    for t in 0..config.steps {
        let s = Instant::now();
        let xadv = x.add(&delta)?;
        let (_, g) = autodiff::loss_and_input_grad(obj, params, &xadv, labels)?;
        let dir = g.sign()?;
        delta = step(x, &delta, &dir, config)?;
        timings.steps.push(s.elapsed());
        observe(t, &dir);
    }
    Ok(Adversary {
        delta,
        grad_evals: config.steps,
        elapsed: begin.elapsed(),
        timings,
    })
}

/// `J + H·δ`, the first-order model of `∇ℓ(x+δ)`.
pub fn approx_grad<T: Scalar>(j: &Tensor<T>, h: &Surrogate<T>, delta: &Tensor<T>) -> Result<Tensor<T>> {
    j.add(&h.apply(delta)?)
}

/// Gradient-approximated PGD: one gradient and one surrogate at the clean
/// input, then `T` steps along `sign(J + Hδ)`.
pub fn gaat_attack<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    mode: &HessianMode,
    seed: u64,
) -> Result<Adversary<T>> {
    gaat_attack_observed(obj, params, x, labels, config, mode, seed, |_, _| {})
}

/// [`gaat_attack`] that reports each step's sign direction to `observe`.
#[allow(clippy::too_many_arguments)]
pub fn gaat_attack_observed<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    config: &AttackConfig,
    mode: &HessianMode,
    seed: u64,
    mut observe: impl FnMut(usize, &Tensor<T>),
) -> Result<Adversary<T>> {
    let begin = Instant::now();
    let mut delta = start(x, labels, config, seed)?;
    let mut timings = AttackTimings::default();
    if config.steps == 0 {
        return Ok(Adversary {
            delta,
            grad_evals: 0,
            elapsed: begin.elapsed(),
            timings,
        });
    }
    let s = Instant::now();
    let (_, j) = autodiff::loss_and_input_grad(obj, params, x, labels)?;
    timings.jacobian = s.elapsed();
    let s = Instant::now();
    let (h, probes) = build_surrogate(obj, params, x, labels, &j, mode, seed ^ PROBE_SEED)?;
    timings.hessian_setup = s.elapsed();
    for t in 0..config.steps {
        let s = Instant::now();
        let dir = approx_grad(&j, &h, &delta)?.sign()?;
        delta = step(x, &delta, &dir, config)?;
        timings.steps.push(s.elapsed());
        observe(t, &dir);
    }
    Ok(Adversary {
        delta,
        grad_evals: 1 + probes,
        elapsed: begin.elapsed(),
        timings,
    })
}

const PROBE_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Per-example second-order model `ℓ(x) + δ·J + ½·δ·Hδ`.
pub fn quadratic_approx_losses<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    delta: &Tensor<T>,
    mode: &HessianMode,
) -> Result<Vec<f64>> {
    if x.shape() != delta.shape() {
        return Err(Error::shape("quadratic_approx_loss", x.shape(), delta.shape()));
    }
    let (losses, j) = autodiff::loss_and_input_grad(obj, params, x, labels)?;
    let (h, _) = build_surrogate(obj, params, x, labels, &j, mode, PROBE_SEED)?;
    let hd = h.apply(delta)?;
    let first = delta.batch_dot(&j)?;
    let second = delta.batch_dot(&hd)?;
    Ok(losses
        .iter()
        .zip(first.iter().zip(&second))
        .map(|(l, (a, b))| l + a.primal() + 0.5 * b.primal())
        .collect())
}

/// Batch mean of [`quadratic_approx_losses`].
pub fn quadratic_approx_loss<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    delta: &Tensor<T>,
    mode: &HessianMode,
) -> Result<f64> {
    let v = quadratic_approx_losses(obj, params, x, labels, delta, mode)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[cfg(test)]
mod tests;
