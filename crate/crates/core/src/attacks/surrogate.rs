//! Hessian surrogates applied to a perturbation.

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Objective, DEFAULT_ORACLE_LIMIT};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How `H(x)` is approximated.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HessianMode {
    /// Rank-one outer product `J Jᵀ`, applied as `J (J·δ)`.
    #[default]
    GaussNewton,
    /// The scalar reading `‖J‖² δ`, kept for comparison only.
    GaussNewtonScalar,
    /// Hutchinson estimate of the diagonal from `probes` HVPs.
    Diagonal { probes: usize },
    /// Exact diagonal, one HVP per input coordinate.
    ExactDiagonal,
    /// Dense per-example Hessian, one HVP per input coordinate.
    ExactOracle,
}

impl HessianMode {
    /// Backward passes needed beyond the gradient itself, for inputs of
    /// `dim` coordinates per example.
    pub fn extra_grad_evals(&self, dim: usize) -> usize {
        match self {
            HessianMode::GaussNewton | HessianMode::GaussNewtonScalar => 0,
            HessianMode::Diagonal { probes } => *probes,
            HessianMode::ExactDiagonal | HessianMode::ExactOracle => dim,
        }
    }
}

/// A materialized surrogate for `δ ↦ H(x)δ`.
#[derive(Clone, Debug)]
pub enum Surrogate<T = f64> {
    GaussNewton(Tensor<T>),
    /// Per-example `‖J‖²`.
    ScalarCurvature(Vec<T>),
    Diagonal(Tensor<T>),
    /// `(N, D, D)`.
    Dense(Tensor<T>),
}

impl<T: Scalar> Surrogate<T> {
    pub fn apply(&self, delta: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Surrogate::GaussNewton(j) => gauss_newton_hvp(j, delta),
            Surrogate::ScalarCurvature(c) => {
                if c.len() != delta.batch() {
                    return Err(Error::shape("scalar curvature", &[c.len()], delta.shape()));
                }
                let d = delta.example_len();
                let data = delta
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| c[i / d] * v)
                    .collect();
                Tensor::new(delta.shape().to_vec(), data)
            }
            Surrogate::Diagonal(diag) => diag.mul(delta),
            Surrogate::Dense(h) => {
                let (n, d) = (delta.batch(), delta.example_len());
                if h.shape() != [n, d, d] {
                    return Err(Error::shape("dense hessian", h.shape(), &[n, d, d]));
                }
                let mut out = Vec::with_capacity(n * d);
                for b in 0..n {
                    let v = delta.example(b);
                    for r in 0..d {
                        let row = &h.data()[(b * d + r) * d..(b * d + r + 1) * d];
                        out.push(crate::tensor::dot_slices(row, v));
                    }
                }
                Tensor::new(delta.shape().to_vec(), out)
            }
        }
    }
}

/// `J (J·δ)` per example, without forming the outer product.
pub fn gauss_newton_hvp<T: Scalar>(j: &Tensor<T>, delta: &Tensor<T>) -> Result<Tensor<T>> {
    let coef = j.batch_dot(delta)?;
    let d = j.example_len();
    let data = j
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * coef[i / d])
        .collect();
    Tensor::new(j.shape().to_vec(), data)
}

/// Builds the surrogate for `mode` given `J` at the same `x`. Returns it
/// with the number of extra backward passes spent.
pub fn build_surrogate<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    j: &Tensor<T>,
    mode: &HessianMode,
    seed: u64,
) -> Result<(Surrogate<T>, usize)> {
    if j.shape() != x.shape() {
        return Err(Error::shape("surrogate", j.shape(), x.shape()));
    }
    let extra = mode.extra_grad_evals(x.example_len());
    let s = match mode {
        HessianMode::GaussNewton => Surrogate::GaussNewton(j.clone()),
        HessianMode::GaussNewtonScalar => Surrogate::ScalarCurvature(j.batch_dot(j)?),
        HessianMode::Diagonal { .. } | HessianMode::ExactDiagonal => {
            Surrogate::Diagonal(diag_hessian_surrogate(obj, params, x, labels, mode, seed)?)
        }
        HessianMode::ExactOracle => Surrogate::Dense(autodiff::hessian_exact(
            obj,
            params,
            x,
            labels,
            DEFAULT_ORACLE_LIMIT,
        )?),
    };
    Ok((s, extra))
}

/// Per-example Hessian diagonal `d`, so that `Hδ ≈ d ⊙ δ`. Only the
/// diagonal and oracle modes are meaningful here.
pub fn diag_hessian_surrogate<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    mode: &HessianMode,
    seed: u64,
) -> Result<Tensor<T>> {
    match mode {
        HessianMode::Diagonal { probes } => {
            autodiff::diag_hessian_estimate(obj, params, x, labels, *probes, seed)
        }
        HessianMode::ExactDiagonal | HessianMode::ExactOracle => {
            autodiff::diag_hessian_exact(obj, params, x, labels, DEFAULT_ORACLE_LIMIT)
        }
        other => Err(Error::Argument(format!(
            "{other:?} does not define a diagonal surrogate"
        ))),
    }
}
