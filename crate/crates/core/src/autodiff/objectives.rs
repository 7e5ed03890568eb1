//! Closed-form objectives with known derivatives.
//!
//! These ignore labels and parameters. Inputs of any shape `(N, ...)` are
//! flattened per example.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Objective, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `ℓ(x) = w·x`.
#[derive(Clone, Debug)]
pub struct LinearForm {
    w: Vec<f64>,
}

impl LinearForm {
    pub fn new(w: Vec<f64>) -> Self {
        LinearForm { w }
    }
}

impl Objective for LinearForm {
    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        _params: &[Var],
        x: Var,
        _labels: &[usize],
    ) -> Result<Var> {
        let flat = tape.flatten(x)?;
        let n = tape.value(flat).batch();
        let d = self.w.len();
        let mut tiled = Vec::with_capacity(n * d);
        for _ in 0..n {
            tiled.extend(self.w.iter().map(|&v| T::from_f64(v)));
        }
        let w = tape.leaf(Tensor::new([n, d], tiled)?, false);
        let prod = tape.mul(flat, w)?;
        Ok(tape.sum_rows(prod))
    }
}

/// `ℓ(x) = x₁²·x₂` on two-dimensional inputs.
#[derive(Clone, Copy, Debug)]
pub struct CubicProduct;

impl Objective for CubicProduct {
    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        _params: &[Var],
        x: Var,
        _labels: &[usize],
    ) -> Result<Var> {
        let flat = tape.flatten(x)?;
        let x1 = tape.columns(flat, &[0])?;
        let x2 = tape.columns(flat, &[1])?;
        let sq = tape.mul(x1, x1)?;
        let out = tape.mul(sq, x2)?;
        Ok(tape.sum_rows(out))
    }
}

/// `ℓ(x) = ½‖x‖²`.
#[derive(Clone, Copy, Debug)]
pub struct HalfSquaredNorm;

impl Objective for HalfSquaredNorm {
    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        _params: &[Var],
        x: Var,
        _labels: &[usize],
    ) -> Result<Var> {
        let flat = tape.flatten(x)?;
        let sq = tape.mul(flat, flat)?;
        let rows = tape.sum_rows(sq);
        Ok(tape.scale(rows, 0.5))
    }
}

/// `ℓ(x) = ½xᵀAx + bᵀx + c` with symmetric `A`; exactly quadratic in the
/// input, so its second-order Taylor expansion has no remainder.
#[derive(Clone, Debug)]
pub struct Quadratic {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl Quadratic {
    pub fn new(dim: usize, a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        if a.len() != dim * dim || b.len() != dim {
            return Err(Error::Argument(format!(
                "quadratic of dimension {dim} needs {} matrix and {dim} vector entries",
                dim * dim
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                if a[i * dim + j] != a[j * dim + i] {
                    return Err(Error::Argument("quadratic form must be symmetric".into()));
                }
            }
        }
        Ok(Quadratic { dim, a, b, c })
    }

    /// Random symmetric `A` and `b` with entries in `[−1, 1]`, `c = 0`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let v: f64 = rng.random_range(-1.0..1.0);
                a[i * dim + j] = v;
                a[j * dim + i] = v;
            }
        }
        let b = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Quadratic { dim, a, b, c: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Direct evaluation for one example.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for i in 0..d {
            let row: f64 = self.a[i * d..(i + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum();
            q += x[i] * row;
        }
        0.5 * q + self.b.iter().zip(x).map(|(b, v)| b * v).sum::<f64>() + self.c
    }

    /// Direct gradient `Ax + b` for one example.
    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| (0..d).map(|j| self.a[i * d + j] * x[j]).sum::<f64>() + self.b[i])
            .collect()
    }
}

impl Objective for Quadratic {
    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        _params: &[Var],
        x: Var,
        _labels: &[usize],
    ) -> Result<Var> {
        let flat = tape.flatten(x)?;
        let n = tape.value(flat).batch();
        if tape.value(flat).example_len() != self.dim {
            return Err(Error::shape("quadratic", tape.value(flat).shape(), &[n, self.dim]));
        }
        let a = tape.leaf(Tensor::from_f64([self.dim, self.dim], &self.a)?, false);
        // A is symmetric, so x·Aᵀ = x·A row-wise.
        let ax = tape.linear(flat, a)?;
        let xax = tape.mul(flat, ax)?;
        let quad = tape.sum_rows(xax);
        let half = tape.scale(quad, 0.5);
        let mut tiled_b = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            tiled_b.extend_from_slice(&self.b);
        }
        let b = tape.leaf(Tensor::from_f64([n, self.dim], &tiled_b)?, false);
        let bx = tape.mul(flat, b)?;
        let lin = tape.sum_rows(bx);
        let c = tape.leaf(Tensor::from_f64([n], &vec![self.c; n])?, false);
        let partial = tape.add(half, lin)?;
        tape.add(partial, c)
    }
}
