//! Reverse-mode differentiation of per-example losses.
//!
//! Every entry point takes an [`Objective`], which records per-example
//! losses `(N)` onto a [`Tape`]. Input gradients are per example: row `i` of
//! the returned tensor is the gradient of example `i`'s own loss with
//! respect to its own pixels. Parameter gradients are of the batch-mean loss.
//!
//! Second-order quantities use forward-over-reverse: the tape is recorded
//! over [`Dual`] numbers whose tangent is the probe direction, and the
//! tangent part of the resulting input gradient is the Hessian-vector
//! product. ReLU kinks contribute nothing to second derivatives.

mod objectives;
mod tape;

pub use objectives::{CubicProduct, HalfSquaredNorm, LinearForm, Quadratic};
pub use tape::{Gradients, Tape, Var};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Dual, Scalar, Tensor};

/// Default cap on per-example input dimension for the exact-Hessian oracles.
pub const DEFAULT_ORACLE_LIMIT: usize = 1024;

/// Something that maps a batch of inputs and labels to per-example losses.
pub trait Objective: Sync {
    /// Records the per-example loss vector `(N)` for input node `x`.
    fn record<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &[Var],
        x: Var,
        labels: &[usize],
    ) -> Result<Var>;
}

/// Gradients with respect to both parameters and inputs.
#[derive(Clone, Debug)]
pub struct GradBundle<T = f64> {
    /// Gradients of the batch-mean loss, one per parameter tensor.
    pub wrt_params: Vec<Tensor<T>>,
    /// Per-example input gradients `J(x)`, same shape as the input.
    pub wrt_input: Tensor<T>,
}

struct Recorded<T> {
    tape: Tape<T>,
    params: Vec<Var>,
    x: Var,
    losses: Var,
}

fn record<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    params_grad: bool,
    x: Tensor<T>,
    x_grad: bool,
    labels: &[usize],
) -> Result<Recorded<T>> {
    if x.batch() != labels.len() {
        return Err(Error::Argument(format!(
            "{} inputs but {} labels",
            x.batch(),
            labels.len()
        )));
    }
    let mut tape = Tape::new();
    let pv: Vec<Var> = params
        .iter()
        .map(|p| tape.leaf(p.clone(), params_grad))
        .collect();
    let xv = tape.leaf(x, x_grad);
    let losses = obj.record(&mut tape, &pv, xv, labels)?;
    if tape.value(losses).shape() != [labels.len()] {
        return Err(Error::Argument(format!(
            "objective produced losses of shape {:?} for a batch of {}",
            tape.value(losses).shape(),
            labels.len()
        )));
    }
    if let Some(index) = tape
        .value(losses)
        .data()
        .iter()
        .position(|l| !l.is_finite())
    {
        return Err(Error::NonFiniteLoss { index });
    }
    Ok(Recorded {
        tape,
        params: pv,
        x: xv,
        losses,
    })
}

fn primal_losses<T: Scalar>(rec: &Recorded<T>) -> Vec<f64> {
    rec.tape.value(rec.losses).to_f64_vec()
}

/// Per-example losses without any differentiation.
pub fn per_example_losses<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<Vec<f64>> {
    let rec = record(obj, params, false, x.clone(), false, labels)?;
    Ok(primal_losses(&rec))
}

/// Per-example losses and per-example input gradients `J(x)`.
pub fn loss_and_input_grad<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Vec<f64>, Tensor<T>)> {
    let mut rec = record(obj, params, false, x.clone(), true, labels)?;
    let root = rec.tape.sum(rec.losses);
    let mut grads = rec.tape.backward(root)?;
    let j = grads
        .take(rec.x)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    j.check_finite("input gradient")?;
    Ok((primal_losses(&rec), j))
}

/// `J(x) = ∇ₓℓ(x)`, per example.
pub fn input_grad<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<Tensor<T>> {
    loss_and_input_grad(obj, params, x, labels).map(|(_, j)| j)
}

/// Per-example losses and gradients of the batch-mean loss w.r.t. parameters.
pub fn loss_and_param_grad<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(Vec<f64>, Vec<Tensor<T>>)> {
    let mut rec = record(obj, params, true, x.clone(), false, labels)?;
    let root = rec.tape.mean(rec.losses);
    let mut grads = rec.tape.backward(root)?;
    let mut out = Vec::with_capacity(params.len());
    for (v, p) in rec.params.iter().zip(params) {
        let g = grads
            .take(*v)
            .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()));
        g.check_finite("parameter gradient")?;
        out.push(g);
    }
    let losses = primal_losses(&rec);
    rec.params.clear();
    Ok((losses, out))
}

pub fn param_grad<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<Vec<Tensor<T>>> {
    loss_and_param_grad(obj, params, x, labels).map(|(_, g)| g)
}

/// Both gradient families from one reverse sweep; returns the mean loss.
pub fn gradients<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
) -> Result<(f64, GradBundle<T>)> {
    let mut rec = record(obj, params, true, x.clone(), true, labels)?;
    let root = rec.tape.mean(rec.losses);
    let mean = rec.tape.value(root).data()[0].primal();
    let mut grads = rec.tape.backward(root)?;
    let wrt_params = rec
        .params
        .iter()
        .zip(params)
        .map(|(v, p)| {
            grads
                .take(*v)
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();
    // The mean divides every example's term by N; undo it for per-example J.
    let wrt_input = grads
        .take(rec.x)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()))
        .scale(labels.len() as f64);
    Ok((
        mean,
        GradBundle {
            wrt_params,
            wrt_input,
        },
    ))
}

/// Exact per-example input Hessian-vector product `H(x)·v`.
pub fn hvp<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.shape() != v.shape() {
        return Err(Error::shape("hvp", x.shape(), v.shape()));
    }
    let dual_params: Vec<Tensor<Dual>> = params.iter().map(|p| p.cast()).collect();
    let dual_x = Tensor::from_raw(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| Dual::new(a.primal(), b.primal()))
            .collect(),
    );
    let mut rec = record(obj, &dual_params, false, dual_x, true, labels)?;
    let root = rec.tape.sum(rec.losses);
    let mut grads = rec.tape.backward(root)?;
    let g = grads
        .take(rec.x)
        .unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let out = Tensor::from_raw(
        x.shape().to_vec(),
        g.data().iter().map(|d| T::from_f64(d.eps)).collect(),
    );
    out.check_finite("hessian-vector product")?;
    Ok(out)
}

fn check_oracle_dim<T: Scalar>(x: &Tensor<T>, limit: usize) -> Result<usize> {
    let dim = x.example_len();
    if dim > limit {
        return Err(Error::OracleLimit { dim, limit });
    }
    Ok(dim)
}

/// Probes coordinate `i` of every example at once; valid because the
/// per-example Hessian is block diagonal across the batch.
fn basis_probe<T: Scalar>(x: &Tensor<T>, i: usize) -> Tensor<T> {
    let dim = x.example_len();
    let mut e = Tensor::zeros(x.shape().to_vec());
    for n in 0..x.batch() {
        e.data_mut()[n * dim + i] = T::one();
    }
    e
}

/// Exact diagonal `∂²ℓ/∂xᵢ²` per example, via one HVP per input coordinate.
pub fn diag_hessian_exact<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    limit: usize,
) -> Result<Tensor<T>> {
    let dim = check_oracle_dim(x, limit)?;
    let mut diag = Tensor::zeros(x.shape().to_vec());
    for i in 0..dim {
        let hv = hvp(obj, params, x, labels, &basis_probe(x, i))?;
        for n in 0..x.batch() {
            diag.data_mut()[n * dim + i] = hv.data()[n * dim + i];
        }
    }
    Ok(diag)
}

/// Hutchinson estimate of the Hessian diagonal: the mean of `v ⊙ Hv` over
/// `probes` Rademacher directions.
pub fn diag_hessian_estimate<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    probes: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    if probes == 0 {
        return Err(Error::Argument("diagonal estimate needs at least one probe".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f64; x.len()];
    for _ in 0..probes {
        let signs: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let v = Tensor::from_raw(
            x.shape().to_vec(),
            signs.iter().map(|&s| T::from_f64(s)).collect(),
        );
        let hv = hvp(obj, params, x, labels, &v)?;
        for ((a, s), h) in acc.iter_mut().zip(&signs).zip(hv.data()) {
            *a += s * h.primal();
        }
    }
    let inv = 1.0 / probes as f64;
    Ok(Tensor::from_raw(
        x.shape().to_vec(),
        acc.into_iter().map(|a| T::from_f64(a * inv)).collect(),
    ))
}

/// Full per-example input Hessian, shape `(N, D, D)`.
pub fn hessian_exact<O: Objective, T: Scalar>(
    obj: &O,
    params: &[Tensor<T>],
    x: &Tensor<T>,
    labels: &[usize],
    limit: usize,
) -> Result<Tensor<T>> {
    let dim = check_oracle_dim(x, limit)?;
    let n = x.batch();
    let mut h = vec![T::zero(); n * dim * dim];
    for i in 0..dim {
        let col = hvp(obj, params, x, labels, &basis_probe(x, i))?;
        for b in 0..n {
            for j in 0..dim {
                h[(b * dim + j) * dim + i] = col.data()[b * dim + j];
            }
        }
    }
    Ok(Tensor::from_raw(vec![n, dim, dim], h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn linear_form_gradient_is_constant() {
        let obj = LinearForm::new(vec![3.0, -1.0]);
        for x in [[0.0, 0.0], [0.7, -2.0], [5.0, 1.0]] {
            let j = input_grad(&obj, &[], &t(&[1, 2], &x), &[0]).unwrap();
            assert_eq!(j.data(), &[3.0, -1.0]);
        }
    }

    #[test]
    fn cubic_product_gradient_and_hessian() {
        let obj = CubicProduct;
        let x = t(&[1, 2], &[1.0, 2.0]);
        let j = input_grad(&obj, &[], &x, &[0]).unwrap();
        assert_eq!(j.data(), &[4.0, 1.0]);
        let fd = central_diff(|v| v[0] * v[0] * v[1], &[1.0, 2.0], 1e-4);
        for (a, b) in j.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6);
        }
        let hv = hvp(&obj, &[], &x, &[0], &t(&[1, 2], &[1.0, 0.0])).unwrap();
        assert_eq!(hv.data(), &[4.0, 2.0]);
        let d = diag_hessian_exact(&obj, &[], &x, &[0], DEFAULT_ORACLE_LIMIT).unwrap();
        assert_eq!(d.data(), &[4.0, 0.0]);
    }

    #[test]
    fn half_squared_norm_hessian_is_identity() {
        let obj = HalfSquaredNorm;
        let x = t(&[2, 3], &[0.1, -0.4, 2.0, 1.0, 0.0, -3.0]);
        let y = [0, 0];
        let v = t(&[2, 3], &[1.0, 2.0, -0.5, 0.3, 0.0, 7.0]);
        assert_eq!(hvp(&obj, &[], &x, &y, &v).unwrap(), v);
        let d = diag_hessian_exact(&obj, &[], &x, &y, 8).unwrap();
        assert_eq!(d.data(), &[1.0; 6]);
        let est = diag_hessian_estimate(&obj, &[], &x, &y, 1, 5).unwrap();
        assert_eq!(est.data(), &[1.0; 6]);
    }

    #[test]
    fn hutchinson_on_cubic_product() {
        let obj = CubicProduct;
        let x = t(&[1, 2], &[1.0, 2.0]);
        let est = diag_hessian_estimate(&obj, &[], &x, &[0], 10_000, 42).unwrap();
        // Exact diagonal is (4, 0); v₁² = 1 so the first entry has no variance.
        assert!((est.data()[0] - 4.0).abs() <= 0.4);
        assert!(est.data()[1].abs() <= 0.4);
    }

    #[test]
    fn oracle_limit_enforced() {
        let x = Tensor::<f64>::zeros([1, 20]);
        let err = diag_hessian_exact(&HalfSquaredNorm, &[], &x, &[0], 16).unwrap_err();
        assert!(matches!(err, Error::OracleLimit { dim: 20, limit: 16 }));
        assert!(hessian_exact(&HalfSquaredNorm, &[], &x, &[0], 16).is_err());
    }

    #[test]
    fn hvp_shape_mismatch() {
        let x = Tensor::<f64>::zeros([1, 2]);
        let v = Tensor::<f64>::zeros([1, 3]);
        assert!(hvp(&HalfSquaredNorm, &[], &x, &[0], &v).is_err());
    }

    #[test]
    fn dense_hessian_of_quadratic() {
        let a = vec![2.0, 0.5, 0.5, -1.0];
        let obj = Quadratic::new(2, a.clone(), vec![0.3, 0.1], 0.0).unwrap();
        let x = t(&[1, 2], &[0.2, 0.9]);
        let h = hessian_exact(&obj, &[], &x, &[0], 4).unwrap();
        assert_eq!(h.shape(), &[1, 2, 2]);
        assert_eq!(h.data(), &a[..]);
    }
}
