use crate::error::{Error, Result};
use crate::models::ModelParams;
use crate::tensor::{Scalar, Tensor};

/// Momentum buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T = f64> {
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        SgdState {
            velocity: params.tensors().iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

/// `v ← m·v + (g + wd·θ)`, `θ ← θ − γ·v`. Nothing is written if any new
/// value would be non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut SgdState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = params.tensors().len();
    if grads.len() != n || state.velocity.len() != n {
        return Err(Error::Argument(format!(
            "{n} parameters, {} gradients, {} momentum buffers",
            grads.len(),
            state.velocity.len()
        )));
    }
    let (m, wd, g) = (T::from_f64(momentum), T::from_f64(weight_decay), T::from_f64(lr));
    let mut updates = Vec::with_capacity(n);
    for ((p, gr), v) in params.tensors().iter().zip(grads).zip(&state.velocity) {
        if p.shape() != gr.shape() || p.shape() != v.shape() {
            return Err(Error::shape("sgd_step", p.shape(), gr.shape()));
        }
        let mut nv = Vec::with_capacity(p.len());
        let mut np = Vec::with_capacity(p.len());
        for ((&theta, &grad), &vel) in p.data().iter().zip(gr.data()).zip(v.data()) {
            let vel = m * vel + (grad + wd * theta);
            nv.push(vel);
            np.push(theta - g * vel);
        }
        let nonfinite = |_| Error::NonFinite {
            context: "parameter update".into(),
        };
        let nv = Tensor::new(p.shape().to_vec(), nv).map_err(nonfinite)?;
        let np = Tensor::new(p.shape().to_vec(), np).map_err(nonfinite)?;
        updates.push((nv, np));
    }
    for (i, (nv, np)) in updates.into_iter().enumerate() {
        state.velocity[i] = nv;
        params.tensors_mut()[i] = np;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ModelParams {
        ModelParams::from_parts(vec!["w".into()], vec![Tensor::from_f64([1], &[v]).unwrap()], 0).unwrap()
    }

    #[test]
    fn momentum_and_decay_step() {
        let mut p = scalar_params(1.0);
        let mut s = SgdState::new(&p);
        let g = [Tensor::from_f64([1], &[0.5]).unwrap()];
        sgd_step(&mut p, &g, &mut s, 0.1, 0.9, 2e-4).unwrap();
        // Scalar reference: v = 0.9·0 + (0.5 + 2e-4·1), θ = 1 − 0.1·v.
        let v = 0.9 * 0.0 + (0.5 + 2e-4 * 1.0);
        assert!((s.velocity[0].data()[0] - 0.5002).abs() < 1e-15);
        assert!((p.tensors()[0].data()[0] - (1.0 - 0.1 * v)).abs() < 1e-15);
        assert!((p.tensors()[0].data()[0] - 0.94998).abs() < 1e-12);
    }

    #[test]
    fn degenerate_steps() {
        let g = [Tensor::from_f64([1], &[0.5]).unwrap()];
        let mut p = scalar_params(1.0);
        let mut s = SgdState::new(&p);
        sgd_step(&mut p, &g, &mut s, 0.0, 0.9, 2e-4).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 1.0);
        let mut p = scalar_params(1.0);
        sgd_step(&mut p, &g, &mut s, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 1.0 - 0.1 * 0.5);
    }

    #[test]
    fn non_finite_update_leaves_params() {
        let mut p = scalar_params(1.0);
        let mut s = SgdState::new(&p);
        let g = [Tensor::from_f64([1], &[1e308]).unwrap()];
        sgd_step(&mut p, &g, &mut s, 0.1, 0.9, 0.0).unwrap();
        let before = p.clone();
        let err = sgd_step(&mut p, &g, &mut s, -1e10, 0.9, 0.0).unwrap_err();
        assert!(err.is_numeric());
        assert_eq!(p, before);
    }
}
