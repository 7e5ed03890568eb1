//! 2-D convolution over NCHW batches, lowered to per-image GEMMs via im2col.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Stride and zero-padding of a square-stride 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2d { stride, padding }
    }

    /// Output spatial size for an `h×w` input and a `kh×kw` kernel.
    pub fn output_hw(&self, (h, w): (usize, usize), (kh, kw): (usize, usize)) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Argument("convolution stride must be positive".into()));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if kh > ph || kw > pw {
            return Err(Error::Argument(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x_shape: &[usize], w_shape: &[usize], conv: Conv2d) -> Result<Self> {
        if x_shape.len() != 4 || w_shape.len() != 4 || x_shape[1] != w_shape[1] {
            return Err(Error::shape("conv2d", x_shape, w_shape));
        }
        let (oh, ow) = conv.output_hw((x_shape[2], x_shape[3]), (w_shape[2], w_shape[3]))?;
        Ok(Geometry {
            n: x_shape[0],
            c: x_shape[1],
            h: x_shape[2],
            w: x_shape[3],
            o: w_shape[0],
            kh: w_shape[2],
            kw: w_shape[3],
            oh,
            ow,
            stride: conv.stride,
            pad: conv.padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel offset within one image for output location
    /// `(oy, ox)` and kernel tap `(ci, ky, kx)`, if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ci: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
        if iy < 0 || ix < 0 || iy >= self.h as isize || ix >= self.w as isize {
            None
        } else {
            Some((ci * self.h + iy as usize) * self.w + ix as usize)
        }
    }

    /// Fills `cols` (row per output location, column per kernel tap).
    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let k = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * k..][..k];
                let mut q = 0;
                for ci in 0..self.c {
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            row[q] = match self.source(oy, ox, ci, ky, kx) {
                                Some(s) => image[s],
                                None => T::zero(),
                            };
                            q += 1;
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into an image gradient.
    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let k = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * k..][..k];
                let mut q = 0;
                for ci in 0..self.c {
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            if let Some(s) = self.source(oy, ox, ci, ky, kx) {
                                image[s] += row[q];
                            }
                            q += 1;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `x` `(N,C,H,W)` with `weight` `(O,C,KH,KW)`; no bias.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, conv: Conv2d) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), weight.shape(), conv)?;
    let (k, p) = (g.patch_len(), g.out_hw());
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); p * k];
    let mut out = vec![T::zero(); g.n * g.o * p];
    for n in 0..g.n {
        g.im2col(&x.data()[n * img..(n + 1) * img], &mut cols);
        // out_n[o, p] = Σ_q cols[p, q] · W[o, q]
        T::gemm(
            (p, k, g.o),
            &cols,
            (k, 1),
            weight.data(),
            (1, k),
            &mut out[n * g.o * p..(n + 1) * g.o * p],
            (1, p),
            false,
        );
    }
    Ok(Tensor::from_raw(vec![g.n, g.o, g.oh, g.ow], out))
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: &[usize],
    conv: Conv2d,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input_shape, weight.shape(), conv)?;
    let expected = [g.n, g.o, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_grad_input", grad_out.shape(), &expected));
    }
    let (k, p) = (g.patch_len(), g.out_hw());
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); p * k];
    let mut dx = vec![T::zero(); g.n * img];
    for n in 0..g.n {
        // cols[p, q] = Σ_o dY[o, p] · W[o, q]
        T::gemm(
            (p, g.o, k),
            &grad_out.data()[n * g.o * p..(n + 1) * g.o * p],
            (1, p),
            weight.data(),
            (k, 1),
            &mut cols,
            (k, 1),
            false,
        );
        g.col2im(&cols, &mut dx[n * img..(n + 1) * img]);
    }
    Ok(Tensor::from_raw(input_shape.to_vec(), dx))
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_grad_weight<T: Scalar>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    weight_shape: &[usize],
    conv: Conv2d,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x.shape(), weight_shape, conv)?;
    let expected = [g.n, g.o, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv2d_grad_weight", grad_out.shape(), &expected));
    }
    let (k, p) = (g.patch_len(), g.out_hw());
    let img = g.c * g.h * g.w;
    let mut cols = vec![T::zero(); p * k];
    let mut dw = vec![T::zero(); g.o * k];
    for n in 0..g.n {
        g.im2col(&x.data()[n * img..(n + 1) * img], &mut cols);
        // dW[o, q] += Σ_p dY[o, p] · cols[p, q]
        T::gemm(
            (g.o, p, k),
            &grad_out.data()[n * g.o * p..(n + 1) * g.o * p],
            (p, 1),
            &cols,
            (k, 1),
            &mut dw,
            (k, 1),
            true,
        );
    }
    Ok(Tensor::from_raw(weight_shape.to_vec(), dw))
}
