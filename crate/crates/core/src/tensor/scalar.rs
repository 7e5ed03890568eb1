//! Element types a [`Tensor`](super::Tensor) can hold.
//!
//! `f64` is the default; `f32` exists for timing runs. [`Dual`] carries a
//! tangent alongside each value so that running reverse mode over it yields
//! Hessian-vector products (forward-over-reverse).

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Scalar:
    Copy
    + Default
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    /// The real value, dropping any tangent part.
    fn primal(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;

    #[inline]
    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::from_f64(1.0)
    }

    /// `C = A·B` (or `C += A·B` when `accumulate`) for an `m×k` by `k×n`
    /// product with explicit element strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        dims: (usize, usize, usize),
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        c: &mut [Self],
        c_strides: (usize, usize),
        accumulate: bool,
    ) {
        check_gemm_bounds(dims, a.len(), a_strides, b.len(), b_strides, c.len(), c_strides);
        naive_gemm(dims, a, a_strides, b, b_strides, c, c_strides, accumulate);
    }
}

fn max_offset(rows: usize, cols: usize, (rs, cs): (usize, usize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

fn check_gemm_bounds(
    (m, k, n): (usize, usize, usize),
    a_len: usize,
    a_strides: (usize, usize),
    b_len: usize,
    b_strides: (usize, usize),
    c_len: usize,
    c_strides: (usize, usize),
) {
    assert!(max_offset(m, k, a_strides) <= a_len, "gemm: A out of bounds");
    assert!(max_offset(k, n, b_strides) <= b_len, "gemm: B out of bounds");
    assert!(max_offset(m, n, c_strides) <= c_len, "gemm: C out of bounds");
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn naive_gemm<T: Scalar>(
    (m, k, n): (usize, usize, usize),
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    (rsc, csc): (usize, usize),
    accumulate: bool,
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
            }
            let slot = &mut c[i * rsc + j * csc];
            if accumulate {
                *slot += acc;
            } else {
                *slot = acc;
            }
        }
    }
}

macro_rules! float_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn primal(self) -> f64 {
                self as f64
            }

            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }

            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }

            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm(
                dims: (usize, usize, usize),
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                c: &mut [Self],
                c_strides: (usize, usize),
                accumulate: bool,
            ) {
                check_gemm_bounds(dims, a.len(), a_strides, b.len(), b_strides, c.len(), c_strides);
                let (m, k, n) = dims;
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        for i in 0..m {
                            for j in 0..n {
                                c[i * c_strides.0 + j * c_strides.1] = 0.0;
                            }
                        }
                    }
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: every index reachable from the strides was bounds
                // checked above and the three slices cannot alias (`c` is a
                // unique borrow).
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

float_scalar!(f64, "f64", matrixmultiply::dgemm);
float_scalar!(f32, "f32", matrixmultiply::sgemm);

/// A first-order dual number `re + eps·ε` with `ε² = 0`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.re;
        Dual::new(self.re * inv, (self.eps * o.re - self.re * o.eps) * inv * inv)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, o: Dual) {
        *self = *self + o;
    }
}

impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, o: Dual) {
        *self = *self - o;
    }
}

impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, o: Dual) {
        *self = *self * o;
    }
}

impl Scalar for Dual {
    const NAME: &'static str = "dual";

    #[inline]
    fn from_f64(v: f64) -> Self {
        Dual::new(v, 0.0)
    }

    #[inline]
    fn primal(self) -> f64 {
        self.re
    }

    #[inline]
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, e * self.eps)
    }

    #[inline]
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.eps / self.re)
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.eps.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_product_rule() {
        let x = Dual::new(3.0, 1.0);
        let y = x * x * x;
        assert_eq!(y, Dual::new(27.0, 27.0));
        let q = Dual::new(1.0, 0.0) / x;
        assert!((q.eps + 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn dual_exp_ln() {
        let x = Dual::new(0.5, 2.0);
        let e = x.exp();
        assert!((e.eps - 2.0 * 0.5f64.exp()).abs() < 1e-15);
        let l = x.ln();
        assert!((l.eps - 4.0).abs() < 1e-15);
    }

    #[test]
    fn blas_gemm_matches_naive() {
        let a: Vec<f64> = (0..12).map(|v| v as f64 * 0.37 - 1.0).collect();
        let b: Vec<f64> = (0..20).map(|v| (v as f64).sin()).collect();
        let mut fast = vec![0.0; 15];
        let mut slow = vec![0.0; 15];
        // A is 3x4 row-major, B is 4x5 column-major, C is 3x5 column-major.
        f64::gemm((3, 4, 5), &a, (4, 1), &b, (1, 4), &mut fast, (1, 3), false);
        naive_gemm((3, 4, 5), &a, (4, 1), &b, (1, 4), &mut slow, (1, 3), false);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}
