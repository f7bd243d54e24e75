//! Minimal CPU tensor engine with hand-written backward passes.
//!
//! Tensors are NCHW. Layers are generic over [`Real`] so that training runs in `f32`
//! while gradient checks run the very same code in `f64`.

pub mod check;
pub mod layers;
pub mod optim;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Send + Sync + Debug + Default + 'static
{
    /// Raw strided GEMM: `C = alpha·A·B + beta·C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (m×n) = alpha·op(A)·op(B) + beta·C` over contiguous row-major buffers, where
/// `op(A)` is `m×k` (stored `k×m` when `trans_a`) and `op(B)` is `k×n` (stored `n×k`
/// when `trans_b`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert!(
        a.len() >= m * k && b.len() >= k * n && c.len() >= m * n,
        "gemm operand sizes"
    );
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes asserted above; strides describe the stated row-major layouts.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(data.len(), shape.iter().product::<usize>(), "tensor data length");
        Self { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Elements of one (sample, channel) plane.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Elements of one sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Self {
        assert_eq!(a.shape[0], b.shape[0]);
        assert_eq!(&a.shape[2..], &b.shape[2..], "concat spatial shapes");
        let (la, lb) = (a.sample_len(), b.sample_len());
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for n in 0..a.batch() {
            data.extend_from_slice(&a.data[n * la..(n + 1) * la]);
            data.extend_from_slice(&b.data[n * lb..(n + 1) * lb]);
        }
        Self {
            shape: [a.shape[0], a.shape[1] + b.shape[1], a.shape[2], a.shape[3]],
            data,
        }
    }

    /// Inverse of [`Tensor::concat_channels`]: splits after `first` channels.
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let plane = self.plane();
        let (la, lb) = (first * plane, (self.shape[1] - first) * plane);
        let mut a = Vec::with_capacity(self.batch() * la);
        let mut b = Vec::with_capacity(self.batch() * lb);
        for n in 0..self.batch() {
            let s = self.sample(n);
            a.extend_from_slice(&s[..la]);
            b.extend_from_slice(&s[la..]);
        }
        (
            Self::from_vec([self.shape[0], first, self.shape[2], self.shape[3]], a),
            Self::from_vec([self.shape[0], self.shape[1] - first, self.shape[2], self.shape[3]], b),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]] (2×3), B = [[1,0],[0,1],[1,1]] (3×2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm(false, false, 2, 2, 3, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [1.0f64; 4];
        gemm(true, true, 2, 2, 3, 1.0, &at, &bt, 1.0, &mut c2);
        assert_eq!(c2, [5.0, 6.0, 11.0, 12.0]);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::<f32>::from_vec([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::<f32>::from_vec([2, 2, 1, 2], (0..8).map(|v| v as f32).collect());
        let c = Tensor::concat_channels(&a, &b);
        assert_eq!(c.shape, [2, 3, 1, 2]);
        assert_eq!(&c.data[..6], &[1.0, 2.0, 0.0, 1.0, 2.0, 3.0]);
        let (a2, b2) = c.split_channels(1);
        assert_eq!((a2, b2), (a, b));
    }
}
