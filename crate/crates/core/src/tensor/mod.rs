//! Dense numeric arrays in batch-channel-height-width layout.
//!
//! A [`Tensor`] owns a contiguous row-major buffer (width fastest) of at most
//! four dimensions. Every operation here is a pure function: it borrows its
//! inputs and returns a fresh tensor, or an [`Error`] when shapes disagree or
//! the result contains NaN/Inf.
//!
//! Reductions accumulate in the element precision in a fixed, documented
//! order (ascending index along the reduced axis), so 64-bit results can be
//! compared bit-for-bit against naive loop oracles that use the same order.

mod conv;

pub use conv::{conv2d, conv2d_grad, Conv2dGrads, Conv2dParams};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element precision of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

/// Scalar element of a [`Tensor`]. Implemented for `f32` (training and
/// benchmarks) and `f64` (verification).
pub trait Element:
    Float + Default + Debug + Display + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;

    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        let head = &self.data[..self.data.len().min(PREVIEW)];
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &head)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("rank must be between 1 and {MAX_RANK}"),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be at least 1".into(),
        });
    }
    Ok(shape.iter().product())
}

fn ensure_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, a, b));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape holds {len} elements but {} were given", data.len()),
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.ensure_finite("tensor_build")?;
        Ok(t)
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let len = check_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "tensor_build" });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let len = check_shape(shape)?;
        Self::new(shape, (0..len).map(f).collect())
    }

    /// Wraps an already validated buffer. Used by kernels whose output shape
    /// is known to be valid; finiteness is still checked.
    pub(crate) fn from_parts(op: &'static str, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let t = Tensor { shape, data };
        t.ensure_finite(op)?;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the buffer. Callers are responsible for keeping
    /// the contents finite.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Returns the shape as `[B, C, H, W]`, failing for any other rank.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected a rank-4 [B, C, H, W] tensor".into(),
            }),
        }
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn cast<U: Element>(&self) -> Result<Tensor<U>> {
        Tensor::<U>::from_parts(
            "cast",
            self.shape.clone(),
            self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        )
    }

    /// Reinterprets the buffer with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!(
                    "cannot reshape {:?} ({} elements)",
                    self.shape,
                    self.data.len()
                ),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`. The result is
    /// contiguous.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = [false; MAX_RANK];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::InvalidPermutation(axes.to_vec()));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();

        let mut out = Vec::with_capacity(self.data.len());
        let mut index = vec![0usize; rank];
        for _ in 0..self.data.len() {
            let off: usize = index.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            out.push(self.data[off]);
            for ax in (0..rank).rev() {
                index[ax] += 1;
                if index[ax] < out_shape[ax] {
                    break;
                }
                index[ax] = 0;
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }

    fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        ensure_same_shape(op, &self.shape, &other.shape)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_parts(op, self.shape.clone(), data)
    }

    fn map(&self, op: &'static str, f: impl Fn(T) -> T) -> Result<Self> {
        Self::from_parts(
            op,
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Result<Self> {
        self.map("scale", |v| v * factor)
    }

    pub fn clamp(&self, lo: T, hi: T) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        self.map("clamp", |v| v.max(lo).min(hi))
    }

    pub fn relu(&self) -> Result<Self> {
        self.map("relu", |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Accumulates `other` into `self` in place.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        ensure_same_shape("add_assign", &self.shape, &other.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        self.ensure_finite("add_assign")
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// `c = a x b` for rank-2 operands. Each output element is accumulated
    /// from zero over `k` in ascending order.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &[k, n], other.shape()));
        }
        let a = &self.data;
        let b = &other.data;
        let mut c = vec![T::zero(); m * n];
        // i-k-j loop: every c[i, j] still sees k in ascending order.
        for i in 0..m {
            let row = &mut c[i * n..(i + 1) * n];
            for kk in 0..k {
                let aik = a[i * k + kk];
                let brow = &b[kk * n..(kk + 1) * n];
                for (cj, &bj) in row.iter_mut().zip(brow) {
                    *cj += aik * bj;
                }
            }
        }
        Self::from_parts("matmul", vec![m, n], c)
    }

    pub fn transpose2d(&self) -> Result<Self> {
        self.dims2("transpose2d")?;
        self.permute(&[1, 0])
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [m, n] => Ok((m, n)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a rank-2 tensor"),
            }),
        }
    }

    /// Mean over H x W for every (b, c): `[B, C, H, W] -> [B, C, 1, 1]`.
    /// Sums run in row-major spatial order and are divided once at the end.
    pub fn global_avg_pool(&self) -> Result<Self> {
        let [b, c, h, w] = self.dims4()?;
        let plane = h * w;
        let denom = T::from_f64(plane as f64);
        let out = self
            .data
            .chunks_exact(plane)
            .map(|p| p.iter().fold(T::zero(), |acc, &v| acc + v) / denom)
            .collect();
        Self::from_parts("global_avg_pool", vec![b, c, 1, 1], out)
    }
}

/// Gradient of [`Tensor::global_avg_pool`]: spreads `grad / (H * W)` over
/// each plane of an input with shape `input_shape`.
pub fn global_avg_pool_backward<T: Element>(
    grad: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let [b, c, h, w] = match *input_shape {
        [b, c, h, w] => [b, c, h, w],
        _ => {
            return Err(Error::shape(
                "global_avg_pool_backward",
                &[0, 0, 0, 0],
                input_shape,
            ))
        }
    };
    if grad.shape() != [b, c, 1, 1] {
        return Err(Error::shape(
            "global_avg_pool_backward",
            &[b, c, 1, 1],
            grad.shape(),
        ));
    }
    let denom = T::from_f64((h * w) as f64);
    let mut out = Vec::with_capacity(b * c * h * w);
    for &g in grad.data() {
        out.extend(std::iter::repeat(g / denom).take(h * w));
    }
    Tensor::from_parts("global_avg_pool_backward", input_shape.to_vec(), out)
}

/// Subgradient of relu: passes `grad` where `input > 0`, zero elsewhere
/// (including at exactly zero).
pub fn relu_backward<T: Element>(input: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    input.zip_map(grad, "relu_backward", |x, g| {
        if x > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

/// Gradient of `clamp(x, lo, hi)`: passes `grad` strictly inside the range.
pub fn clamp_backward<T: Element>(
    input: &Tensor<T>,
    grad: &Tensor<T>,
    lo: T,
    hi: T,
) -> Result<Tensor<T>> {
    input.zip_map(grad, "clamp_backward", |x, g| {
        if x > lo && x < hi {
            g
        } else {
            T::zero()
        }
    })
}

/// Gradients of `a * b` (pointwise) with respect to `a` and `b`.
pub fn mul_backward<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((grad.mul(b)?, grad.mul(a)?))
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_preserves_order() {
        let t = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = t.reshape(&[1, 4, 1, 1]).unwrap();
        assert_eq!(r.shape(), &[1, 4, 1, 1]);
        assert_eq!(r.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn permute_ones() {
        let t = Tensor::<f32>::ones(&[1, 2, 3, 4]).unwrap();
        let p = t.permute(&[0, 1, 3, 2]).unwrap();
        assert_eq!(p.shape(), &[1, 2, 4, 3]);
        assert!(p.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn permute_moves_values() {
        let t = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64).unwrap();
        let p = t.permute(&[1, 0]).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        assert_eq!(p.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn build_rejects_bad_input() {
        assert!(Tensor::<f64>::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::zeros(&[2, 0]).is_err());
        assert!(Tensor::<f64>::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f64>::full(&[2], f64::NAN).is_err());
        let t = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert!(matches!(
            t.permute(&[0, 0]),
            Err(Error::InvalidPermutation(_))
        ));
        assert!(t.permute(&[0, 2]).is_err());
    }

    #[test]
    fn matmul_hand_values() {
        let a = Tensor::<f64>::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);

        let eye = Tensor::<f64>::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }).unwrap();
        let b = Tensor::<f64>::from_fn(&[3, 2], |i| i as f64 * 0.5 - 1.0).unwrap();
        assert_eq!(eye.matmul(&b).unwrap(), b);

        assert!(a.matmul(&Tensor::zeros(&[3, 1]).unwrap()).is_err());
    }

    #[test]
    fn pooling() {
        let t = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.global_avg_pool().unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full(&[2, 3, 4, 5], 0.75).unwrap();
        assert!(c
            .global_avg_pool()
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.75));

        let g = Tensor::<f64>::ones(&[1, 1, 1, 1]).unwrap();
        let gi = global_avg_pool_backward(&g, &[1, 1, 2, 2]).unwrap();
        assert_eq!(gi.data(), &[0.25; 4]);
    }

    #[test]
    fn elementwise_suite() {
        let x = Tensor::<f64>::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(x.relu().unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(x.add(&Tensor::zeros(&[3]).unwrap()).unwrap(), x);
        let y = Tensor::<f64>::new(&[3], vec![-0.2, 0.5, 1.3]).unwrap();
        assert_eq!(y.clamp(0.0, 1.0).unwrap().data(), &[0.0, 0.5, 1.0]);
        assert!(x.add(&Tensor::zeros(&[4]).unwrap()).is_err());

        let g = Tensor::<f64>::ones(&[3]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 1.0]);
        assert_eq!(x.scale(2.0).unwrap().data(), &[-2.0, 0.0, 4.0]);
        assert_eq!(x.sub(&x).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn overflow_is_reported() {
        let x = Tensor::<f32>::full(&[2], f32::MAX).unwrap();
        assert!(matches!(x.add(&x), Err(Error::NonFinite { op: "add" })));
    }

    #[test]
    fn inputs_are_not_mutated() {
        let x = Tensor::<f64>::new(&[3], vec![-1.0, 0.5, 2.0]).unwrap();
        let before = x.clone();
        let _ = x.relu().unwrap();
        let _ = x.scale(3.0).unwrap();
        let _ = x.mul(&x).unwrap();
        assert_eq!(x, before);
    }
}
