//! Dense 4-D tensors in `[batch, channels, height, width]` layout.
//!
//! Every activation, parameter and gradient in the network is a [`Tensor`].
//! Storage is a flat row-major `Vec`, so `(n, c, y, x)` lives at
//! `((n * C + c) * H + y) * W + x`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float as NumFloat, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Element type of a tensor.
///
/// Implemented for `f32` (training and inference) and `f64` (gradient
/// checks). The GEMM entry point is the only place that needs to know the
/// concrete width.
pub trait Float:
    NumFloat
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    const DTYPE: &'static str;

    /// `c = alpha * a(m×k) · b(k×n) + beta * c`, all row-major with
    /// explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts")
    }
}

macro_rules! impl_float {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Float for $t {
            const DTYPE: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
                assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
                assert!(span(m, n, rsc, csc) <= c.len(), "gemm: out out of bounds");
                // SAFETY: the asserts above bound every index the kernel
                // touches for non-negative strides, which is all we use.
                unsafe {
                    $gemm(
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
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    debug_assert!(rs >= 0 && cs >= 0);
    (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
}

impl_float!(f32, "f32", matrixmultiply::sgemm);
impl_float!(f64, "f64", matrixmultiply::dgemm);

/// Shape of a 4-D tensor: `[n, c, h, w]`.
pub type Shape = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Float> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(z * std)
            })
            .collect();
        Self { shape, data }
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(lo..hi)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }
    pub fn c(&self) -> usize {
        self.shape[1]
    }
    pub fn h(&self) -> usize {
        self.shape[2]
    }
    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    /// One `[H*W]` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// All channels of sample `n` as a `[C*H*W]` slice.
    pub fn sample(&self, n: usize) -> &[T] {
        let chw = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * chw..(n + 1) * chw]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    pub fn min_value(&self) -> T {
        self.data
            .iter()
            .copied()
            .fold(T::infinity(), |a, b| if b < a { b } else { a })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, e.g. an `f32` checkpoint into an `f64` model.
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!(
                    "stack: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: [n, c, h, w],
            data,
        })
    }

    /// Splits the batch axis into single-sample tensors.
    pub fn unstack(&self) -> Vec<Tensor<T>> {
        let [n, c, h, w] = self.shape;
        (0..n)
            .map(|i| Tensor {
                shape: [1, c, h, w],
                data: self.sample(i).to_vec(),
            })
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}
