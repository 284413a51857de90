//! Dense row-major tensors.
//!
//! Almost everything in the network is a 2-D `[tokens, features]` matrix, so
//! the helpers here are biased towards that case. Matrix products go through
//! `matrixmultiply`, transposes are expressed as stride swaps.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::Scalar;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        Self::from_fn(shape, |_| T::of(dist.sample(rng)))
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], scale: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * scale)
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err(format!("cannot reshape {:?} to {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Columns of a matrix (product of trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Vec<T> {
        let c = self.cols();
        let mut out = vec![T::zero(); c];
        for r in self.data.chunks_exact(c.max(1)) {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// Adds `bias` to every row.
    pub fn add_row(&mut self, bias: &[T]) {
        let c = self.cols();
        debug_assert_eq!(c, bias.len());
        for r in self.data.chunks_exact_mut(c.max(1)) {
            for (o, &b) in r.iter_mut().zip(bias) {
                *o += b;
            }
        }
    }

    /// Copies rows `[start, start+n)` into a new matrix.
    pub fn slice_rows(&self, start: usize, n: usize) -> Self {
        let c = self.cols();
        let mut shape = self.shape.clone();
        shape[0] = n;
        Self {
            shape,
            data: self.data[start * c..(start + n) * c].to_vec(),
        }
    }

    /// Copies columns `[start, start+n)` of a matrix.
    pub fn slice_cols(&self, start: usize, n: usize) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(r * n);
        for i in 0..r {
            data.extend_from_slice(&self.data[i * c + start..i * c + start + n]);
        }
        Self {
            shape: vec![r, n],
            data,
        }
    }

    /// Writes `src` into columns `[start, start + src.cols())`, accumulating.
    pub fn add_into_cols(&mut self, start: usize, src: &Self) {
        let (r, c) = (self.rows(), self.cols());
        let n = src.cols();
        debug_assert_eq!(r, src.rows());
        for i in 0..r {
            let dst = &mut self.data[i * c + start..i * c + start + n];
            for (d, &s) in dst.iter_mut().zip(src.row(i)) {
                *d += s;
            }
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[Self]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("vstack of nothing".into()));
        };
        let c = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols() != c {
                return shape_err(format!("vstack column mismatch {} vs {c}", p.cols()));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![rows, c],
            data,
        })
    }

    /// Matrix product `op(self) · op(other)`, where `op` transposes when asked.
    pub fn matmul_t(&self, ta: bool, other: &Self, tb: bool) -> Result<Self> {
        let (m, k) = dims(self, ta);
        let (k2, n) = dims(other, tb);
        if k != k2 {
            return shape_err(format!(
                "matmul {:?}{} x {:?}{}",
                self.shape,
                if ta { "ᵀ" } else { "" },
                other.shape,
                if tb { "ᵀ" } else { "" }
            ));
        }
        let mut out = Self::zeros(&[m, n]);
        gemm_into(T::one(), self, ta, other, tb, T::zero(), &mut out);
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_t(false, other, false)
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }
}

fn dims<T: Scalar>(t: &Tensor<T>, trans: bool) -> (usize, usize) {
    if trans {
        (t.cols(), t.rows())
    } else {
        (t.rows(), t.cols())
    }
}

/// `c = alpha · op(a) · op(b) + beta · c`. Panics on shape disagreement;
/// callers validate shapes first.
pub fn gemm_into<T: Scalar>(
    alpha: T,
    a: &Tensor<T>,
    ta: bool,
    b: &Tensor<T>,
    tb: bool,
    beta: T,
    c: &mut Tensor<T>,
) {
    let (m, k) = dims(a, ta);
    let (k2, n) = dims(b, tb);
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!((c.rows(), c.cols()), (m, n), "gemm output shape");
    let (ar, ac) = (a.cols() as isize, 1isize);
    let (rsa, csa) = if ta { (ac, ar) } else { (ar, ac) };
    let (br, bc) = (b.cols() as isize, 1isize);
    let (rsb, csb) = if tb { (bc, br) } else { (br, bc) };
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.scale(beta);
        return;
    }
    // SAFETY: extents were checked against the tensor shapes above and `c`
    // is a distinct, exclusively borrowed buffer.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
