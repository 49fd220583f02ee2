//! Dense row-major `f64` arrays.
//!
//! A [`Tensor`] is a shape tag plus a flat buffer. The last dimension is
//! contiguous, so a `[rows, cols]` tensor stores row `r` at
//! `data[r * cols..(r + 1) * cols]`. There is no broadcasting and no view
//! machinery; callers that need a different layout copy.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl Tensor {
    /// Builds a tensor, checking that `dims` is non-empty, has no zero
    /// extent, and matches the buffer length.
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid dims {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), vec![0.0; n])
    }

    /// One-dimensional tensor over `values`.
    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn as_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.dims.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Shape(format!("{what}: expected a matrix, got dims {other:?}"))),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// Index of the largest entry; ties go to the smallest index.
    pub fn max_index(&self) -> usize {
        max_index(&self.data)
    }
}

/// First index attaining the maximum of a non-empty slice.
pub fn max_index(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn elementwise(a: &Tensor, b: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
    if a.dims != b.dims {
        return Err(Error::Shape(format!(
            "elementwise {op:?}: dims {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    let f: fn(f64, f64) -> f64 = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul => |x, y| x * y,
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor {
        dims: a.dims.clone(),
        data,
    })
}

/// Which operands of a product are read transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transpose {
    None,
    Left,
    Right,
}

/// `a × b` for `a: [R, K]`, `b: [K, C]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_t(a, b, Transpose::None)
}

/// Matrix product with one operand optionally read transposed.
///
/// `Transpose::Left` computes `aᵀ × b`, `Transpose::Right` computes
/// `a × bᵀ`. No copy of the transposed operand is made.
pub fn matmul_t(a: &Tensor, b: &Tensor, transpose: Transpose) -> Result<Tensor> {
    let (ar, ac) = a.as_matrix("matmul lhs")?;
    let (br, bc) = b.as_matrix("matmul rhs")?;
    let (m, k, ka, n) = match transpose {
        Transpose::None => (ar, ac, br, bc),
        Transpose::Left => (ac, ar, br, bc),
        Transpose::Right => (ar, ac, bc, br),
    };
    if k != ka {
        return Err(Error::Shape(format!(
            "matmul inner dims differ: {:?} x {:?} ({transpose:?})",
            a.dims, b.dims
        )));
    }
    let (rsa, csa) = match transpose {
        Transpose::Left => (1, ac as isize),
        _ => (ac as isize, 1),
    };
    let (rsb, csb) = match transpose {
        Transpose::Right => (1, bc as isize),
        _ => (bc as isize, 1),
    };
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, (rsa, csa), &b.data, (rsb, csb), &mut out);
    Tensor::matrix(m, n, out)
}

/// `c = a × b` on raw strided buffers. `c` is row-major `m × n` and is
/// overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let max_a = (m as isize - 1) * rsa + (k as isize - 1) * csa;
    let max_b = (k as isize - 1) * rsb + (n as isize - 1) * csb;
    assert!((max_a as usize) < a.len() && (max_b as usize) < b.len());
    // SAFETY: the asserts above bound every index dgemm touches within the
    // three slices; strides are non-negative.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
