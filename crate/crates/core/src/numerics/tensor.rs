use crate::error::{Error, Result};

use super::scalar::Scalar;

/// Dense row-major array with a fixed shape.
///
/// Values are immutable once an operation has produced them; gradient
/// tracking lives on the [`Tape`](super::Tape) that records operations.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} must have positive extents"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix over the last axis.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub(crate) fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::Dimension(format!("{what} expects a matrix, got shape {s:?}"))),
        }
    }
}

/// Row-major `a @ b` with optional transposes, into a fresh buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_new<T: Scalar>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
) -> Vec<T> {
    let m = if trans_a { a_cols } else { a_rows };
    let n = if trans_b { b_rows } else { b_cols };
    let mut out = Vec::with_capacity(m * n);
    // SAFETY: with beta = 0 the kernel writes every element of C without
    // reading it, so all m*n elements are initialised before set_len.
    unsafe {
        gemm_raw(a, a_rows, a_cols, trans_a, b, b_rows, b_cols, trans_b, out.as_mut_ptr(), T::zero());
        out.set_len(m * n);
    }
    out
}

/// # Safety
/// `out` must be valid for `m*n` writes (and reads unless `beta` is zero).
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_raw<T: Scalar>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    trans_a: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    trans_b: bool,
    out: *mut T,
    beta: T,
) {
    let (m, k, rsa, csa) = if trans_a {
        (a_cols, a_rows, 1, a_cols as isize)
    } else {
        (a_rows, a_cols, a_cols as isize, 1)
    };
    let (k2, n, rsb, csb) = if trans_b {
        (b_cols, b_rows, 1, b_cols as isize)
    } else {
        (b_rows, b_cols, b_cols as isize, 1)
    };
    assert_eq!(k, k2, "gemm inner extents");
    assert!(a.len() >= a_rows * a_cols && b.len() >= b_rows * b_cols);
    T::gemm(m, k, n, T::one(), a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, out, n as isize, 1);
}

/// A strided view of a matrix inside a slice: element `(i, j)` is at
/// `offset + i·rs + j·cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn rows(offset: usize, rs: usize) -> View {
        View { offset, rs, cs: 1 }
    }

    pub fn transposed(offset: usize, rs: usize) -> View {
        View { offset, rs: 1, cs: rs }
    }

    fn check(self, len: usize, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < len, "strided view reaches {last}, slice has {len}");
        }
    }
}

/// `c ← a·b + beta·c` for an `[m×k]` view of `a` and a `[k×n]` view of `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_view<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    va: View,
    b: &[T],
    vb: View,
    beta: T,
    c: &mut [T],
    vc: View,
) {
    va.check(a.len(), m, k);
    vb.check(b.len(), k, n);
    vc.check(c.len(), m, n);
    // SAFETY: every view was bounds-checked above and `c` is exclusively
    // borrowed, so it cannot alias `a` or `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(va.offset),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr().add(vb.offset),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr().add(vc.offset),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

/// Standard matrix product of `[m×k]` and `[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.expect_matrix("matmul")?;
    let (k2, n) = b.expect_matrix("matmul")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let out = gemm_new(a.data(), m, k, false, b.data(), k, n, false);
    Tensor::new(vec![m, n], out)
}

/// Normalizes every row of the last axis to zero mean and unit variance
/// (population variance plus `eps`). Returns the output and per-row
/// inverse standard deviations.
pub(crate) fn layer_norm_forward<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    let d = x.cols();
    if d < 2 {
        return Err(Error::Degenerate(format!(
            "layer norm needs at least 2 columns, got {d}"
        )));
    }
    let inv_d = T::one() / T::from_usize(d).expect("usize fits");
    let mut out = Vec::with_capacity(x.numel());
    let mut inv_std = Vec::with_capacity(x.rows());
    for row in x.data().chunks_exact(d) {
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        out.extend(row.iter().map(|&v| (v - mean) * r));
        inv_std.push(r);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, inv_std))
}

pub fn layer_norm_rows<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    layer_norm_forward(x, eps).map(|(y, _)| y)
}

/// Row-wise softmax over the last axis, stabilised by max subtraction.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.data().iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("softmax input contains NaN".into()));
    }
    let d = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(d) {
        softmax_in_place(row);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).fast_exp();
        total = total + *v;
    }
    let inv = T::one() / total;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).fast_exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_hand_examples() {
        let a = m(&[&[1., 2.], &[3., 4.]]);
        let eye = m(&[&[1., 0.], &[0., 1.]]);
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let zero = m(&[&[0., 0.], &[0., 0.]]);
        assert_eq!(matmul(&a, &zero).unwrap(), zero);
        let col = m(&[&[5.], &[6.]]);
        assert_eq!(matmul(&a, &col).unwrap().data(), &[17., 39.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = m(&[&[1., 2., 3.]]);
        let b = m(&[&[1., 2.]]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[1, 3]") && err.contains("[1, 2]"), "{err}");
    }

    #[test]
    fn layer_norm_examples() {
        let x = m(&[&[5., 5., 5., 5.]]);
        assert_eq!(layer_norm_rows(&x, 1e-6).unwrap().data(), &[0.; 4]);
        let x = m(&[&[1., -1.], &[0., 2.]]);
        assert_eq!(layer_norm_rows(&x, 0.0).unwrap().data(), &[1., -1., -1., 1.]);
        assert!(matches!(
            layer_norm_rows(&m(&[&[1.], &[2.]]), 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&m(&[&[0., 0.]])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_rows(&m(&[&[712.5, 712.5, 712.5]])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax_rows(&m(&[&[1f64.ln(), 3f64.ln()]])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15 && (y.data()[1] - 0.75).abs() < 1e-15);
        assert!(matches!(
            softmax_rows(&m(&[&[f64::NAN, 0.]])),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0, 2], vec![]).is_err());
    }
}
