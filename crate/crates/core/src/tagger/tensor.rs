//! Dense row-major tensors over `f32` (training) or `f64` (gradient checks).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Scalar:
    Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static
{
    /// `c = a · b + beta · c` on strided views; see [`gemm`].
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m × k`, `k × n` and
    /// `m × n` views, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
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

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
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
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// A strided matrix view into a slice: element `(i, j)` is at
/// `offset + i * rs + j * cs`.
#[derive(Debug, Clone, Copy)]
pub struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// A plain row-major `rows × cols` matrix.
    pub fn dense(rows: usize, cols: usize) -> Self {
        View {
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Columns `[col, col + width)` of a row-major matrix with `stride` columns.
    pub fn columns(rows: usize, stride: usize, col: usize, width: usize) -> Self {
        View {
            offset: col,
            rows,
            cols: width,
            rs: stride,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.offset
        } else {
            self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = a · b` (or `c += a · b` when `accumulate`) with bounds checking.
pub fn gemm<F: Scalar>(a: &[F], av: View, b: &[F], bv: View, c: &mut [F], cv: View, accumulate: bool) {
    assert_eq!(av.cols, bv.rows, "inner dimensions");
    assert_eq!((av.rows, bv.cols), (cv.rows, cv.cols), "output shape");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(cv.last_index() < c.len());
    if av.cols == 0 {
        if !accumulate {
            for i in 0..cv.rows {
                for j in 0..cv.cols {
                    c[cv.offset + i * cv.rs + j * cv.cs] = F::zero();
                }
            }
        }
        return;
    }
    assert!(av.last_index() < a.len());
    assert!(bv.last_index() < b.len());
    let beta = if accumulate { F::one() } else { F::zero() };
    // SAFETY: every view's largest reachable index was checked against its
    // slice, and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        F::raw_gemm(
            av.rows,
            av.cols,
            bv.cols,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[F] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn view(&self) -> View {
        let cols = self.cols();
        View::dense(self.data.len() / cols.max(1), cols)
    }

    pub fn norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, factor: F) {
        for v in &mut self.data {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2×3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 1.0).collect(); // 4×3
        let mut c = vec![0.0; 8];
        gemm(
            &a,
            View::dense(2, 3),
            &b,
            View::dense(4, 3).t(),
            &mut c,
            View::dense(2, 4),
            false,
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[j * 3 + k]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
        let before = c.clone();
        gemm(
            &a,
            View::dense(2, 3),
            &b,
            View::dense(4, 3).t(),
            &mut c,
            View::dense(2, 4),
            true,
        );
        for (x, y) in c.iter().zip(&before) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn column_views_select_heads() {
        // 2×4 matrix, take columns 2..4 and multiply by identity.
        let a: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let eye = vec![1.0f32, 0.0, 0.0, 1.0];
        let mut c = vec![0.0f32; 4];
        gemm(
            &a,
            View::columns(2, 4, 2, 2),
            &eye,
            View::dense(2, 2),
            &mut c,
            View::dense(2, 2),
            false,
        );
        assert_eq!(c, vec![2.0, 3.0, 6.0, 7.0]);
    }
}
