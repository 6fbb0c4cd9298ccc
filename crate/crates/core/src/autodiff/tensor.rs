//! Dense row-major 64-bit tensors and the fixed sparse adjacency operand.

use crate::error::{Error, Result};

/// Dense matrix of `f64` values in row-major order. Vectors are 1×d or d×1
/// tensors; scalars are 1×1.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 12 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        Self { rows, cols, data }
    }

    /// Build from nested rows; handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn scalar_value(v: f64) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
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

    /// Value of a 1×1 tensor.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "tensor is not a scalar");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Squared Euclidean distance between row `i` of `self` and row `j` of
    /// `other`.
    pub fn row_dist2(&self, i: usize, other: &Tensor, j: usize) -> f64 {
        debug_assert_eq!(self.cols, other.cols);
        self.row(i)
            .iter()
            .zip(other.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Dense product `alpha * op(a) * op(b)`, where `op` optionally
    /// transposes. Backed by `matrixmultiply`.
    pub fn matmul(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
        let (m, ka) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
        let (kb, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
        if ka != kb {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: format!("inner dimension {ka}"),
                got: format!("{kb}"),
            });
        }
        let mut out = Tensor::zeros(m, n);
        gemm(1.0, a, ta, b, tb, 0.0, &mut out);
        Ok(out)
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`. Shapes must already agree.
pub fn gemm(alpha: f64, a: &Tensor, ta: bool, b: &Tensor, tb: bool, beta: f64, c: &mut Tensor) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(if tb { b.cols } else { b.rows }, k);
    debug_assert_eq!(c.shape(), (m, n));
    // Row-major strides; a transpose swaps them.
    let (rsa, csa) = if ta {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if tb {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    if m == 0 || n == 0 || k == 0 {
        for v in c.data_mut() {
            *v *= beta;
        }
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
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

/// Sparse matrix in CSR form. Used for the (constant) adjacency operand of
/// the convolution layers; never a differentiation target.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Build from per-row entry lists. Entries must be sorted by column and
    /// in range; this is the caller's contract.
    pub fn from_row_entries(rows: usize, cols: usize, entries: &[Vec<(usize, f64)>]) -> Self {
        assert_eq!(entries.len(), rows);
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in entries {
            for &(j, v) in row {
                debug_assert!(j < cols);
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Stack square blocks along the diagonal.
    pub fn block_diag(blocks: &[&SparseMatrix]) -> Self {
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let nnz: usize = blocks.iter().map(|b| b.col_idx.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        let mut col_off = 0;
        for b in blocks {
            for i in 0..b.rows {
                for e in b.row_ptr[i]..b.row_ptr[i + 1] {
                    col_idx.push(b.col_idx[e] + col_off);
                    values.push(b.values[e]);
                }
                row_ptr.push(col_idx.len());
            }
            col_off += b.cols;
        }
        Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `out = self * x` (dense).
    pub fn mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(self.cols, x.rows(), "spmm shape mismatch");
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        for i in 0..self.rows {
            let dst = out.row_mut(i);
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.values[e];
                let src = x.row(self.col_idx[e]);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }

    /// `out = selfᵀ * x` (dense); the adjoint of [`SparseMatrix::mul_dense`].
    pub fn transpose_mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(self.rows, x.rows(), "spmm-transpose shape mismatch");
        let d = x.cols();
        let mut out = Tensor::zeros(self.cols, d);
        for i in 0..self.rows {
            let src = x.row(i);
            for e in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.values[e];
                let dst = out.row_mut(self.col_idx[e]);
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_matches_hand_product() {
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = Tensor::matmul(&a, false, &b, false).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_transpose_flags() {
        let a = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]); // 2x3
        let b = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]); // 3x2
        let nt = Tensor::matmul(&a, false, &b, false).unwrap(); // 2x2
        let tt = Tensor::matmul(&b, true, &a, true).unwrap(); // (3x2)ᵀ(2x3)ᵀ = 2x2 = ntᵀ
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(nt.get(i, j), tt.get(j, i), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(Tensor::matmul(&a, false, &b, false).is_err());
        assert!(Tensor::matmul(&a, false, &b, true).is_ok());
    }

    #[test]
    fn sparse_mul_and_adjoint_agree_with_dense() {
        // 3x3: edges 0-1, 1-2 as a symmetric adjacency.
        let entries = vec![
            vec![(1usize, 1.0)],
            vec![(0, 1.0), (2, 1.0)],
            vec![(1, 1.0)],
        ];
        let a = SparseMatrix::from_row_entries(3, 3, &entries);
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let y = a.mul_dense(&x);
        assert_eq!(y.row(0), &[3.0, 4.0]);
        assert_eq!(y.row(1), &[6.0, 8.0]);
        assert_eq!(y.row(2), &[3.0, 4.0]);
        // Symmetric matrix: Aᵀx == Ax.
        let yt = a.transpose_mul_dense(&x);
        assert_eq!(y.data(), yt.data());
    }

    #[test]
    fn block_diag_keeps_blocks_independent() {
        let a = SparseMatrix::from_row_entries(2, 2, &[vec![(1, 1.0)], vec![(0, 1.0)]]);
        let b = SparseMatrix::from_row_entries(1, 1, &[vec![(0, 2.0)]]);
        let m = SparseMatrix::block_diag(&[&a, &b]);
        let x = Tensor::from_rows(&[&[1.0], &[10.0], &[100.0]]);
        let y = m.mul_dense(&x);
        assert_eq!(y.data(), &[10.0, 1.0, 200.0]);
    }
}
