//! Dense row-major matrices and the handful of products the models need.
//!
//! Everything is `f64`. Sizes here are tiny (hidden widths of 16, inputs of a
//! few hundred), so plain loops over contiguous rows beat any BLAS dispatch
//! overhead and keep results bit-reproducible across platforms.

use crate::error::{Error, Result};

/// Owned vector of 64-bit floats.
pub type Vector = Vec<f64>;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data. Length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix::from_vec",
                left: format!("{rows}x{cols}"),
                right: format!("data length {}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Matrix> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "Matrix::from_rows",
                    left: format!("row length {c}"),
                    right: format!("row length {}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Matrix::from_vec(r, c, data)
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the given rows into a new matrix, in the order given.
    pub fn gather_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (i, &src) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(src));
        }
        out
    }

    /// `self * other^T`: (B x D) * (M x D) -> (B x M).
    ///
    /// Both operands are walked along contiguous rows.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(shape_err("matmul_nt", self, other));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = out.row_mut(i);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `self * other`: (B x M) * (M x D) -> (B x D).
    pub fn matmul_nn(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err("matmul_nn", self, other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = out.row_mut(i);
            for (m, &s) in a.iter().enumerate() {
                axpy(s, other.row(m), dst);
            }
        }
        Ok(out)
    }

    /// `self^T * other`: (B x M) and (B x D) -> (M x D).
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(shape_err("matmul_tn", self, other));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for b in 0..self.rows {
            let a = self.row(b);
            let src = other.row(b);
            for (m, &s) in a.iter().enumerate() {
                axpy(s, src, out.row_mut(m));
            }
        }
        Ok(out)
    }

    /// `self^T * v`: (B x M) and length-B vector -> length-M vector.
    pub fn tdot(&self, v: &[f64]) -> Result<Vector> {
        if self.rows != v.len() {
            return Err(Error::ShapeMismatch {
                op: "Matrix::tdot",
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("vector length {}", v.len()),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (b, &s) in v.iter().enumerate() {
            axpy(s, self.row(b), &mut out);
        }
        Ok(out)
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(self.cols, v.len());
        for r in 0..self.rows {
            for (d, s) in self.row_mut(r).iter_mut().zip(v) {
                *d += s;
            }
        }
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::ShapeMismatch {
        op,
        left: format!("{}x{}", a.rows, a.cols),
        right: format!("{}x{}", b.rows, b.cols),
    }
}

/// Dot product of equal-length slices.
///
/// Eight fixed-lane accumulators break the floating-point dependence chain;
/// the summation order is fixed, so results stay bit-reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [0.0f64; 8];
    let a_chunks = a.chunks_exact(8);
    let b_chunks = b.chunks_exact(8);
    let a_rem = a_chunks.remainder();
    let b_rem = b_chunks.remainder();
    for (ca, cb) in a_chunks.zip(b_chunks) {
        for i in 0..8 {
            lanes[i] += ca[i] * cb[i];
        }
    }
    let mut acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    for (x, y) in a_rem.iter().zip(b_rem) {
        acc += x * y;
    }
    acc
}

/// `dst += s * src`, elementwise.
pub fn axpy(s: f64, src: &[f64], dst: &mut [f64]) {
    debug_assert_eq!(src.len(), dst.len());
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

/// `W x + b`. `W` is (rows x cols), `x` has length `cols`, `b` length `rows`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vector> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "affine",
            left: format!("W {}x{}", w.rows(), w.cols()),
            right: format!("x length {}, b length {}", x.len(), b.len()),
        });
    }
    let mut out = b.to_vec();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(w.row(r), x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_identity() {
        let w = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(affine(&w, &[3.0, 4.0], &[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn affine_scalar() {
        let w = Matrix::from_rows(&[&[2.0]]).unwrap();
        assert_eq!(affine(&w, &[5.0], &[1.0]).unwrap(), vec![11.0]);
    }

    #[test]
    fn affine_direct_arithmetic() {
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(affine(&w, &[1.0, 1.0], &[1.0, 0.0]).unwrap(), vec![4.0, 7.0]);
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let w = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        let err = affine(&w, &[1.0], &[0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2"), "error must name the shapes: {msg}");
        assert!(msg.contains("x length 1"), "error must name the shapes: {msg}");
    }

    #[test]
    fn matmul_shapes_and_values() {
        // a: 2x3, b: 2x3 -> nt gives 2x2
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let nt = a.matmul_nt(&a).unwrap();
        assert_eq!(nt.shape(), (2, 2));
        assert_eq!(nt.get(0, 1), 32.0);
        assert_eq!(nt.get(1, 0), 32.0);

        let b = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]).unwrap();
        let nn = a.matmul_nn(&b).unwrap();
        assert_eq!(nn.shape(), (2, 2));
        assert_eq!(nn.get(0, 0), 4.0); // 1 + 3
        assert_eq!(nn.get(1, 1), 11.0); // 5 + 6

        let tn = a.matmul_tn(&a).unwrap();
        assert_eq!(tn.shape(), (3, 3));
        assert_eq!(tn.get(0, 2), 27.0); // 1*3 + 4*6
    }

    proptest! {
        // affine(W, a x + b y, 0) = a affine(W,x,0) + b affine(W,y,0)
        #[test]
        fn affine_is_linear(
            seedable in proptest::collection::vec(-10.0f64..10.0, 12),
            a in -10.0f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let w = Matrix::from_vec(2, 3, seedable[..6].to_vec()).unwrap();
            let x = &seedable[6..9];
            let y = &seedable[9..12];
            let zero = [0.0, 0.0];
            let combined: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect();
            let lhs = affine(&w, &combined, &zero).unwrap();
            let fx = affine(&w, x, &zero).unwrap();
            let fy = affine(&w, y, &zero).unwrap();
            for i in 0..2 {
                let rhs = a * fx[i] + b * fy[i];
                let scale = lhs[i].abs().max(rhs.abs()).max(1.0);
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale);
            }
        }
    }
}
