//! Small dense containers: stacked block vectors and row-major matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `N` blocks of `n` reals stored contiguously: `x = (x_1, ..., x_N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stacked {
    blocks: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Stacked {
    pub fn zeros(blocks: usize, dim: usize) -> Self {
        Self {
            blocks,
            dim,
            data: vec![0.0; blocks * dim],
        }
    }

    pub fn from_blocks(blocks: &[Vec<f64>]) -> Result<Self> {
        let dim = blocks.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(blocks.len() * dim);
        for b in blocks {
            if b.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: b.len(),
                    context: "stacked block length",
                });
            }
            data.extend_from_slice(b);
        }
        Ok(Self {
            blocks: blocks.len(),
            dim,
            data,
        })
    }

    pub fn from_flat(blocks: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != blocks * dim {
            return Err(Error::Dimension {
                expected: blocks * dim,
                got: data.len(),
                context: "stacked flat length",
            });
        }
        Ok(Self { blocks, dim, data })
    }

    /// Every block equal to `v`.
    pub fn consensus(blocks: usize, v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(blocks * v.len());
        for _ in 0..blocks {
            data.extend_from_slice(v);
        }
        Self {
            blocks,
            dim: v.len(),
            data,
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.blocks)
    }

    pub fn blocks_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        self.data.chunks_mut(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Block-wise average `(1/N) sum_i x_i`.
    pub fn mean_block(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for b in self.blocks() {
            for (acc, v) in m.iter_mut().zip(b) {
                *acc += v;
            }
        }
        let inv = 1.0 / self.blocks as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    pub fn same_shape(&self, other: &Stacked) -> bool {
        self.blocks == other.blocks && self.dim == other.dim
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: data.len(),
                context: "matrix data length",
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    expected: cols,
                    got: r.len(),
                    context: "matrix row length",
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `out = A x`
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(self.row(r), x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out = A^T y`
    pub fn tmul_vec_into(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += yr * a;
            }
        }
    }

    pub fn tmul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.tmul_vec_into(y, &mut out);
        out
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: other.cols,
                context: "vstack column count",
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Largest squared singular value by power iteration on `A^T A`.
    ///
    /// Stops when successive Rayleigh quotients agree to `rel_tol`.
    pub fn sigma_max_sq(&self, rel_tol: f64, max_iter: usize) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        // fixed, non-symmetric start so it is never orthogonal to the top
        // singular vector of a structured matrix by accident
        let mut v: Vec<f64> = (0..self.cols)
            .map(|j| 1.0 + 0.1 * ((j as f64 + 1.0) * 0.754_877_666).fract())
            .collect();
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut av = vec![0.0; self.rows];
        let mut w = vec![0.0; self.cols];
        let mut est = 0.0;
        for _ in 0..max_iter {
            self.mul_vec_into(&v, &mut av);
            self.tmul_vec_into(&av, &mut w);
            let next = dot(&v, &w);
            let nw = norm2(&w);
            if nw == 0.0 {
                return 0.0;
            }
            v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / nw);
            if (next - est).abs() <= rel_tol * next.abs() {
                // one more Rayleigh quotient with the refined vector
                self.mul_vec_into(&v, &mut av);
                return dot(&av, &av).max(next);
            }
            est = next;
        }
        est
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stacked_blocks_round_trip() {
        let s = Stacked::from_blocks(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(s.block(1), &[3.0, 4.0]);
        assert_eq!(s.mean_block(), vec![2.0, 3.0]);
        assert!(Stacked::from_blocks(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn matrix_products() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, -1.0]]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 0.0]);
        assert_eq!(a.tmul_vec(&[1.0, 2.0]), vec![1.0, 4.0, -2.0]);
    }

    #[test]
    fn sigma_max_of_diagonal() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -5.0]]).unwrap();
        assert!((a.sigma_max_sq(1e-12, 10_000) - 25.0).abs() < 1e-8);
    }
}
