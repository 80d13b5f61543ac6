//! Small dense containers used for weights, delays and connectivity masks.
//!
//! All matrices are row-major with the postsynaptic index as the row and the
//! presynaptic index as the column, so `w[(j, i)]` is the synapse `i -> j`.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &Matrix, k: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Zeroes every entry whose mask bit is off.
    pub fn apply_mask(&mut self, mask: &Mask) {
        assert_eq!(self.shape(), mask.shape());
        for (w, &on) in self.data.iter_mut().zip(mask.as_slice()) {
            if !on {
                *w = 0.0;
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Binary connectivity mask with the same layout as [`Matrix`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    /// All ones except the diagonal.
    pub fn full_off_diagonal(n: usize) -> Self {
        let mut m = Self::full(n, n);
        for k in 0..n {
            m[(k, k)] = false;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), rows * cols, "mask length mismatch");
        Self { rows, cols, bits }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn count_active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl Index<(usize, usize)> for Mask {
    type Output = bool;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &bool {
        &self.bits[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Mask {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut bool {
        &mut self.bits[r * self.cols + c]
    }
}

/// Integer synaptic delays in time steps, same layout as the weight matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delays {
    rows: usize,
    cols: usize,
    steps: Vec<u32>,
}

impl Delays {
    pub fn constant(rows: usize, cols: usize, d: u32) -> Self {
        Self {
            rows,
            cols,
            steps: vec![d; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, steps: Vec<u32>) -> Self {
        assert_eq!(steps.len(), rows * cols, "delay length mismatch");
        Self { rows, cols, steps }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[u32] {
        &self.steps
    }

    pub fn max(&self) -> u32 {
        self.steps.iter().copied().max().unwrap_or(0)
    }
}

impl Index<(usize, usize)> for Delays {
    type Output = u32;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &u32 {
        &self.steps[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Delays {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut u32 {
        &mut self.steps[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_indexing() {
        let m = Matrix::from_fn(2, 3, |r, c| (10 * r + c) as f64);
        assert_eq!(m[(1, 2)], 12.0);
        assert_eq!(m.row(1), &[10.0, 11.0, 12.0]);
    }

    #[test]
    fn mask_zeroes_entries() {
        let mut m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mask = Mask::full_off_diagonal(2);
        m.apply_mask(&mask);
        assert_eq!(m.as_slice(), &[0.0, 2.0, 3.0, 0.0]);
        assert_eq!(mask.count_active(), 2);
    }
}
