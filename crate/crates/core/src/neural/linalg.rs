use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
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

    pub fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let n = Normal::new(0.0, std).expect("finite std");
        Self::from_fn(rows, cols, |_, _| n.sample(rng))
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self::from_fn(rows, cols, |_, _| u.sample(rng))
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scaled(&self, k: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// out += A x
    pub fn mv_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// out += Aᵀ y
    pub fn mtv_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (yr, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if *yr != 0.0 {
                axpy(*yr, row, out);
            }
        }
    }

    /// A += a bᵀ
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (ar, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if *ar != 0.0 {
                axpy(*ar, b, row);
            }
        }
    }

    pub fn frob_dot(&self, other: &Mat) -> f64 {
        dot(&self.data, &other.data)
    }

    /// Largest singular value with its singular vectors (σ, u₁, v₁).
    pub fn spectral(&self) -> (f64, Vec<f64>, Vec<f64>) {
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        let svd = m.svd(true, true);
        let (k, s) = svd
            .singular_values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |a, (i, s)| if s > a.1 { (i, s) } else { a });
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        (s, u.column(k).iter().copied().collect(), vt.row(k).iter().copied().collect())
    }

    pub fn spectral_norm(&self) -> f64 {
        let m = DMatrix::from_row_slice(self.rows, self.cols, &self.data);
        m.singular_values().max()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
