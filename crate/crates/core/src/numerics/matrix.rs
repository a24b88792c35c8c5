use alloc::vec;
use alloc::vec::Vec;

use super::{dot, ensure_finite, l2_norm, SeededRng};
use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(alloc::format!(
                "matrix {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        ensure_finite(&data)?;
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

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `M x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `Mᵀ y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        l2_norm(&self.data)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

/// Power iteration on `MᵀM`. Returns the estimate `|M u|₂` together with the
/// unit iterate `u` it was measured on.
///
/// For a fixed starting vector the estimate never decreases with `iters`.
pub fn power_iteration(m: &Matrix, iters: usize, rng: SeededRng) -> Result<(f64, Vec<f64>)> {
    if iters == 0 {
        return Err(Error::invalid("power iteration needs at least one step"));
    }
    ensure_finite(m.data())?;
    if m.cols == 0 || m.rows == 0 || m.data.iter().all(|&v| v == 0.0) {
        return Ok((0.0, vec![0.0; m.cols]));
    }
    let mut rng = rng;
    let mut u: Vec<f64> = (0..m.cols).map(|_| rng.normal()).collect();
    let n = l2_norm(&u);
    u.iter_mut().for_each(|v| *v /= n);
    for _ in 0..iters {
        let mu = m.matvec(&u);
        let w = m.matvec_t(&mu);
        let wn = l2_norm(&w);
        if wn == 0.0 {
            break;
        }
        u = w.into_iter().map(|v| v / wn).collect();
    }
    let sigma = l2_norm(&m.matvec(&u));
    Ok((sigma, u))
}

/// Largest singular value estimated by power iteration. A zero matrix gives 0.
pub fn spectral_norm(m: &Matrix, iters: usize, rng: SeededRng) -> Result<f64> {
    power_iteration(m, iters, rng).map(|(s, _)| s)
}
