//! Dense Cholesky helpers shared by the GP, pathwise and acquisition code.

use nalgebra::DMatrix;

use crate::error::{LesError, Result};

/// First jitter tried after a plain factorization fails, relative to the
/// kernel output scale.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Lower Cholesky factor together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct Factor {
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `b <- L^{-1} b`.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        solve_lower_in_place(&self.lower, b);
    }

    /// `b <- L^{-T} b`.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        let l = &self.lower;
        let n = b.len();
        for i in (0..n).rev() {
            let col = l.column(i);
            let mut s = b[i];
            for j in i + 1..n {
                s -= col[j] * b[j];
            }
            b[i] = s / col[i];
        }
    }

    /// `(L L^T)^{-1} b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut out = b.to_vec();
        self.solve_lower_in_place(&mut out);
        self.solve_upper_in_place(&mut out);
        out
    }

    /// `log det (L L^T)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Explicit inverse of `L L^T`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            self.solve_lower_in_place(&mut e);
            self.solve_upper_in_place(&mut e);
            inv.column_mut(c).copy_from_slice(&e);
        }
        inv
    }
}

/// Column-oriented forward substitution.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    debug_assert_eq!(l.nrows(), n);
    for j in 0..n {
        let col = l.column(j);
        let bj = b[j] / col[j];
        b[j] = bj;
        if bj != 0.0 {
            for i in j + 1..n {
                b[i] -= col[i] * bj;
            }
        }
    }
}

fn try_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.unpack();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

/// Factorizes a symmetric matrix, first as given and then with a diagonal
/// jitter of `JITTER_START * scale`, escalated tenfold up to
/// `JITTER_MAX * scale`.
pub fn factor_with_jitter(m: &DMatrix<f64>, scale: f64) -> Result<Factor> {
    if m.nrows() == 0 {
        return Ok(Factor {
            lower: DMatrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    if let Some(lower) = try_cholesky(m) {
        return Ok(Factor { lower, jitter: 0.0 });
    }
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(lower) = try_cholesky(&shifted) {
            return Ok(Factor { lower, jitter });
        }
        rel *= 10.0;
    }
    Err(LesError::Numerical(format!(
        "{n}x{n} covariance not positive definite after jitter {:.1e}",
        JITTER_MAX * scale,
        n = m.nrows()
    )))
}
