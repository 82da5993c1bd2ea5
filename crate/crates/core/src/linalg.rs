//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::function::gamma::ln_gamma;

/// Largest acceptable condition estimate for a Gram matrix before it is
/// reported as singular.
pub const COND_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorError {
    NotPositiveDefinite,
    IllConditioned(f64),
}

impl std::fmt::Display for FactorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorError::NotPositiveDefinite => write!(f, "Cholesky factorization failed"),
            FactorError::IllConditioned(c) => write!(f, "condition estimate {c:.3e} exceeds limit"),
        }
    }
}

/// Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(mat: DMatrix<f64>) -> Result<Self, FactorError> {
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(FactorError::NotPositiveDefinite);
        }
        let chol = Cholesky::new(mat).ok_or(FactorError::NotPositiveDefinite)?;
        let l = chol.l_dirty();
        if (0..l.nrows()).any(|i| !(l[(i, i)] > 0.0) || !l[(i, i)].is_finite()) {
            return Err(FactorError::NotPositiveDefinite);
        }
        Ok(Self { chol })
    }

    /// Factorizes and rejects matrices whose unit-diagonal rescaling has a
    /// condition estimate above `limit`. The estimate is the squared ratio of
    /// extreme Cholesky pivots of the rescaled matrix, a lower bound on the
    /// true 2-norm condition number.
    pub fn new_guarded(mat: DMatrix<f64>, limit: f64) -> Result<Self, FactorError> {
        let diag: Vec<f64> = (0..mat.nrows()).map(|i| mat[(i, i)]).collect();
        if diag.iter().any(|d| !(*d > 0.0)) {
            return Err(FactorError::NotPositiveDefinite);
        }
        let f = Self::new(mat)?;
        let l = f.chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for (i, d) in diag.iter().enumerate() {
            let s = l[(i, i)] / d.sqrt();
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let cond = (hi / lo).powi(2);
        if !(cond <= limit) {
            return Err(FactorError::IllConditioned(cond));
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Lower-triangular factor `L` with `L L' = A`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest |a_ij - a_ji| relative to the largest |a_ij|.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    SpdFactor::new(m.clone()).is_ok()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Multivariate log-gamma, log Γ_m(a).
pub fn ln_multigamma(m: usize, a: f64) -> f64 {
    let mf = m as f64;
    mf * (mf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=m).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
