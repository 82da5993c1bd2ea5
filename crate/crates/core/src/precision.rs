//! Sparsification of drawn precision matrices.
//!
//! The target is the penalized Gaussian loss
//! `tr(Ω Σ) - log det Ω + Σ_{i≠j} ρ_ij |ω_ij|` with adaptive penalties
//! `ρ_ij = ϖ / |p_ij|^{κ/2}`, `P = Σ^{-1}`. Every off-diagonal pair is a
//! one-dimensional convex problem once the rest of `Ω` is held fixed, and
//! its minimizer is available in closed form (a root of a quadratic, or
//! exactly zero when the subgradient condition holds). `OneSweep` solves all
//! pairs independently with the rest of `Ω` held at `P`, then refits the
//! diagonal once; should the combined move raise the loss it is replaced
//! by one sequential sweep. `IterateToTol` cycles through pairs and
//! diagonal entries until convergence.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::linalg::{min_eigenvalue, symmetrize, SpdFactor};
use crate::posterior::PosteriorDraw;
use crate::var_core::CovMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecisionMode {
    OneSweep,
    IterateToTol,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdRepair {
    DiagInflate,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecisionConfig {
    pub varpi: f64,
    pub kappa_prec: f64,
    pub mode: PrecisionMode,
    pub tol: f64,
    pub max_iter: usize,
    pub pd_repair: PdRepair,
    /// After a `OneSweep`, minimize over each diagonal entry in turn.
    /// Without it the implied variances shrink whenever an edge is removed.
    pub refit_diagonal: bool,
}

impl Default for PrecisionConfig {
    fn default() -> Self {
        Self { varpi: 0.1, kappa_prec: 2.0, mode: PrecisionMode::OneSweep, tol: 1e-10, max_iter: 500, pd_repair: PdRepair::DiagInflate, refit_diagonal: true }
    }
}

impl PrecisionConfig {
    /// `ϖ = λ / 10`.
    pub fn for_lambda(lambda: f64) -> Self {
        Self { varpi: lambda / 10.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.varpi >= 0.0) || !self.varpi.is_finite() {
            return Err(BvarError::InvalidInput(format!("varpi must be finite and >= 0, got {}", self.varpi)));
        }
        if !(self.kappa_prec >= 1.0) {
            return Err(BvarError::InvalidInput(format!("kappa_prec must be >= 1, got {}", self.kappa_prec)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(BvarError::InvalidInput("tol must be positive and max_iter nonzero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrecision {
    pub omega: DMatrix<f64>,
    /// Off-diagonal zeros; the diagonal is always `false`.
    pub zero_mask: DMatrix<bool>,
    /// Whether the diagonal had to be inflated to restore definiteness.
    pub repaired: bool,
}

impl SparsePrecision {
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(SpdFactor::new(self.omega.clone())
            .map_err(|e| BvarError::NotPositiveDefinite(format!("sparse precision: {e}")))?
            .inverse())
    }
}

/// `ρ_ij`; infinite where `p_ij = 0`, zero on the diagonal.
pub fn penalty_matrix(precision: &DMatrix<f64>, cfg: &PrecisionConfig) -> DMatrix<f64> {
    DMatrix::from_fn(precision.nrows(), precision.ncols(), |i, j| {
        if i == j || cfg.varpi == 0.0 {
            0.0
        } else {
            cfg.varpi / precision[(i, j)].abs().powf(cfg.kappa_prec / 2.0)
        }
    })
}

/// Penalized loss; `+inf` when `omega` is not positive definite.
pub fn penalized_objective(omega: &DMatrix<f64>, sigma: &DMatrix<f64>, rho: &DMatrix<f64>) -> f64 {
    let Ok(f) = SpdFactor::new(symmetrize(omega)) else {
        return f64::INFINITY;
    };
    let trace = omega.component_mul(sigma).sum();
    let mut pen = 0.0;
    for i in 0..omega.nrows() {
        for j in 0..omega.ncols() {
            if i != j && omega[(i, j)] != 0.0 {
                pen += rho[(i, j)] * omega[(i, j)].abs();
            }
        }
    }
    trace - f.log_det() + pen
}

/// Minimizer over `ω_ij = ω_ji` of the loss with every other entry fixed.
///
/// `s_ij` is the data covariance entry, `(w_ii, w_jj, w_ij)` the current
/// inverse of `Ω`, `omega_ij` the current value. Moving the pair by `δ`
/// changes the loss by `2 δ s_ij - log q(δ) + 2ρ(|ω + δ| - |ω|)` with
/// `q(δ) = 1 + 2 w_ij δ - b δ²`, `b = w_ii w_jj - w_ij²`.
pub fn pair_minimizer(s_ij: f64, w_ii: f64, w_jj: f64, w_ij: f64, omega_ij: f64, rho: f64) -> f64 {
    let a = w_ij;
    let b = w_ii * w_jj - a * a;
    if !(b > 0.0) {
        return omega_ij;
    }
    let disc = (a * a + b).sqrt();
    let (lo, hi) = ((a - disc) / b, (a + disc) / b);
    let q = |d: f64| 1.0 + 2.0 * a * d - b * d * d;
    let obj = |d: f64| {
        let w = omega_ij + d;
        let pen = if rho.is_infinite() { if w == 0.0 { 0.0 } else { f64::INFINITY } } else { 2.0 * rho * w.abs() };
        2.0 * d * s_ij - q(d).ln() + pen
    };
    let inside = |d: f64| d > lo && d < hi && q(d) > 0.0;

    let mut best = (omega_ij, f64::INFINITY);
    let mut consider = |d: f64| {
        if inside(d) {
            let v = obj(d);
            if v < best.1 {
                best = (omega_ij + d, v);
            }
        }
    };
    consider(-omega_ij);
    if rho.is_finite() {
        for s in [1.0, -1.0] {
            let c = s_ij + rho * s;
            // c q(δ) = a - b δ
            let (qa, qb, qc) = (-c * b, 2.0 * a * c + b, c - a);
            let mut roots = Vec::with_capacity(2);
            if qa.abs() < 1e-300 {
                if qb != 0.0 {
                    roots.push(-qc / qb);
                }
            } else {
                let disc = qb * qb - 4.0 * qa * qc;
                if disc >= 0.0 {
                    // numerically stable quadratic roots
                    let t = -0.5 * (qb + qb.signum() * disc.sqrt());
                    roots.push(t / qa);
                    if t != 0.0 {
                        roots.push(qc / t);
                    }
                }
            }
            for d in roots {
                let w = omega_ij + d;
                if w != 0.0 && w.signum() == s {
                    consider(d);
                }
            }
        }
    }
    // keep the exact zero when it is optimal
    best.0
}

fn mask_of(omega: &DMatrix<f64>) -> DMatrix<bool> {
    DMatrix::from_fn(omega.nrows(), omega.ncols(), |i, j| i != j && omega[(i, j)] == 0.0)
}

fn one_sweep(sigma: &DMatrix<f64>, precision: &DMatrix<f64>, rho: &DMatrix<f64>) -> DMatrix<f64> {
    let m = sigma.nrows();
    let mut omega = precision.clone();
    for i in 0..m {
        for j in 0..i {
            let w = if precision[(i, j)] == 0.0 {
                0.0
            } else {
                pair_minimizer(sigma[(i, j)], sigma[(i, i)], sigma[(j, j)], sigma[(i, j)], precision[(i, j)], rho[(i, j)])
            };
            omega[(i, j)] = w;
            omega[(j, i)] = w;
        }
    }
    omega
}

/// Gauss-Seidel sweeps over pairs and then diagonal entries. Every step is
/// an exact coordinate minimization, so the loss never increases and `Ω`
/// stays positive definite.
fn coordinate_descent(sigma: &DMatrix<f64>, precision: &DMatrix<f64>, rho: &DMatrix<f64>, sweeps: usize, tol: f64, update_diagonal: bool) -> Result<DMatrix<f64>> {
    let m = sigma.nrows();
    let mut omega = precision.clone();
    let mut w = sigma.clone();
    for _ in 0..sweeps {
        let mut max_change = 0.0_f64;
        for i in 0..m {
            for j in 0..i {
                if precision[(i, j)] == 0.0 {
                    continue;
                }
                let new = pair_minimizer(sigma[(i, j)], w[(i, i)], w[(j, j)], w[(i, j)], omega[(i, j)], rho[(i, j)]);
                let d = new - omega[(i, j)];
                if d == 0.0 {
                    continue;
                }
                omega[(i, j)] = new;
                omega[(j, i)] = new;
                max_change = max_change.max(d.abs());
                // Woodbury update of W for Ω + d (e_i e_j' + e_j e_i')
                let k = DMatrix::from_row_slice(2, 2, &[1.0 / d + w[(j, i)], w[(j, j)], w[(i, i)], 1.0 / d + w[(i, j)]]);
                let Some(k_inv) = k.try_inverse() else { continue };
                let left = DMatrix::from_fn(m, 2, |r, c| w[(r, if c == 0 { i } else { j })]);
                let right = DMatrix::from_fn(2, m, |r, c| w[(if r == 0 { j } else { i }, c)]);
                w -= left * k_inv * right;
            }
        }
        for i in (0..m).filter(|_| update_diagonal) {
            let d = 1.0 / sigma[(i, i)] - 1.0 / w[(i, i)];
            if d == 0.0 {
                continue;
            }
            omega[(i, i)] += d;
            max_change = max_change.max(d.abs());
            let denom = 1.0 + d * w[(i, i)];
            let col = w.column(i).clone_owned();
            w -= &col * col.transpose() * (d / denom);
        }
        w = SpdFactor::new(omega.clone())
            .map_err(|e| BvarError::NumericalFailure(format!("coordinate descent lost definiteness: {e}")))?
            .inverse();
        if max_change < tol {
            break;
        }
    }
    Ok(omega)
}

pub fn sparsify_precision(cov: &CovMatrix, cfg: &PrecisionConfig) -> Result<SparsePrecision> {
    cfg.validate()?;
    let sigma = cov.sigma();
    let precision = cov.precision();
    if cfg.varpi == 0.0 {
        return Ok(SparsePrecision { zero_mask: mask_of(&precision), omega: precision, repaired: false });
    }
    let rho = penalty_matrix(&precision, cfg);
    let mut refit = false;
    let mut omega = match cfg.mode {
        PrecisionMode::OneSweep => {
            let jacobi = one_sweep(sigma, &precision, &rho);
            if SpdFactor::new(jacobi.clone()).is_ok() {
                let cand = if cfg.refit_diagonal { refit_diagonal(jacobi, sigma)? } else { jacobi };
                // independent pair moves can, rarely, overshoot jointly
                if penalized_objective(&cand, sigma, &rho) <= penalized_objective(&precision, sigma, &rho) {
                    cand
                } else {
                    coordinate_descent(sigma, &precision, &rho, 1, 0.0, cfg.refit_diagonal)?
                }
            } else {
                refit = cfg.refit_diagonal;
                jacobi
            }
        }
        PrecisionMode::IterateToTol => coordinate_descent(sigma, &precision, &rho, cfg.max_iter, cfg.tol, true)?,
    };
    let zero_mask = mask_of(&omega);
    let mut repaired = false;
    if SpdFactor::new(omega.clone()).is_err() {
        match cfg.pd_repair {
            PdRepair::Reject => {
                return Err(BvarError::NotPositiveDefinite("thresholded precision needs repair".into()));
            }
            PdRepair::DiagInflate => {
                let shift = min_eigenvalue(&omega).abs() + 1e-8;
                for i in 0..omega.nrows() {
                    omega[(i, i)] += shift;
                }
                repaired = true;
                SpdFactor::new(omega.clone())
                    .map_err(|e| BvarError::NumericalFailure(format!("precision repair failed: {e}")))?;
            }
        }
    }
    if refit {
        omega = refit_diagonal(omega, sigma)?;
    }
    Ok(SparsePrecision { omega, zero_mask, repaired })
}

/// One Gauss-Seidel pass of exact minimization over the diagonal of a
/// positive definite `omega`: `ω_ii += 1/s_ii - 1/w_ii` with `W = Ω^{-1}`
/// kept current by rank-one updates. Every step keeps `Ω` positive definite.
fn refit_diagonal(mut omega: DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut w = SpdFactor::new(omega.clone())
        .map_err(|e| BvarError::NumericalFailure(format!("diagonal refit: {e}")))?
        .inverse();
    for i in 0..omega.nrows() {
        let d = 1.0 / sigma[(i, i)] - 1.0 / w[(i, i)];
        if d == 0.0 {
            continue;
        }
        omega[(i, i)] += d;
        let col = w.column(i).clone_owned();
        w -= &col * col.transpose() * (d / (1.0 + d * w[(i, i)]));
    }
    Ok(omega)
}

/// Applies [`sparsify_precision`] to every draw; returns symmetric
/// off-diagonal inclusion frequencies.
pub fn sparsify_precision_chain(draws: &[PosteriorDraw], cfg: &PrecisionConfig) -> Result<(Vec<SparsePrecision>, DMatrix<f64>)> {
    if draws.is_empty() {
        return Err(BvarError::EmptyInput("no draws to sparsify".into()));
    }
    let out: Vec<SparsePrecision> = draws
        .par_iter()
        .map(|d| sparsify_precision(&d.cov, cfg).map_err(|e| e.at_draw(d.draw_index)))
        .collect::<Result<_>>()?;
    let mut freq = crate::savs::inclusion_frequency(out.iter().map(|s| &s.zero_mask));
    for i in 0..freq.nrows() {
        freq[(i, i)] = 1.0;
    }
    Ok((out, freq))
}
