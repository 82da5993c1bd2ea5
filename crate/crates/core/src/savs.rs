//! Signal-adaptive variable selection applied to VAR coefficient draws.
//!
//! Each coefficient `â_j` is soft-thresholded as
//! `sign(â_j) ||Z_j||^{-2} (|â_j| ||Z_j||² - κ_j)_+` with `κ_j = λ_j / |â_j|^ζ`.
//! Because `Z = I_m ⊗ X`, `||Z_j||²` is the squared norm of the matching
//! column of `X` regardless of the equation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::posterior::PosteriorDraw;
use crate::var_core::{row_to_index, CoefIndex, LagDesign, VarCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SavsScheme {
    /// One λ for every penalized coefficient.
    Plain,
    /// `λ (l-1)²` on own lags, `λ l²` on other lags.
    LagWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SavsConfig {
    pub lambda: f64,
    pub zeta: f64,
    pub scheme: SavsScheme,
    pub sparsify_intercept: bool,
    pub sparsify_first_own_lag: bool,
}

impl Default for SavsConfig {
    fn default() -> Self {
        Self { lambda: 1.0, zeta: 2.0, scheme: SavsScheme::LagWise, sparsify_intercept: false, sparsify_first_own_lag: false }
    }
}

impl SavsConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(BvarError::InvalidInput(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.zeta >= 1.0) {
            return Err(BvarError::InvalidInput(format!("zeta must be >= 1, got {}", self.zeta)));
        }
        Ok(())
    }

    /// True for coefficients that are copied through untouched.
    pub fn is_excluded(&self, idx: CoefIndex) -> bool {
        match idx {
            CoefIndex::Intercept { .. } => !self.sparsify_intercept,
            CoefIndex::Lag { lag: 1, source, equation } if source == equation => !self.sparsify_first_own_lag,
            CoefIndex::Lag { .. } => false,
        }
    }
}

/// Squared column norms of `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNorms {
    pub norms_sq: Vec<f64>,
}

pub fn column_norms(design: &LagDesign) -> ColumnNorms {
    ColumnNorms { norms_sq: design.x.column_iter().map(|c| c.norm_squared()).collect() }
}

/// Penalty scale `λ_j` for one coefficient. Excluded coefficients get 0.
pub fn penalty_lambda(idx: CoefIndex, cfg: &SavsConfig) -> f64 {
    if cfg.is_excluded(idx) {
        return 0.0;
    }
    match (cfg.scheme, idx) {
        (_, CoefIndex::Intercept { .. }) => cfg.lambda,
        (SavsScheme::Plain, _) => cfg.lambda,
        (SavsScheme::LagWise, CoefIndex::Lag { lag, source, equation }) => {
            let l = lag as f64;
            if source == equation {
                cfg.lambda * (l - 1.0).powi(2)
            } else {
                cfg.lambda * l * l
            }
        }
    }
}

/// Adaptive penalty `κ = λ_j / |â|^ζ`.
pub fn adaptive_kappa(a: f64, lambda_j: f64, zeta: f64) -> f64 {
    lambda_j / a.abs().powf(zeta)
}

/// The scalar thresholding rule.
pub fn savs_coefficient(a: f64, norm_sq: f64, lambda_j: f64, zeta: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if lambda_j == 0.0 {
        return a;
    }
    if !(norm_sq > 0.0) {
        return 0.0;
    }
    let kappa = adaptive_kappa(a, lambda_j, zeta);
    let shrunk = a.abs() * norm_sq - kappa;
    if shrunk > 0.0 {
        a.signum() * shrunk / norm_sq
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparsifiedDraw {
    pub coeffs_sparse: VarCoefficients,
    pub zero_mask: DMatrix<bool>,
}

impl SparsifiedDraw {
    fn from_coeffs(coeffs_sparse: VarCoefficients) -> Self {
        let zero_mask = coeffs_sparse.matrix().map(|v| v == 0.0);
        Self { coeffs_sparse, zero_mask }
    }

    pub fn zero_count(&self) -> usize {
        self.zero_mask.iter().filter(|z| **z).count()
    }
}

fn check_norms(coeffs: &VarCoefficients, norms: &ColumnNorms) -> Result<()> {
    if norms.norms_sq.len() != coeffs.n() {
        return Err(BvarError::ShapeMismatch(format!(
            "{} column norms for {} regressors",
            norms.norms_sq.len(),
            coeffs.n()
        )));
    }
    Ok(())
}

/// Sparsifies one coefficient draw, with `κ` computed from the draw itself.
pub fn savs_draw(draw: &VarCoefficients, norms: &ColumnNorms, cfg: &SavsConfig) -> Result<SparsifiedDraw> {
    cfg.validate()?;
    check_norms(draw, norms)?;
    let (m, p) = (draw.m(), draw.p());
    let mut out = draw.clone();
    let a = out.matrix_mut();
    for j in 0..m {
        for c in 0..a.nrows() {
            let idx = row_to_index(c, j, m, p);
            if cfg.is_excluded(idx) {
                continue;
            }
            a[(c, j)] = savs_coefficient(a[(c, j)], norms.norms_sq[c], penalty_lambda(idx, cfg), cfg.zeta);
        }
    }
    Ok(SparsifiedDraw::from_coeffs(out))
}

/// Same rule applied to a point estimate (posterior mean or median).
pub fn savs_point(point: &VarCoefficients, norms: &ColumnNorms, cfg: &SavsConfig) -> Result<SparsifiedDraw> {
    savs_draw(point, norms, cfg)
}

/// Sparsifies every draw; `inclusion_freq[(c, j)]` is the share of draws
/// with a nonzero entry.
pub fn sparsify_chain(draws: &[PosteriorDraw], norms: &ColumnNorms, cfg: &SavsConfig) -> Result<(Vec<SparsifiedDraw>, DMatrix<f64>)> {
    if draws.is_empty() {
        return Err(BvarError::EmptyInput("no draws to sparsify".into()));
    }
    let sparse: Vec<SparsifiedDraw> = draws
        .par_iter()
        .map(|d| savs_draw(&d.coeffs, norms, cfg).map_err(|e| e.at_draw(d.draw_index)))
        .collect::<Result<_>>()?;
    let freq = inclusion_frequency(sparse.iter().map(|s| &s.zero_mask));
    Ok((sparse, freq))
}

pub(crate) fn inclusion_frequency<'a>(masks: impl Iterator<Item = &'a DMatrix<bool>>) -> DMatrix<f64> {
    let mut count: Option<DMatrix<f64>> = None;
    let mut total = 0usize;
    for mask in masks {
        let c = count.get_or_insert_with(|| DMatrix::zeros(mask.nrows(), mask.ncols()));
        for (acc, z) in c.iter_mut().zip(mask.iter()) {
            if !z {
                *acc += 1.0;
            }
        }
        total += 1;
    }
    count.map(|c| c / total as f64).unwrap_or_else(|| DMatrix::zeros(0, 0))
}

/// Coordinate descent on `½ (â-α)' G (â-α) + Σ κ_j |α_j|` per equation,
/// with `G = X'X`, iterated until the largest update falls below `tol`.
/// Started at the draw, the first sweep reproduces [`savs_draw`] only when
/// `G` is diagonal.
pub fn cda_draw(draw: &VarCoefficients, gram: &DMatrix<f64>, cfg: &SavsConfig, tol: f64, max_iter: usize) -> Result<SparsifiedDraw> {
    cfg.validate()?;
    let n = draw.n();
    if gram.shape() != (n, n) {
        return Err(BvarError::ShapeMismatch(format!("Gram matrix is {:?}, expected {n}x{n}", gram.shape())));
    }
    let (m, p) = (draw.m(), draw.p());
    let mut out = draw.clone();
    for j in 0..m {
        let a_hat: Vec<f64> = (0..n).map(|c| draw.matrix()[(c, j)]).collect();
        let kappa: Vec<f64> = (0..n)
            .map(|c| {
                let lj = penalty_lambda(row_to_index(c, j, m, p), cfg);
                if lj == 0.0 {
                    0.0
                } else if a_hat[c] == 0.0 {
                    f64::INFINITY
                } else {
                    adaptive_kappa(a_hat[c], lj, cfg.zeta)
                }
            })
            .collect();
        let mut alpha = a_hat.clone();
        // grad = G (â - α), kept in sync with α
        let mut grad = vec![0.0; n];
        for _ in 0..max_iter {
            let mut max_step = 0.0_f64;
            for c in 0..n {
                let g_cc = gram[(c, c)];
                let new = if !(g_cc > 0.0) {
                    if kappa[c] > 0.0 { 0.0 } else { alpha[c] }
                } else {
                    let z = grad[c] + g_cc * alpha[c];
                    soft(z, kappa[c]) / g_cc
                };
                let step = new - alpha[c];
                if step != 0.0 {
                    for r in 0..n {
                        grad[r] -= gram[(r, c)] * step;
                    }
                    alpha[c] = new;
                    max_step = max_step.max(step.abs());
                }
            }
            if max_step < tol {
                break;
            }
        }
        for c in 0..n {
            out.matrix_mut()[(c, j)] = alpha[c];
        }
    }
    Ok(SparsifiedDraw::from_coeffs(out))
}

fn soft(z: f64, t: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let s = z.abs() - t;
    if s > 0.0 { z.signum() * s } else { 0.0 }
}
