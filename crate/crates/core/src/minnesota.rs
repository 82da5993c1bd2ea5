//! Conjugate Minnesota prior implemented through dummy observations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::linalg::{SpdFactor, COND_LIMIT};
use crate::var_core::TimeSeriesPanel;

/// Default intercept variance; large enough to leave intercepts essentially
/// unrestricted.
pub const DEFAULT_PI: f64 = 1e6;

/// Hyperparameters `(θ1, π)`, first-own-lag prior means `φ` and prior
/// degrees of freedom `s0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinnesotaHyper {
    pub theta1: f64,
    pub pi: f64,
    pub phi: Vec<f64>,
    pub s0: f64,
}

impl MinnesotaHyper {
    /// Stationary-data defaults: `φ = 0`, `π = 1e6`, `s0 = m + 2`.
    pub fn new(m: usize, theta1: f64) -> Self {
        Self { theta1, pi: DEFAULT_PI, phi: vec![0.0; m], s0: m as f64 + 2.0 }
    }

    pub fn with_theta1(&self, theta1: f64) -> Self {
        Self { theta1, ..self.clone() }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.theta1 > 0.0) {
            return Err(BvarError::InvalidInput(format!("theta1 must be positive, got {}", self.theta1)));
        }
        if !(self.pi > 0.0) {
            return Err(BvarError::InvalidInput(format!("pi must be positive, got {}", self.pi)));
        }
        if self.phi.len() != m {
            return Err(BvarError::ShapeMismatch(format!("phi has {} entries for m = {m}", self.phi.len())));
        }
        if !(self.s0 > m as f64 + 1.0) {
            return Err(BvarError::InvalidInput(format!("s0 = {} must exceed m + 1 = {}", self.s0, m + 1)));
        }
        Ok(())
    }
}

/// Residual standard deviations `σ̂_i` of univariate AR(p) fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleEstimates {
    pub sigma_hat: Vec<f64>,
}

impl ScaleEstimates {
    pub fn new(sigma_hat: Vec<f64>) -> Result<Self> {
        if sigma_hat.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(BvarError::InvalidInput("scale estimates must be positive".into()));
        }
        Ok(Self { sigma_hat })
    }
}

/// Fits `y_t = c + Σ_l b_l y_{t-l}` by OLS for every column and returns the
/// residual standard deviation with divisor `T - p - (p + 1)`.
pub fn estimate_scales(panel: &TimeSeriesPanel, p: usize) -> Result<ScaleEstimates> {
    let t = panel.nobs();
    if p == 0 {
        return Err(BvarError::InvalidInput("lag order must be at least 1".into()));
    }
    if t <= 2 * p + 1 {
        return Err(BvarError::TooFewObservations { needed: 2 * p + 1, got: t });
    }
    let rows = t - p;
    let dof = (t - p - (p + 1)) as f64;
    let mut out = Vec::with_capacity(panel.nvars());
    for (i, name) in panel.names().iter().enumerate() {
        let col = panel.values().column(i);
        let y = DVector::from_iterator(rows, (p..t).map(|s| col[s]));
        let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == p { 1.0 } else { col[r + p - c - 1] });
        let factor = SpdFactor::new_guarded(x.transpose() * &x, COND_LIMIT)
            .map_err(|e| BvarError::SingularDesign(format!("AR({p}) fit of {name}: {e}")))?;
        let beta = factor.solve_vec(&(x.transpose() * &y));
        let resid = y - x * beta;
        let s2 = resid.norm_squared() / dof;
        if !(s2 > 0.0) {
            return Err(BvarError::SingularDesign(format!("AR({p}) fit of {name} has zero residual variance")));
        }
        out.push(s2.sqrt());
    }
    ScaleEstimates::new(out)
}

/// Artificial observations appended to `(Y, X)`; `mp + m + 1` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DummyObservations {
    pub y_dummy: DMatrix<f64>,
    pub x_dummy: DMatrix<f64>,
}

pub fn build_dummies(hyper: &MinnesotaHyper, scales: &ScaleEstimates, m: usize, p: usize) -> Result<DummyObservations> {
    hyper.validate(m)?;
    if scales.sigma_hat.len() != m {
        return Err(BvarError::ShapeMismatch(format!("{} scales for m = {m}", scales.sigma_hat.len())));
    }
    let sig = &scales.sigma_hat;
    let n = m * p + 1;
    let rows = m * p + m + 1;
    let mut yd = DMatrix::zeros(rows, m);
    let mut xd = DMatrix::zeros(rows, n);
    for i in 0..m {
        yd[(i, i)] = hyper.phi[i] * sig[i] / hyper.theta1;
        yd[(m * p + i, i)] = sig[i];
    }
    for lag in 1..=p {
        for i in 0..m {
            let r = (lag - 1) * m + i;
            xd[(r, r)] = lag as f64 * sig[i] / hyper.theta1;
        }
    }
    xd[(rows - 1, n - 1)] = hyper.pi.powf(-0.5);
    Ok(DummyObservations { y_dummy: yd, x_dummy: xd })
}

/// Prior implied by the dummies: `a | Σ ~ N(vec A0, Σ ⊗ V0)`,
/// `Σ ~ IW(s0, S0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMoments {
    pub v0: DMatrix<f64>,
    pub a0: DMatrix<f64>,
    pub s0_scale: DMatrix<f64>,
    pub s0_dof: f64,
}

pub fn implied_prior_moments(d: &DummyObservations, hyper: &MinnesotaHyper) -> Result<PriorMoments> {
    let gram = d.x_dummy.transpose() * &d.x_dummy;
    let factor = SpdFactor::new(gram).map_err(|e| BvarError::SingularPrior(e.to_string()))?;
    let a0 = factor.solve(&(d.x_dummy.transpose() * &d.y_dummy));
    let resid = &d.y_dummy - &d.x_dummy * &a0;
    Ok(PriorMoments {
        v0: factor.inverse(),
        a0,
        s0_scale: crate::linalg::symmetrize(&(resid.transpose() * resid)),
        s0_dof: hyper.s0,
    })
}
