//! Closed-form conjugate posterior, marginal likelihood, posterior sampling
//! and the one-step predictive.

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::linalg::{ln_multigamma, symmetrize, SpdFactor, COND_LIMIT};
use crate::minnesota::{build_dummies, estimate_scales, DummyObservations, MinnesotaHyper, ScaleEstimates};
use crate::rng::stream_rng;
use crate::var_core::{build_lag_design, CovMatrix, LagDesign, TimeSeriesPanel, VarCoefficients};

/// θ1 grid searched for small, medium and factor-augmented models.
pub const THETA1_GRID: [f64; 18] = [
    0.01, 0.025, 0.050, 0.075, 0.10, 0.125, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.75, 1.0, 2.0, 5.0,
];

/// Fixed θ1 choices used for the large model.
pub const THETA1_LARGE: [f64; 3] = [0.025, 0.05, 0.075];

/// `vec(A) | Σ ~ N(vec Ā, Σ ⊗ V̄)`, `Σ ~ IW(s1, S1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMoments {
    pub a_bar: DMatrix<f64>,
    pub v_bar: DMatrix<f64>,
    pub s1_scale: DMatrix<f64>,
    pub s1_dof: f64,
    pub m: usize,
    pub p: usize,
}

impl PosteriorMoments {
    pub fn n(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn mean_coefficients(&self) -> VarCoefficients {
        VarCoefficients::new(self.a_bar.clone(), self.m, self.p).expect("posterior mean has VAR shape")
    }

    /// Posterior mean of Σ, `S1 / (s1 - m - 1)`.
    pub fn mean_sigma(&self) -> Option<DMatrix<f64>> {
        let denom = self.s1_dof - self.m as f64 - 1.0;
        (denom > 0.0).then(|| &self.s1_scale / denom)
    }
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

struct Augmented {
    moments: PosteriorMoments,
    gram: SpdFactor,
}

fn augmented_moments(design: &LagDesign, dummies: &DummyObservations, s0: f64) -> Result<Augmented> {
    let n = design.n();
    if dummies.x_dummy.ncols() != n || dummies.y_dummy.ncols() != design.m {
        return Err(BvarError::ShapeMismatch("dummy observations do not match the design".into()));
    }
    let x = stack(&design.x, &dummies.x_dummy);
    let y = stack(&design.y, &dummies.y_dummy);
    let gram = SpdFactor::new_guarded(x.transpose() * &x, COND_LIMIT)
        .map_err(|e| BvarError::SingularGram(e.to_string()))?;
    let a_bar = gram.solve(&(x.transpose() * &y));
    let resid = &y - &x * &a_bar;
    let moments = PosteriorMoments {
        a_bar,
        v_bar: gram.inverse(),
        s1_scale: symmetrize(&(resid.transpose() * resid)),
        s1_dof: design.nobs() as f64 + s0,
        m: design.m,
        p: design.p,
    };
    Ok(Augmented { moments, gram })
}

/// Theil-Goldberger mixed estimation on the dummy-augmented system.
/// `s1 = T + s0` counts data rows only.
pub fn posterior_moments(design: &LagDesign, dummies: &DummyObservations, s0: f64) -> Result<PosteriorMoments> {
    Ok(augmented_moments(design, dummies, s0)?.moments)
}

/// Log evidence `log p(Y | θ1, π)` of the matrix-normal inverse-Wishart model
/// with prior moments read off the dummies.
pub fn log_marginal_likelihood(design: &LagDesign, dummies: &DummyObservations, s0: f64) -> Result<f64> {
    let m = design.m as f64;
    let t = design.nobs() as f64;
    let prior_gram = SpdFactor::new(dummies.x_dummy.transpose() * &dummies.x_dummy)
        .map_err(|e| BvarError::SingularPrior(e.to_string()))?;
    let a0 = prior_gram.solve(&(dummies.x_dummy.transpose() * &dummies.y_dummy));
    let r0 = &dummies.y_dummy - &dummies.x_dummy * a0;
    let s0_scale = SpdFactor::new(symmetrize(&(r0.transpose() * r0)))
        .map_err(|e| BvarError::SingularPrior(format!("prior scale: {e}")))?;
    let post = augmented_moments(design, dummies, s0)?;
    let s1_scale = SpdFactor::new(post.moments.s1_scale.clone())
        .map_err(|e| BvarError::SingularGram(format!("posterior scale: {e}")))?;
    let s1 = post.moments.s1_dof;
    // log det V̄ - log det V0 = log det(X̲'X̲) - log det(X̄'X̄)
    let log_det_ratio = prior_gram.log_det() - post.gram.log_det();
    Ok(-t * m / 2.0 * std::f64::consts::PI.ln() + m / 2.0 * log_det_ratio + s0 / 2.0 * s0_scale.log_det()
        - s1 / 2.0 * s1_scale.log_det()
        + ln_multigamma(design.m, s1 / 2.0)
        - ln_multigamma(design.m, s0 / 2.0))
}

/// Everything produced by estimating one Minnesota BVAR.
#[derive(Debug, Clone)]
pub struct MinnesotaFit {
    pub design: LagDesign,
    pub scales: ScaleEstimates,
    pub hyper: MinnesotaHyper,
    pub dummies: DummyObservations,
    pub moments: PosteriorMoments,
    pub log_ml: f64,
}

pub fn fit_with_scales(design: LagDesign, scales: ScaleEstimates, hyper: &MinnesotaHyper) -> Result<MinnesotaFit> {
    let dummies = build_dummies(hyper, &scales, design.m, design.p)?;
    let moments = posterior_moments(&design, &dummies, hyper.s0)?;
    let log_ml = log_marginal_likelihood(&design, &dummies, hyper.s0)?;
    Ok(MinnesotaFit { design, scales, hyper: hyper.clone(), dummies, moments, log_ml })
}

pub fn fit_minnesota(panel: &TimeSeriesPanel, p: usize, hyper: &MinnesotaHyper) -> Result<MinnesotaFit> {
    let design = build_lag_design(panel, p)?;
    let scales = estimate_scales(panel, p)?;
    fit_with_scales(design, scales, hyper)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub best_theta1: f64,
    /// `(θ1, log ML)` in grid order.
    pub log_ml: Vec<(f64, f64)>,
}

/// Picks θ1 maximizing the marginal likelihood; ties go to the smaller θ1.
pub fn grid_search_theta(panel: &TimeSeriesPanel, p: usize, grid: &[f64], hyper: &MinnesotaHyper) -> Result<GridSearch> {
    if grid.is_empty() {
        return Err(BvarError::EmptyInput("theta1 grid".into()));
    }
    if let Some(bad) = grid.iter().find(|g| !(**g > 0.0)) {
        return Err(BvarError::InvalidInput(format!("theta1 grid value {bad} is not positive")));
    }
    let design = build_lag_design(panel, p)?;
    let scales = estimate_scales(panel, p)?;
    let log_ml = grid
        .iter()
        .map(|&theta| {
            let dummies = build_dummies(&hyper.with_theta1(theta), &scales, design.m, p)?;
            Ok((theta, log_marginal_likelihood(&design, &dummies, hyper.s0)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GridSearch { best_theta1: argmax_theta(&log_ml), log_ml })
}

pub(crate) fn argmax_theta(log_ml: &[(f64, f64)]) -> f64 {
    let mut best = log_ml[0];
    for &(theta, v) in &log_ml[1..] {
        if v > best.1 || (v == best.1 && theta < best.0) {
            best = (theta, v);
        }
    }
    best.0
}

/// One joint posterior draw `(A, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub coeffs: VarCoefficients,
    pub cov: CovMatrix,
    pub draw_index: usize,
    pub rng_seed: u64,
}

/// Precomputed factors for repeated sampling.
#[derive(Debug, Clone)]
pub struct PosteriorSampler<'a> {
    moments: &'a PosteriorMoments,
    chol_v: DMatrix<f64>,
    chol_s1_inv: DMatrix<f64>,
}

impl<'a> PosteriorSampler<'a> {
    pub fn new(moments: &'a PosteriorMoments) -> Result<Self> {
        let m = moments.m as f64;
        if !(moments.s1_dof > m - 1.0) {
            return Err(BvarError::InvalidInput(format!("inverse-Wishart dof {} must exceed m - 1", moments.s1_dof)));
        }
        let chol_v = SpdFactor::new(moments.v_bar.clone())
            .map_err(|e| BvarError::NumericalFailure(format!("Cholesky of V̄: {e}")))?
            .l();
        let s1_inv = SpdFactor::new(moments.s1_scale.clone())
            .map_err(|e| BvarError::NumericalFailure(format!("Cholesky of S1: {e}")))?
            .inverse();
        let chol_s1_inv = SpdFactor::new(s1_inv)
            .map_err(|e| BvarError::NumericalFailure(format!("Cholesky of S1^-1: {e}")))?
            .l();
        Ok(Self { moments, chol_v, chol_s1_inv })
    }

    /// `Σ ~ IW(s1, S1)` by inverting a Bartlett-decomposed `W(s1, S1^{-1})`.
    pub fn draw_sigma<R: rand::Rng>(&self, rng: &mut R) -> Result<CovMatrix> {
        let m = self.moments.m;
        let mut bartlett = DMatrix::zeros(m, m);
        for i in 0..m {
            let chi = ChiSquared::new(self.moments.s1_dof - i as f64)
                .map_err(|e| BvarError::NumericalFailure(format!("chi-square: {e}")))?;
            bartlett[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                bartlett[(i, j)] = StandardNormal.sample(rng);
            }
        }
        let w_chol = &self.chol_s1_inv * bartlett;
        let w_chol_inv = w_chol
            .solve_lower_triangular(&DMatrix::identity(m, m))
            .ok_or_else(|| BvarError::NumericalFailure("singular Wishart draw".into()))?;
        CovMatrix::new(symmetrize(&(w_chol_inv.transpose() * w_chol_inv)))
            .map_err(|e| BvarError::NumericalFailure(format!("inverse-Wishart draw: {e}")))
    }

    /// `A ~ MN(Ā, V̄, Σ)` given a covariance draw.
    pub fn draw_coefficients<R: rand::Rng>(&self, cov: &CovMatrix, rng: &mut R) -> VarCoefficients {
        let (n, m) = self.moments.a_bar.shape();
        let g = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng));
        let a = &self.moments.a_bar + &self.chol_v * g * cov.chol().transpose();
        VarCoefficients::new(a, self.moments.m, self.moments.p).expect("draw has posterior shape")
    }

    pub fn draw(&self, seed: u64, draw_index: usize) -> Result<PosteriorDraw> {
        let mut rng = stream_rng(seed, draw_index as u64);
        let cov = self.draw_sigma(&mut rng)?;
        let coeffs = self.draw_coefficients(&cov, &mut rng);
        Ok(PosteriorDraw { coeffs, cov, draw_index, rng_seed: seed })
    }
}

/// `r` joint draws; draw `i` uses stream `i` of `seed`, so the output does
/// not depend on the thread count.
pub fn sample_posterior(moments: &PosteriorMoments, r: usize, seed: u64) -> Result<Vec<PosteriorDraw>> {
    if r == 0 {
        return Err(BvarError::InvalidInput("draw count must be at least 1".into()));
    }
    let sampler = PosteriorSampler::new(moments)?;
    (0..r)
        .into_par_iter()
        .map(|i| sampler.draw(seed, i).map_err(|e| e.at_draw(i)))
        .collect()
}

/// Multivariate Student-t one-step predictive.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveT {
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

impl PredictiveT {
    pub fn variance(&self) -> DMatrix<f64> {
        &self.scale * (self.dof / (self.dof - 2.0))
    }

    pub fn log_density(&self, y: &DVector<f64>) -> Result<f64> {
        let d = self.mean.len() as f64;
        let f = SpdFactor::new(self.scale.clone()).map_err(|e| BvarError::NotPositiveDefinite(e.to_string()))?;
        let e = y - &self.mean;
        let q = e.dot(&f.solve_vec(&e));
        let nu = self.dof;
        Ok(statrs::function::gamma::ln_gamma((nu + d) / 2.0)
            - statrs::function::gamma::ln_gamma(nu / 2.0)
            - d / 2.0 * (nu * std::f64::consts::PI).ln()
            - 0.5 * f.log_det()
            - (nu + d) / 2.0 * (1.0 + q / nu).ln())
    }

    /// Marginal of a subset of variables.
    pub fn marginal(&self, idx: &[usize]) -> PredictiveT {
        PredictiveT {
            mean: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i])),
            scale: self.scale.select_rows(idx).select_columns(idx),
            dof: self.dof,
        }
    }
}

/// Predictive of `y_{T+1}` given regressors `x_next`. The variance is
/// `(1 + x' V̄ x) S1 / (s1 - m - 1)`, which is `(1 + x' V̄ x) S1 / (s1 - 2)`
/// when `m = 1`.
pub fn one_step_predictive(moments: &PosteriorMoments, x_next: &DVector<f64>) -> Result<PredictiveT> {
    let n = moments.n();
    if x_next.len() != n {
        return Err(BvarError::ShapeMismatch(format!("x_next has length {}, expected {n}", x_next.len())));
    }
    let m = moments.m as f64;
    let dof = moments.s1_dof - m + 1.0;
    if !(dof > 2.0) {
        return Err(BvarError::DofTooSmall(moments.s1_dof));
    }
    let quad = x_next.dot(&(&moments.v_bar * x_next));
    Ok(PredictiveT {
        mean: moments.a_bar.transpose() * x_next,
        scale: &moments.s1_scale * ((1.0 + quad) / dof),
        dof,
    })
}
