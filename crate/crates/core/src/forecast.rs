//! Multi-step forecasting from posterior draws, principal-component factors
//! and the recursive expanding-window exercise.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{standardize, Standardization};
use crate::error::{BvarError, Result};
use crate::minnesota::MinnesotaHyper;
use crate::posterior::{fit_minnesota, grid_search_theta, one_step_predictive, sample_posterior, PredictiveT, THETA1_GRID};
use crate::precision::{sparsify_precision_chain, PrecisionConfig};
use crate::rng::{derive_seed, stream_rng};
use crate::savs::{column_norms, sparsify_chain, SavsConfig};
use crate::var_core::{regressor_row, CovMatrix, TimeSeriesPanel, VarCoefficients};

/// Parameters used to propagate one draw forward.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastDraw {
    pub coeffs: VarCoefficients,
    /// Shock covariance: the drawn `Σ`, or the inverse of the sparsified
    /// precision.
    pub cov: CovMatrix,
}

/// Forecasts for one origin. Horizon-indexed vectors follow `horizons`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRun {
    pub horizons: Vec<usize>,
    /// Variables (column indices of the model) carried in the output.
    pub targets: Vec<usize>,
    /// Simulated values: per horizon, one row per (draw, simulation).
    pub paths: Vec<DMatrix<f64>>,
    /// Mean of `paths` per horizon.
    pub point: Vec<DVector<f64>>,
    /// Per-draw conditional means: per horizon, one row per draw.
    pub cond_means: Vec<DMatrix<f64>>,
    /// Per-draw conditional covariances: per horizon, per draw.
    pub cond_covs: Vec<Vec<DMatrix<f64>>>,
}

impl ForecastRun {
    pub fn horizon_index(&self, h: usize) -> Option<usize> {
        self.horizons.iter().position(|&x| x == h)
    }
}

struct DrawForecast {
    paths: Vec<DMatrix<f64>>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

/// Conditional means and covariances of the targets at every step up to
/// `h_max`, with the draw's parameters held fixed.
fn conditional_moments(d: &ForecastDraw, history: &DMatrix<f64>, targets: &[usize], h_max: usize) -> (Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let (m, p) = (d.coeffs.m(), d.coeffs.p());
    let a = d.coeffs.matrix();
    let mut hist: Vec<DVector<f64>> = (0..p).map(|i| history.row(history.nrows() - p + i).transpose()).collect();
    let mut means = Vec::with_capacity(h_max);
    let intercept = d.coeffs.intercept();
    // rows of the companion power restricted to the targets, split in lag blocks
    let mt = targets.len();
    let mut r: Vec<DMatrix<f64>> = (0..p)
        .map(|j| if j == 0 { DMatrix::from_fn(mt, m, |i, c| (targets[i] == c) as u8 as f64) } else { DMatrix::zeros(mt, m) })
        .collect();
    let sigma = d.cov.sigma();
    let mut acc = DMatrix::zeros(mt, mt);
    let mut covs = Vec::with_capacity(h_max);
    for _ in 0..h_max {
        let mut y = intercept.clone();
        for lag in 1..=p {
            let block = a.rows((lag - 1) * m, m);
            y += block.tr_mul(&hist[p - lag]);
        }
        means.push(DVector::from_iterator(mt, targets.iter().map(|&i| y[i])));
        hist.remove(0);
        hist.push(y);

        let psi = &r[0];
        acc += psi * sigma * psi.transpose();
        covs.push(crate::linalg::symmetrize(&acc));
        let r1 = r[0].clone();
        let next: Vec<DMatrix<f64>> = (0..p)
            .map(|j| {
                let from_a = &r1 * a.rows(j * m, m).transpose();
                if j + 1 < p {
                    from_a + &r[j + 1]
                } else {
                    from_a
                }
            })
            .collect();
        r = next;
    }
    (means, covs)
}

fn forecast_one_draw(d: &ForecastDraw, history: &DMatrix<f64>, horizons: &[usize], targets: &[usize], sims: usize, seed: u64, index: usize) -> DrawForecast {
    let (m, p) = (d.coeffs.m(), d.coeffs.p());
    let h_max = *horizons.iter().max().expect("nonempty horizons");
    let (means, covs) = conditional_moments(d, history, targets, h_max);
    let mut rng = stream_rng(seed, index as u64);
    let a = d.coeffs.matrix();
    let l = d.cov.chol();
    let intercept = d.coeffs.intercept();
    let mut paths: Vec<DMatrix<f64>> = horizons.iter().map(|_| DMatrix::zeros(sims, targets.len())).collect();
    for s in 0..sims {
        let mut hist: Vec<DVector<f64>> = (0..p).map(|i| history.row(history.nrows() - p + i).transpose()).collect();
        for step in 1..=h_max {
            let mut y = intercept.clone();
            for lag in 1..=p {
                y += a.rows((lag - 1) * m, m).tr_mul(&hist[p - lag]);
            }
            let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            y += l * eps;
            for (k, &h) in horizons.iter().enumerate() {
                if h == step {
                    for (c, &t) in targets.iter().enumerate() {
                        paths[k][(s, c)] = y[t];
                    }
                }
            }
            hist.remove(0);
            hist.push(y);
        }
    }
    DrawForecast {
        paths,
        means: horizons.iter().map(|&h| means[h - 1].clone()).collect(),
        covs: horizons.iter().map(|&h| covs[h - 1].clone()).collect(),
    }
}

/// Simulates `sims_per_draw` paths per draw from the last `p` rows of
/// `history`. Draw `r` uses stream `r` of `seed`.
pub fn simulate_forecast(
    draws: &[ForecastDraw],
    history: &DMatrix<f64>,
    horizons: &[usize],
    targets: &[usize],
    sims_per_draw: usize,
    seed: u64,
) -> Result<ForecastRun> {
    let first = draws.first().ok_or_else(|| BvarError::EmptyInput("no draws to forecast from".into()))?;
    let (m, p) = (first.coeffs.m(), first.coeffs.p());
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(BvarError::InvalidInput("horizons must be nonempty and positive".into()));
    }
    if sims_per_draw == 0 {
        return Err(BvarError::InvalidInput("sims_per_draw must be at least 1".into()));
    }
    if history.ncols() != m || history.nrows() < p {
        return Err(BvarError::ShapeMismatch(format!("history is {:?}, need at least {p} rows of {m} variables", history.shape())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= m) {
        return Err(BvarError::IndexOutOfRange(format!("target {t} with m = {m}")));
    }
    if draws.iter().any(|d| d.coeffs.m() != m || d.coeffs.p() != p || d.cov.dim() != m) {
        return Err(BvarError::ShapeMismatch("draws differ in dimension".into()));
    }
    let per: Vec<DrawForecast> = draws
        .par_iter()
        .enumerate()
        .map(|(i, d)| forecast_one_draw(d, history, horizons, targets, sims_per_draw, seed, i))
        .collect();
    let mt = targets.len();
    let r = draws.len();
    let mut paths = Vec::with_capacity(horizons.len());
    let mut point = Vec::with_capacity(horizons.len());
    let mut cond_means = Vec::with_capacity(horizons.len());
    let mut cond_covs = Vec::with_capacity(horizons.len());
    for k in 0..horizons.len() {
        let mut all = DMatrix::zeros(r * sims_per_draw, mt);
        for (i, f) in per.iter().enumerate() {
            all.rows_mut(i * sims_per_draw, sims_per_draw).copy_from(&f.paths[k]);
        }
        point.push(all.row_mean().transpose());
        paths.push(all);
        cond_means.push(DMatrix::from_fn(r, mt, |i, c| per[i].means[k][c]));
        cond_covs.push(per.iter().map(|f| f.covs[k].clone()).collect());
    }
    Ok(ForecastRun { horizons: horizons.to_vec(), targets: targets.to_vec(), paths, point, cond_means, cond_covs })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSpec {
    pub n_factors: usize,
    /// One column per factor, one row per input variable.
    pub loadings: DMatrix<f64>,
    pub explained: Vec<f64>,
    pub standardization: Standardization,
}

/// Principal components of the standardized panel, ordered by eigenvalue.
/// Each loading vector is signed so that its largest-magnitude entry is
/// positive.
pub fn pca_factors(panel: &TimeSeriesPanel, n_factors: usize) -> Result<(FactorSpec, DMatrix<f64>)> {
    if n_factors == 0 || panel.nvars() < n_factors {
        return Err(BvarError::InvalidInput(format!("cannot extract {n_factors} factors from {} series", panel.nvars())));
    }
    let (z, stats) = standardize(panel)?;
    let z = z.values();
    let (t, n) = z.shape();
    let use_rows = t < n;
    let gram = if use_rows { z * z.transpose() } else { z.transpose() * z };
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let tol = 1e-10 * eig.eigenvalues[order[0]].abs().max(1e-300);
    let found = order.iter().filter(|&&k| eig.eigenvalues[k] > tol).count();
    if found < n_factors {
        return Err(BvarError::RankDeficient { wanted: n_factors, found });
    }
    let mut loadings = DMatrix::zeros(n, n_factors);
    let mut explained = Vec::with_capacity(n_factors);
    for (f, &k) in order.iter().take(n_factors).enumerate() {
        let val = eig.eigenvalues[k];
        let vec = eig.eigenvectors.column(k);
        let mut load: DVector<f64> = if use_rows { z.tr_mul(&vec) / val.sqrt() } else { vec.into_owned() };
        let lead = load.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            load.neg_mut();
        }
        loadings.set_column(f, &load);
        explained.push(val / total);
    }
    let factors = z * &loadings;
    Ok((FactorSpec { n_factors, loadings, explained, standardization: stats }, factors))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ThetaMode {
    Grid(Vec<f64>),
    Fixed(f64),
}

impl Default for ThetaMode {
    fn default() -> Self {
        Self::Grid(THETA1_GRID.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifySpec {
    pub savs: SavsConfig,
    pub precision: PrecisionConfig,
}

impl SparsifySpec {
    /// The pairing used throughout: `ϖ = λ / 10`.
    pub fn with_lambda(lambda: f64) -> Self {
        Self { savs: SavsConfig::with_lambda(lambda), precision: PrecisionConfig::for_lambda(lambda) }
    }
}

/// One forecasting model: a variable list, a prior and optional
/// sparsification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Columns entering the VAR directly; the forecast targets are among
    /// them.
    pub variables: Vec<String>,
    /// Columns summarized by principal components appended to the VAR.
    #[serde(default)]
    pub factor_inputs: Vec<String>,
    #[serde(default)]
    pub n_factors: usize,
    pub p: usize,
    pub theta: ThetaMode,
    #[serde(default)]
    pub sparsify: Option<SparsifySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExerciseConfig {
    pub horizons: Vec<usize>,
    pub draws: usize,
    pub sims_per_draw: usize,
    pub seed: u64,
    pub targets: Vec<String>,
}

impl Default for ExerciseConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 4, 8],
            draws: 1000,
            sims_per_draw: 1,
            seed: 0,
            targets: crate::data::DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Forecasts made at one origin, in the origin's standardized units.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginForecast {
    /// Row index of the last observation used for estimation.
    pub origin: usize,
    pub origin_label: String,
    pub theta1: f64,
    pub run: ForecastRun,
    /// Realized target values per horizon; `None` past the sample end.
    pub realized: Vec<Option<DVector<f64>>>,
    /// Closed-form one-step predictive of the targets (non-sparse models).
    pub one_step_t: Option<PredictiveT>,
    pub standardization: Standardization,
}

fn column_indices(panel: &TimeSeriesPanel, names: &[String]) -> Result<Vec<usize>> {
    names.iter().map(|n| panel.column_index(n).ok_or_else(|| BvarError::MissingColumn(n.clone()))).collect()
}

/// Builds the model panel for rows `0..=origin`: selected variables plus
/// factors extracted from data through the origin only.
pub fn model_window(panel: &TimeSeriesPanel, spec: &ModelSpec, origin: usize) -> Result<TimeSeriesPanel> {
    let window = panel.slice_rows(0, origin + 1)?;
    let direct = window.select_columns(&column_indices(&window, &spec.variables)?)?;
    if spec.n_factors == 0 {
        return Ok(direct);
    }
    let inputs = window.select_columns(&column_indices(&window, &spec.factor_inputs)?)?;
    let (_, factors) = pca_factors(&inputs, spec.n_factors)?;
    let names = (1..=spec.n_factors).map(|k| format!("PC{k}")).collect();
    direct.hstack(&TimeSeriesPanel::new(factors, names, window.dates().to_vec())?)
}

/// Estimates and forecasts at a single origin.
pub fn forecast_at_origin(panel: &TimeSeriesPanel, spec: &ModelSpec, cfg: &ExerciseConfig, origin: usize) -> Result<OriginForecast> {
    let raw = model_window(panel, spec, origin)?;
    let (z, stats) = standardize(&raw)?;
    let targets = column_indices(&z, &cfg.targets)?;
    let m = z.nvars();
    let hyper0 = MinnesotaHyper::new(m, 0.1);
    let theta1 = match &spec.theta {
        ThetaMode::Fixed(t) => *t,
        ThetaMode::Grid(g) => grid_search_theta(&z, spec.p, g, &hyper0)?.best_theta1,
    };
    let fit = fit_minnesota(&z, spec.p, &hyper0.with_theta1(theta1))?;
    let origin_seed = derive_seed(cfg.seed, origin as u64);
    let draws = sample_posterior(&fit.moments, cfg.draws, derive_seed(origin_seed, 1))?;
    let fdraws: Vec<ForecastDraw> = match &spec.sparsify {
        None => draws.iter().map(|d| ForecastDraw { coeffs: d.coeffs.clone(), cov: d.cov.clone() }).collect(),
        Some(sp) => {
            let (coeffs, _) = sparsify_chain(&draws, &column_norms(&fit.design), &sp.savs)?;
            let covs: Vec<CovMatrix> = if sp.precision.varpi == 0.0 {
                draws.iter().map(|d| d.cov.clone()).collect()
            } else {
                let (prec, _) = sparsify_precision_chain(&draws, &sp.precision)?;
                prec.iter().map(|p| CovMatrix::new(crate::linalg::symmetrize(&p.covariance()?))).collect::<Result<_>>()?
            };
            coeffs.into_iter().zip(covs).map(|(c, cov)| ForecastDraw { coeffs: c.coeffs_sparse, cov }).collect()
        }
    };
    let history = z.values();
    let run = simulate_forecast(&fdraws, history, &cfg.horizons, &targets, cfg.sims_per_draw, derive_seed(origin_seed, 2))?;

    let realized = cfg
        .horizons
        .iter()
        .map(|&h| {
            let row = origin + h;
            (row < panel.nobs()).then(|| {
                DVector::from_iterator(
                    targets.len(),
                    cfg.targets.iter().zip(&targets).map(|(name, &j)| {
                        let c = panel.column_index(name).expect("target present");
                        (panel.values()[(row, c)] - stats.mean[j]) / stats.sd[j]
                    }),
                )
            })
        })
        .collect();
    let one_step_t = if spec.sparsify.is_none() {
        let x = regressor_row(history, spec.p)?;
        Some(one_step_predictive(&fit.moments, &x)?.marginal(&targets))
    } else {
        None
    };
    Ok(OriginForecast {
        origin,
        origin_label: panel.dates()[origin].clone(),
        theta1,
        run,
        realized,
        one_step_t,
        standardization: stats,
    })
}

/// Expanding-window loop: estimate through each origin from `first_origin`
/// up to the penultimate observation and forecast every horizon.
pub fn recursive_exercise(panel: &TimeSeriesPanel, spec: &ModelSpec, cfg: &ExerciseConfig, first_origin: usize) -> Result<Vec<OriginForecast>> {
    if cfg.horizons.is_empty() || cfg.horizons.contains(&0) || cfg.draws == 0 {
        return Err(BvarError::InvalidInput("horizons must be positive and draws nonzero".into()));
    }
    let last = panel.nobs().saturating_sub(1);
    (first_origin..last)
        .map(|o| forecast_at_origin(panel, spec, cfg, o).map_err(|e| e.at_origin(panel.dates()[o].clone())))
        .collect()
}
