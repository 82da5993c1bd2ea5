//! Synthetic sparse VAR systems and the Monte Carlo comparison of sparse and
//! non-sparse estimators.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::minnesota::MinnesotaHyper;
use crate::posterior::{fit_minnesota, grid_search_theta, sample_posterior, PosteriorDraw, THETA1_GRID};
use crate::precision::{sparsify_precision, sparsify_precision_chain, PrecisionConfig, PrecisionMode};
use crate::rng::{derive_seed, stream_rng};
use crate::savs::{cda_draw, column_norms, savs_point, sparsify_chain, SavsConfig};
use crate::var_core::{companion_spectral_radius, CovMatrix, TimeSeriesPanel, VarCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sparsity {
    Dense,
    Moderate,
    Sparse,
    Custom(f64),
}

impl Sparsity {
    pub fn zero_fraction(self) -> f64 {
        match self {
            Self::Dense => 0.1,
            Self::Moderate => 0.6,
            Self::Sparse => 0.9,
            Self::Custom(f) => f,
        }
    }

    pub fn label(self) -> String {
        match self {
            Self::Dense => "Dense".into(),
            Self::Moderate => "Moderate".into(),
            Self::Sparse => "Sparse".into(),
            Self::Custom(f) => format!("Custom({f})"),
        }
    }
}

/// Coefficient scale used for stability at each system size.
pub fn default_xi(m: usize) -> f64 {
    match m {
        0..=5 => 0.3,
        6..=20 => 0.2,
        _ => 0.1,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    pub m: usize,
    pub t: usize,
    pub p: usize,
    /// `None` picks [`default_xi`].
    pub xi: Option<f64>,
    pub sparsity: Sparsity,
    pub seed: u64,
    pub max_stability_redraws: usize,
    pub burn_in: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self { m: 3, t: 240, p: 5, xi: None, sparsity: Sparsity::Sparse, seed: 0, max_stability_redraws: 1000, burn_in: 100 }
    }
}

impl DgpConfig {
    pub fn xi(&self) -> f64 {
        self.xi.unwrap_or_else(|| default_xi(self.m))
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.sparsity.zero_fraction();
        if !(0.0..1.0).contains(&f) {
            return Err(BvarError::InvalidInput(format!("zero fraction must lie in [0, 1), got {f}")));
        }
        if !(self.xi() > 0.0) || !self.xi().is_finite() {
            return Err(BvarError::InvalidInput(format!("xi must be positive, got {}", self.xi())));
        }
        if self.m == 0 || self.p == 0 {
            return Err(BvarError::InvalidInput("m and p must be at least 1".into()));
        }
        if self.t < self.p + 1 {
            return Err(BvarError::TooFewObservations { needed: self.p, got: self.t });
        }
        if self.max_stability_redraws == 0 {
            return Err(BvarError::InvalidInput("max_stability_redraws must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpTruth {
    pub coeffs_true: VarCoefficients,
    pub chol_true: DMatrix<f64>,
    pub sigma_true: CovMatrix,
    /// Same layout as the coefficient matrix; `true` marks a planted zero.
    pub zero_mask_coeffs: DMatrix<bool>,
    pub zero_mask_chol: DMatrix<bool>,
    /// Number of systems discarded as unstable before this one.
    pub redraws: usize,
}

/// Zeroes `round(frac * n)` of the listed positions, chosen uniformly.
fn plant_zeros<R: Rng>(rng: &mut R, positions: &[(usize, usize)], frac: f64, mat: &mut DMatrix<f64>, mask: &mut DMatrix<bool>) {
    let count = (frac * positions.len() as f64).round() as usize;
    for k in sample(rng, positions.len(), count.min(positions.len())) {
        let (i, j) = positions[k];
        mat[(i, j)] = 0.0;
        mask[(i, j)] = true;
    }
}

fn draw_once(cfg: &DgpConfig, rng: &mut ChaCha8Rng) -> Result<(VarCoefficients, DMatrix<f64>, DMatrix<bool>, DMatrix<bool>)> {
    let (m, p) = (cfg.m, cfg.p);
    let xi = cfg.xi();
    let frac = cfg.sparsity.zero_fraction();
    // only the first own lags are protected from zeroing
    let off_diag: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let all: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect();

    let mut lags = Vec::with_capacity(p);
    let mut lag_masks = Vec::with_capacity(p);
    for j in 1..=p {
        let dist = Normal::new(0.0, xi / j as f64).map_err(|e| BvarError::InvalidInput(e.to_string()))?;
        let mut a = DMatrix::from_fn(m, m, |_, _| dist.sample(rng));
        if j == 1 {
            for i in 0..m {
                a[(i, i)] += 0.25;
            }
        }
        let mut mask = DMatrix::from_element(m, m, false);
        plant_zeros(rng, if j == 1 { &off_diag } else { &all }, frac, &mut a, &mut mask);
        lags.push(a);
        lag_masks.push(mask);
    }
    let coeffs = VarCoefficients::from_lag_matrices(&lags, &DVector::zeros(m))?;

    // lag matrices are (equation, source); the coefficient matrix stores (row, equation)
    let mut coef_mask = DMatrix::from_element(m * p + 1, m, false);
    for (l, mask) in lag_masks.iter().enumerate() {
        for eq in 0..m {
            for src in 0..m {
                coef_mask[(l * m + src, eq)] = mask[(eq, src)];
            }
        }
    }

    let lower: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
    let mut chol = DMatrix::from_fn(m, m, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Greater => xi * rng.sample::<f64, _>(StandardNormal),
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Less => 0.0,
    });
    let mut chol_mask = DMatrix::from_element(m, m, false);
    plant_zeros(rng, &lower, frac, &mut chol, &mut chol_mask);
    // rescale each row so that diag(Σ) = 0.25 exactly
    for i in 0..m {
        let norm = chol.row(i).norm();
        for j in 0..=i {
            chol[(i, j)] *= 0.5 / norm;
        }
    }
    Ok((coeffs, chol, coef_mask, chol_mask))
}

pub fn draw_dgp(cfg: &DgpConfig) -> Result<DgpTruth> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, 0);
    for attempt in 0..cfg.max_stability_redraws {
        let (coeffs, chol, coef_mask, chol_mask) = draw_once(cfg, &mut rng)?;
        if companion_spectral_radius(&coeffs)? < 1.0 {
            let sigma_true = CovMatrix::from_cholesky(chol.clone())?;
            return Ok(DgpTruth {
                coeffs_true: coeffs,
                chol_true: chol,
                sigma_true,
                zero_mask_coeffs: coef_mask,
                zero_mask_chol: chol_mask,
                redraws: attempt,
            });
        }
    }
    Err(BvarError::StabilityExhausted(cfg.max_stability_redraws))
}

/// Iterates the VAR from zero initial conditions with Gaussian shocks and
/// returns the `t` rows following `burn_in`.
pub fn simulate_series(truth: &DgpTruth, t: usize, burn_in: usize, seed: u64) -> Result<TimeSeriesPanel> {
    let coeffs = &truth.coeffs_true;
    let (m, p) = (coeffs.m(), coeffs.p());
    if t < p + 1 {
        return Err(BvarError::TooFewObservations { needed: p, got: t });
    }
    let a = coeffs.matrix();
    let chol = &truth.chol_true;
    let total = burn_in + t;
    let mut rng = stream_rng(seed, 1);
    let mut y = DMatrix::zeros(total, m);
    let mut x = DVector::zeros(m * p + 1);
    x[m * p] = 1.0;
    for s in 0..total {
        for lag in 1..=p {
            for i in 0..m {
                x[(lag - 1) * m + i] = if s >= lag { y[(s - lag, i)] } else { 0.0 };
            }
        }
        let eps = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let row = a.tr_mul(&x) + chol * eps;
        y.row_mut(s).copy_from(&row.transpose());
    }
    TimeSeriesPanel::from_matrix(y.rows(burn_in, t).into_owned())
}

/// Mean absolute deviation over all entries.
pub fn mae(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() {
        return Err(BvarError::ShapeMismatch(format!("{:?} vs {:?}", estimate.shape(), truth.shape())));
    }
    if truth.is_empty() {
        return Err(BvarError::EmptyInput("mae of empty matrices".into()));
    }
    Ok((estimate - truth).abs().mean())
}

/// Mean absolute deviation over the lower triangle including the diagonal.
pub fn mae_lower(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != truth.shape() || !truth.is_square() {
        return Err(BvarError::ShapeMismatch(format!("{:?} vs {:?}", estimate.shape(), truth.shape())));
    }
    let m = truth.nrows();
    if m == 0 {
        return Err(BvarError::EmptyInput("mae of empty matrices".into()));
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..=i {
            sum += (estimate[(i, j)] - truth[(i, j)]).abs();
        }
    }
    Ok(sum / (m * (m + 1) / 2) as f64)
}

/// Entry-wise median of equally shaped matrices.
pub fn elementwise_median<'a>(mats: impl IntoIterator<Item = &'a DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let mats: Vec<&DMatrix<f64>> = mats.into_iter().collect();
    let first = mats.first().ok_or_else(|| BvarError::EmptyInput("median of no matrices".into()))?;
    let (r, c) = first.shape();
    if mats.iter().any(|m| m.shape() != (r, c)) {
        return Err(BvarError::ShapeMismatch("matrices differ in shape".into()));
    }
    let mut buf = vec![0.0; mats.len()];
    Ok(DMatrix::from_fn(r, c, |i, j| {
        for (b, m) in buf.iter_mut().zip(&mats) {
            *b = m[(i, j)];
        }
        median_in_place(&mut buf)
    }))
}

pub(crate) fn median_in_place(xs: &mut [f64]) -> f64 {
    let n = xs.len();
    xs.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Which parameterization of the error covariance enters the MAE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovTarget {
    Sigma,
    Cholesky,
    Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StudyEstimator {
    /// Non-sparse Minnesota posterior with θ1 chosen by marginal likelihood.
    Benchmark,
    /// Every draw sparsified in one pass (coefficients and precision).
    Sparse { lambda: f64 },
    /// The posterior median sparsified once.
    SavsMedian { lambda: f64 },
    /// Every draw sparsified by coordinate descent run to convergence.
    Cda { lambda: f64 },
}

impl StudyEstimator {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Benchmark => "benchmark",
            Self::Sparse { .. } => "sparse",
            Self::SavsMedian { .. } => "savs_median",
            Self::Cda { .. } => "cda",
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            Self::Benchmark => 0.0,
            Self::Sparse { lambda } | Self::SavsMedian { lambda } | Self::Cda { lambda } => lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub cells: Vec<DgpConfig>,
    pub replications: usize,
    pub draws: usize,
    pub estimators: Vec<StudyEstimator>,
    pub theta1_grid: Vec<f64>,
    pub savs: SavsConfig,
    pub precision: PrecisionConfig,
    pub cov_target: CovTarget,
    pub cda_tol: f64,
    pub cda_max_iter: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            cells: vec![DgpConfig::default()],
            replications: 30,
            draws: 1000,
            estimators: vec![
                StudyEstimator::Sparse { lambda: 0.01 },
                StudyEstimator::Sparse { lambda: 0.1 },
                StudyEstimator::Sparse { lambda: 0.5 },
                StudyEstimator::Sparse { lambda: 1.0 },
                StudyEstimator::SavsMedian { lambda: 1.0 },
                StudyEstimator::Cda { lambda: 1.0 },
            ],
            theta1_grid: THETA1_GRID.to_vec(),
            savs: SavsConfig::default(),
            precision: PrecisionConfig::default(),
            cov_target: CovTarget::Sigma,
            cda_tol: 1e-10,
            cda_max_iter: 1000,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 || self.draws == 0 {
            return Err(BvarError::InvalidInput("replications and draws must be at least 1".into()));
        }
        if self.cells.is_empty() {
            return Err(BvarError::EmptyInput("study has no cells".into()));
        }
        for c in &self.cells {
            c.validate()?;
        }
        for e in &self.estimators {
            if !(e.lambda() >= 0.0) {
                return Err(BvarError::InvalidInput(format!("lambda must be >= 0, got {}", e.lambda())));
            }
        }
        self.savs.validate()?;
        self.precision.validate()
    }
}

/// Point estimates of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub coeffs: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub theta1: f64,
    /// Benchmark first, then the configured estimators in order.
    pub mae_coeffs: Vec<f64>,
    pub mae_cov: Vec<f64>,
    /// Hash of the simulated panel, shared by every estimator.
    pub data_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub m: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub sparsity: String,
    pub estimator: String,
    pub lambda: f64,
    pub varpi: f64,
    pub mean_ratio_coeffs: f64,
    pub se_coeffs: f64,
    pub mean_ratio_cov: f64,
    pub se_cov: f64,
    pub replications: usize,
}

fn cov_param(sigma: &DMatrix<f64>, target: CovTarget) -> Result<DMatrix<f64>> {
    match target {
        CovTarget::Sigma => Ok(sigma.clone()),
        CovTarget::Cholesky => Ok(CovMatrix::new(crate::linalg::symmetrize(sigma))?.chol().clone()),
        CovTarget::Precision => Ok(CovMatrix::new(crate::linalg::symmetrize(sigma))?.precision()),
    }
}

fn estimate_with(
    est: &StudyEstimator,
    draws: &[PosteriorDraw],
    bench: &Estimate,
    design: &crate::var_core::LagDesign,
    study: &StudyConfig,
) -> Result<Estimate> {
    let lambda = est.lambda();
    let savs_cfg = SavsConfig { lambda, ..study.savs.clone() };
    let prec_cfg = PrecisionConfig { varpi: lambda / 10.0, ..study.precision.clone() };
    let norms = column_norms(design);
    match est {
        StudyEstimator::Benchmark => Ok(bench.clone()),
        StudyEstimator::Sparse { .. } => {
            let (sparse, _) = sparsify_chain(draws, &norms, &savs_cfg)?;
            let sigma = if prec_cfg.varpi == 0.0 {
                bench.sigma.clone()
            } else {
                let (prec, _) = sparsify_precision_chain(draws, &prec_cfg)?;
                let covs = prec.iter().map(|p| p.covariance()).collect::<Result<Vec<_>>>()?;
                elementwise_median(&covs)?
            };
            Ok(Estimate { coeffs: elementwise_median(sparse.iter().map(|s| s.coeffs_sparse.matrix()))?, sigma })
        }
        StudyEstimator::SavsMedian { .. } => {
            let median = VarCoefficients::new(bench.coeffs.clone(), design.m, design.p)?;
            let coeffs = savs_point(&median, &norms, &savs_cfg)?.coeffs_sparse.into_matrix();
            let cov = CovMatrix::new(crate::linalg::symmetrize(&bench.sigma))?;
            let sigma = sparsify_precision(&cov, &prec_cfg)?.covariance()?;
            Ok(Estimate { coeffs, sigma })
        }
        StudyEstimator::Cda { .. } => {
            let gram = design.x.tr_mul(&design.x);
            let prec_cfg = PrecisionConfig { mode: PrecisionMode::IterateToTol, ..prec_cfg };
            let pieces = draws
                .par_iter()
                .map(|d| {
                    let c = cda_draw(&d.coeffs, &gram, &savs_cfg, study.cda_tol, study.cda_max_iter)?;
                    let s = sparsify_precision(&d.cov, &prec_cfg)?.covariance()?;
                    Ok((c.coeffs_sparse.into_matrix(), s))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Estimate {
                coeffs: elementwise_median(pieces.iter().map(|p| &p.0))?,
                sigma: elementwise_median(pieces.iter().map(|p| &p.1))?,
            })
        }
    }
}

pub(crate) fn panel_hash(panel: &TimeSeriesPanel) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in panel.values().iter() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// One replication of one cell: simulate, fit the benchmark, apply every
/// estimator to the same draws.
pub fn run_replication(cell: &DgpConfig, study: &StudyConfig, replication: usize) -> Result<ReplicationResult> {
    let rep_seed = derive_seed(cell.seed, replication as u64);
    let truth = draw_dgp(&DgpConfig { seed: rep_seed, ..cell.clone() })?;
    let panel = simulate_series(&truth, cell.t, cell.burn_in, derive_seed(rep_seed, 1))?;
    let hyper = MinnesotaHyper::new(cell.m, study.theta1_grid[0]);
    let grid = grid_search_theta(&panel, cell.p, &study.theta1_grid, &hyper)?;
    let fit = fit_minnesota(&panel, cell.p, &hyper.with_theta1(grid.best_theta1))?;
    let draws = sample_posterior(&fit.moments, study.draws, derive_seed(rep_seed, 2))?;
    let bench = Estimate {
        coeffs: elementwise_median(draws.iter().map(|d| d.coeffs.matrix()))?,
        sigma: elementwise_median(draws.iter().map(|d| d.cov.sigma()))?,
    };
    let truth_cov = cov_param(truth.sigma_true.sigma(), study.cov_target)?;
    let score = |e: &Estimate| -> Result<(f64, f64)> {
        Ok((mae(&e.coeffs, truth.coeffs_true.matrix())?, mae_lower(&cov_param(&e.sigma, study.cov_target)?, &truth_cov)?))
    };
    let (bc, bs) = score(&bench)?;
    let mut mae_coeffs = vec![bc];
    let mut mae_cov = vec![bs];
    for est in &study.estimators {
        let e = estimate_with(est, &draws, &bench, &fit.design, study)?;
        let (c, s) = score(&e)?;
        mae_coeffs.push(c);
        mae_cov.push(s);
    }
    Ok(ReplicationResult { theta1: grid.best_theta1, mae_coeffs, mae_cov, data_hash: panel_hash(&panel) })
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs every cell; replications run in parallel and are reduced in order.
/// Returns one row per (cell, estimator) with the benchmark row first.
pub fn run_study(study: &StudyConfig) -> Result<(Vec<StudyRow>, Vec<Vec<ReplicationResult>>)> {
    study.validate()?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for cell in &study.cells {
        let reps = (0..study.replications)
            .into_par_iter()
            .map(|r| run_replication(cell, study, r).map_err(|e| e.at_replication(r)))
            .collect::<Result<Vec<_>>>()?;
        let labels = std::iter::once(StudyEstimator::Benchmark).chain(study.estimators.iter().copied());
        for (k, est) in labels.enumerate() {
            let rc: Vec<f64> = reps.iter().map(|r| r.mae_coeffs[k] / r.mae_coeffs[0]).collect();
            let rs: Vec<f64> = reps.iter().map(|r| r.mae_cov[k] / r.mae_cov[0]).collect();
            let (mc, sc) = mean_se(&rc);
            let (ms, ss) = mean_se(&rs);
            rows.push(StudyRow {
                m: cell.m,
                t: cell.t,
                sparsity: cell.sparsity.label(),
                estimator: est.label().into(),
                lambda: est.lambda(),
                varpi: est.lambda() / 10.0,
                mean_ratio_coeffs: mc,
                se_coeffs: sc,
                mean_ratio_cov: ms,
                se_cov: ss,
                replications: reps.len(),
            });
        }
        all.push(reps);
    }
    Ok((rows, all))
}

pub fn write_study_csv<W: std::io::Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn truth_has_target_structure() {
        for (m, sp) in [(3, Sparsity::Dense), (10, Sparsity::Moderate), (30, Sparsity::Sparse)] {
            let cfg = DgpConfig { m, sparsity: sp, seed: 7, ..Default::default() };
            let truth = draw_dgp(&cfg).unwrap();
            assert!(companion_spectral_radius(&truth.coeffs_true).unwrap() < 1.0);
            for i in 0..m {
                assert_relative_eq!(truth.sigma_true.sigma()[(i, i)], 0.25, epsilon = 1e-14);
            }
            for l in 0..cfg.p {
                let candidates = if l == 0 { m * (m - 1) } else { m * m };
                let expected = (sp.zero_fraction() * candidates as f64).round() as usize;
                let zeros = (0..m).flat_map(|s| (0..m).map(move |e| (s, e))).filter(|&(s, e)| truth.zero_mask_coeffs[(l * m + s, e)]).count();
                assert_eq!(zeros, expected);
            }
            for (idx, z) in truth.zero_mask_coeffs.iter().enumerate() {
                if *z {
                    assert_eq!(truth.coeffs_true.matrix().as_slice()[idx], 0.0);
                }
            }
            assert!(truth.zero_mask_coeffs.row(cfg.p * m).iter().all(|z| !z));
            for i in 0..m {
                assert!(!truth.zero_mask_coeffs[(i, i)]);
            }
            assert!(truth.coeffs_true.intercept().iter().all(|c| *c == 0.0));
        }
    }

    #[test]
    fn zero_fraction_of_large_sparse_system() {
        let cfg = DgpConfig { m: 30, sparsity: Sparsity::Sparse, seed: 3, ..Default::default() };
        let truth = draw_dgp(&cfg).unwrap();
        let m = 30;
        let mut zeros = 0;
        let mut total = 0;
        for l in 0..cfg.p {
            for s in 0..m {
                for e in 0..m {
                    if s != e {
                        total += 1;
                        zeros += (truth.coeffs_true.matrix()[(l * m + s, e)] == 0.0) as usize;
                    }
                }
            }
        }
        assert!((zeros as f64 / total as f64 - 0.9).abs() < 0.02);
    }

    #[test]
    fn simulation_is_deterministic_and_noiseless_limit_vanishes() {
        let cfg = DgpConfig { m: 3, t: 50, seed: 1, ..Default::default() };
        let truth = draw_dgp(&cfg).unwrap();
        let a = simulate_series(&truth, 50, 100, 9).unwrap();
        let b = simulate_series(&truth, 50, 100, 9).unwrap();
        assert_eq!(a, b);
        let quiet = DgpTruth {
            coeffs_true: VarCoefficients::zeros(3, 5),
            chol_true: &truth.chol_true * 1e-12,
            ..truth.clone()
        };
        let y = simulate_series(&quiet, 50, 10, 9).unwrap();
        assert!(y.values().amax() < 1e-10);
        assert!(simulate_series(&truth, 5, 10, 9).is_err());
    }

    #[test]
    fn mae_examples() {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
        assert_eq!(mae(&t.add_scalar(1.0), &t).unwrap(), 1.0);
        assert!(mae(&t, &DMatrix::zeros(3, 2)).is_err());
        let mut e = t.clone();
        e[(0, 1)] = 100.0;
        assert_eq!(mae_lower(&e, &t).unwrap(), 0.0);
    }

    #[test]
    fn medians() {
        let mats: Vec<DMatrix<f64>> = [3.0, 1.0, 2.0, 10.0].iter().map(|v| DMatrix::from_element(1, 2, *v)).collect();
        assert_eq!(elementwise_median(&mats[..3]).unwrap()[(0, 0)], 2.0);
        assert_eq!(elementwise_median(&mats).unwrap()[(0, 1)], 2.5);
    }

    #[test]
    fn tiny_study_benchmark_ratio_is_one() {
        let study = StudyConfig {
            cells: vec![DgpConfig { m: 2, t: 60, p: 2, seed: 5, ..Default::default() }],
            replications: 2,
            draws: 50,
            estimators: vec![StudyEstimator::Benchmark, StudyEstimator::Sparse { lambda: 0.0 }, StudyEstimator::Sparse { lambda: 1.0 }],
            theta1_grid: vec![0.1, 0.5],
            ..Default::default()
        };
        let (rows, reps) = run_study(&study).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows[..3] {
            assert_eq!(r.mean_ratio_coeffs, 1.0);
            assert_eq!(r.mean_ratio_cov, 1.0);
        }
        assert!(rows[3].mean_ratio_coeffs.is_finite());
        let again = run_study(&study).unwrap().1;
        assert_eq!(reps[0][1].data_hash, again[0][1].data_hash);
        assert_eq!(reps[0][1].mae_coeffs, again[0][1].mae_coeffs);
    }
}
