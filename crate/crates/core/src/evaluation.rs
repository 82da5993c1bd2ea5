//! Forecast evaluation: RMSEs, log predictive scores, equal-accuracy tests,
//! model confidence sets and PIT-based calibration checks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{BvarError, Result};
use crate::forecast::{ForecastRun, OriginForecast};
use crate::linalg::SpdFactor;
use crate::rng::stream_rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(BvarError::EmptyInput("rmse of no errors".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

pub fn rmse_ratio(model: &[f64], benchmark: &[f64]) -> Result<f64> {
    if model.len() != benchmark.len() {
        return Err(BvarError::ShapeMismatch(format!("{} vs {} errors", model.len(), benchmark.len())));
    }
    let b = rmse(benchmark)?;
    if b == 0.0 {
        return Err(BvarError::DivisionByZero("benchmark RMSE is zero".into()));
    }
    Ok(rmse(model)? / b)
}

/// Log density at `y` of the equal-weight Gaussian mixture with the given
/// component means (rows) and covariances.
pub fn mixture_log_density(means: &DMatrix<f64>, covs: &[DMatrix<f64>], y: &DVector<f64>) -> Result<f64> {
    let (r, d) = means.shape();
    if r == 0 || covs.len() != r {
        return Err(BvarError::ShapeMismatch(format!("{r} means for {} covariances", covs.len())));
    }
    if y.len() != d {
        return Err(BvarError::ShapeMismatch(format!("realization has {} entries, expected {d}", y.len())));
    }
    let logs = covs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let f = SpdFactor::new(c.clone()).map_err(|e| BvarError::NotPositiveDefinite(format!("mixture component {i}: {e}")))?;
            let e = y - means.row(i).transpose();
            Ok(-0.5 * (d as f64 * LN_2PI + f.log_det() + e.dot(&f.solve_vec(&e))))
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + (logs.iter().map(|l| (l - max).exp()).sum::<f64>() / r as f64).ln())
}

/// Which variables a score covers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    /// All forecast targets jointly.
    Joint,
    /// A single target, by position in the run's target list.
    Variable(usize),
}

impl Scope {
    fn indices(&self, n: usize) -> Vec<usize> {
        match self {
            Scope::Joint => (0..n).collect(),
            Scope::Variable(i) => vec![*i],
        }
    }
}

/// Log predictive score of `realized` at horizon position `k`, from the
/// Rao-Blackwellized mixture of per-draw conditional normals.
pub fn log_predictive_likelihood(run: &ForecastRun, k: usize, realized: &DVector<f64>, scope: &Scope) -> Result<f64> {
    let idx = scope.indices(run.targets.len());
    if idx.iter().any(|&i| i >= run.targets.len()) || k >= run.horizons.len() {
        return Err(BvarError::IndexOutOfRange(format!("scope {scope:?} or horizon position {k}")));
    }
    let means = run.cond_means[k].select_columns(&idx);
    let covs: Vec<DMatrix<f64>> = run.cond_covs[k].iter().map(|c| c.select_rows(&idx).select_columns(&idx)).collect();
    let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| realized[i]));
    mixture_log_density(&means, &covs, &y)
}

/// Bartlett-kernel long-run variance of a series around its mean.
pub fn newey_west_variance(x: &[f64], lags: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let gamma = |l: usize| (l..n).map(|t| (x[t] - mean) * (x[t - l] - mean)).sum::<f64>() / n as f64;
    let mut v = gamma(0);
    for l in 1..=lags.min(n.saturating_sub(1)) {
        v += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma(l);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub fn two_sided_p(stat: f64) -> f64 {
    if stat.is_nan() {
        return 1.0;
    }
    erfc(stat.abs() / std::f64::consts::SQRT_2)
}

fn mean_test(x: &[f64], lags: usize) -> TestResult {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = newey_west_variance(x, lags).max(0.0);
    let statistic = if var == 0.0 {
        if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        }
    } else {
        mean / (var / n).sqrt()
    };
    TestResult { statistic, p_value: two_sided_p(statistic) }
}

const MIN_TEST_LEN: usize = 10;

/// Diebold-Mariano test of a loss differential; HAC variance with `h - 1`
/// Bartlett lags.
pub fn dm_test(loss_diff: &[f64], h: usize) -> Result<TestResult> {
    if loss_diff.len() < MIN_TEST_LEN {
        return Err(BvarError::TooShort { needed: MIN_TEST_LEN, got: loss_diff.len() });
    }
    Ok(mean_test(loss_diff, h.saturating_sub(1)))
}

/// Amisano-Giacomini test of equal average log scores; same machinery as
/// [`dm_test`] applied to log-score differentials.
pub fn ag_test(lpl_diff: &[f64], h: usize) -> Result<TestResult> {
    dm_test(lpl_diff, h)
}

/// 3, 2, 1 or 0 for significance at 1%, 5%, 10% or none.
pub fn stars(p_value: f64) -> u8 {
    if p_value < 0.01 {
        3
    } else if p_value < 0.05 {
        2
    } else if p_value < 0.10 {
        1
    } else {
        0
    }
}

/// Losses of several models over common origins (rows = origins).
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    pub labels: Vec<String>,
    pub losses: DMatrix<f64>,
}

impl LossMatrix {
    pub fn new(labels: Vec<String>, losses: DMatrix<f64>) -> Result<Self> {
        if labels.len() != losses.ncols() {
            return Err(BvarError::ShapeMismatch(format!("{} labels for {} models", labels.len(), losses.ncols())));
        }
        if losses.iter().any(|x| !x.is_finite()) {
            return Err(BvarError::InvalidInput("losses must be finite".into()));
        }
        Ok(Self { labels, losses })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsConfig {
    pub alpha: f64,
    /// `None` uses `ceil(n^{1/3})`.
    pub block_len: Option<usize>,
    pub replications: usize,
    pub seed: u64,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self { alpha: 0.25, block_len: None, replications: 5000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsResult {
    /// Surviving model indices, best mean loss first.
    pub superior: Vec<usize>,
    /// Eliminated models in order, with the p-value of the test that
    /// removed each.
    pub eliminated: Vec<(usize, f64)>,
    /// MCS p-value per model (running maximum over eliminations; 1 for
    /// survivors).
    pub p_values: Vec<f64>,
}

/// Bootstrap means of every model's loss, one row per replication.
fn bootstrap_means(losses: &DMatrix<f64>, block: usize, b: usize, seed: u64) -> DMatrix<f64> {
    let (n, k) = losses.shape();
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, rep as u64);
            let mut sums = vec![0.0; k];
            let mut taken = 0;
            while taken < n {
                let start = rng.random_range(0..=n - block);
                for t in start..(start + block).min(start + n - taken) {
                    for (j, s) in sums.iter_mut().enumerate() {
                        *s += losses[(t, j)];
                    }
                }
                taken += block.min(n - taken);
            }
            sums.into_iter().map(|s| s / n as f64).collect()
        })
        .collect();
    DMatrix::from_fn(b, k, |i, j| rows[i][j])
}

/// Max-t model confidence set with a moving-block bootstrap. While
/// equivalence is rejected at `alpha`, the model with the worst mean loss
/// is dropped.
pub fn mcs(losses: &LossMatrix, cfg: &McsConfig) -> Result<McsResult> {
    let (n, k) = losses.losses.shape();
    if k < 2 {
        return Err(BvarError::TooFewModels(k));
    }
    const MIN_ORIGINS: usize = 20;
    if n < MIN_ORIGINS {
        return Err(BvarError::TooShort { needed: MIN_ORIGINS, got: n });
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || cfg.replications == 0 {
        return Err(BvarError::InvalidInput("alpha must lie in (0, 1) and replications be positive".into()));
    }
    let block = cfg.block_len.unwrap_or_else(|| (n as f64).cbrt().ceil() as usize).clamp(1, n);
    let means: Vec<f64> = (0..k).map(|j| losses.losses.column(j).mean()).collect();
    let boot = bootstrap_means(&losses.losses, block, cfg.replications, cfg.seed);
    let b = cfg.replications as f64;

    let mut alive: Vec<usize> = (0..k).collect();
    let mut eliminated = Vec::new();
    let mut p_values = vec![1.0; k];
    let mut running = 0.0_f64;
    while alive.len() > 1 {
        let avg = alive.iter().map(|&j| means[j]).sum::<f64>() / alive.len() as f64;
        let boot_avg: Vec<f64> = (0..cfg.replications).map(|r| alive.iter().map(|&j| boot[(r, j)]).sum::<f64>() / alive.len() as f64).collect();
        let mut sd = Vec::with_capacity(alive.len());
        let mut t_stat = f64::NEG_INFINITY;
        for &j in &alive {
            let d = means[j] - avg;
            let v = (0..cfg.replications).map(|r| (boot[(r, j)] - boot_avg[r] - d).powi(2)).sum::<f64>() / b;
            let s = v.sqrt();
            sd.push(s);
            let t = if s > 0.0 { d / s } else if d > 1e-14 * avg.abs().max(1.0) { f64::INFINITY } else { 0.0 };
            t_stat = t_stat.max(t);
        }
        let exceed = (0..cfg.replications)
            .filter(|&r| {
                let t_b = alive
                    .iter()
                    .zip(&sd)
                    .map(|(&j, &s)| if s > 0.0 { (boot[(r, j)] - boot_avg[r] - (means[j] - avg)) / s } else { 0.0 })
                    .fold(f64::NEG_INFINITY, f64::max);
                t_b >= t_stat
            })
            .count();
        let p = exceed as f64 / b;
        if p >= cfg.alpha {
            break;
        }
        let (pos, &worst) = alive
            .iter()
            .enumerate()
            .max_by(|a, b| means[*a.1].total_cmp(&means[*b.1]).then(b.0.cmp(&a.0)))
            .expect("nonempty");
        running = running.max(p);
        p_values[worst] = running;
        eliminated.push((worst, p));
        alive.remove(pos);
    }
    alive.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    Ok(McsResult { superior: alive, eliminated, p_values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub z: Vec<f64>,
    /// Mean of `z` (zero under calibration), Newey-West with 5 lags.
    pub mean: TestResult,
    pub mean_estimate: f64,
    /// Mean of `z²` (one under calibration), Newey-West with 3 lags.
    pub variance: TestResult,
    pub variance_estimate: f64,
    /// AR(1) slope of `z` (zero under calibration), heteroskedasticity-robust.
    pub ar1: TestResult,
    pub ar1_estimate: f64,
}

/// Normalized forecast errors `Φ^{-1}(PIT)` with the empirical CDF of the
/// predictive draws, clamped to `[1/(R+1), R/(R+1)]`, and the three
/// calibration tests.
pub fn normalized_errors(draws: &[&[f64]], realized: &[f64]) -> Result<Calibration> {
    if draws.len() != realized.len() {
        return Err(BvarError::ShapeMismatch(format!("{} predictive samples for {} realizations", draws.len(), realized.len())));
    }
    if draws.len() < MIN_TEST_LEN {
        return Err(BvarError::TooShort { needed: MIN_TEST_LEN, got: draws.len() });
    }
    let normal = Normal::standard();
    let mut z = Vec::with_capacity(draws.len());
    for (t, (d, &y)) in draws.iter().zip(realized).enumerate() {
        let r = d.len();
        if r == 0 {
            return Err(BvarError::EmptyInput(format!("no predictive draws at origin {t}")));
        }
        if d.iter().all(|x| *x == d[0]) {
            return Err(BvarError::DegeneratePredictive(t));
        }
        let below = d.iter().filter(|&&x| x <= y).count() as f64;
        let rf = r as f64;
        let pit = (below / rf).clamp(1.0 / (rf + 1.0), rf / (rf + 1.0));
        z.push(normal.inverse_cdf(pit));
    }
    let n = z.len() as f64;
    let mean_estimate = z.iter().sum::<f64>() / n;
    let mean = mean_test(&z, 5);
    let z2: Vec<f64> = z.iter().map(|v| v * v - 1.0).collect();
    let variance_estimate = z.iter().map(|v| v * v).sum::<f64>() / n;
    let variance = mean_test(&z2, 3);
    let (ar1_estimate, ar1) = ar1_robust(&z);
    Ok(Calibration { z, mean, mean_estimate, variance, variance_estimate, ar1, ar1_estimate })
}

/// OLS of `z_t` on `(1, z_{t-1})` with an HC0 standard error on the slope.
fn ar1_robust(z: &[f64]) -> (f64, TestResult) {
    let y = &z[1..];
    let x = &z[..z.len() - 1];
    let n = y.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, TestResult { statistic: 0.0, p_value: 1.0 });
    }
    let beta = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let alpha = my - beta * mx;
    let meat: f64 = x.iter().zip(y).map(|(a, b)| ((a - mx) * (b - alpha - beta * a)).powi(2)).sum();
    let se = meat.sqrt() / sxx;
    let statistic = if se > 0.0 { beta / se } else { 0.0 };
    (beta, TestResult { statistic, p_value: two_sided_p(statistic) })
}

/// One evaluation cell: a model, a horizon and a variable scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model: String,
    pub horizon: usize,
    pub scope: String,
    pub n_origins: usize,
    pub rmse: f64,
    pub rmse_ratio: f64,
    pub dm_statistic: f64,
    pub dm_p_value: f64,
    pub dm_stars: u8,
    pub lpl_sum: f64,
    pub lpl_diff: f64,
    pub ag_statistic: f64,
    pub ag_p_value: f64,
    pub ag_stars: u8,
    pub in_mcs_point: bool,
    pub in_mcs_density: bool,
    /// Calibration of single-variable scopes; absent for the joint scope.
    pub pit_mean: Option<f64>,
    pub pit_mean_p: Option<f64>,
    pub pit_variance: Option<f64>,
    pub pit_variance_p: Option<f64>,
    pub pit_ar1: Option<f64>,
    pub pit_ar1_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub benchmark: String,
    pub mcs: McsConfig,
    pub calibration: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { benchmark: String::new(), mcs: McsConfig::default(), calibration: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: String,
    pub target_names: Vec<String>,
    pub rows: Vec<EvalRow>,
}

/// Per-origin squared errors and log scores of one model in one cell.
struct CellScores {
    sq_err: Vec<f64>,
    log_score: Vec<f64>,
    pit: Option<Calibration>,
}

fn cell_scores(model: &[OriginForecast], h: usize, scope: &Scope, calibrate: bool) -> Result<CellScores> {
    let mut sq_err = Vec::new();
    let mut log_score = Vec::new();
    let mut samples: Vec<Vec<f64>> = Vec::new();
    let mut real = Vec::new();
    for o in model {
        let k = o.run.horizon_index(h).ok_or_else(|| BvarError::InvalidInput(format!("horizon {h} was not forecast")))?;
        let Some(y) = &o.realized[k] else { continue };
        let idx = scope.indices(o.run.targets.len());
        let e: f64 = idx.iter().map(|&i| (o.run.point[k][i] - y[i]).powi(2)).sum::<f64>() / idx.len() as f64;
        sq_err.push(e);
        log_score.push(log_predictive_likelihood(&o.run, k, y, scope).map_err(|e| e.at_origin(o.origin_label.clone()))?);
        if let (true, Scope::Variable(i)) = (calibrate, scope) {
            samples.push(o.run.paths[k].column(*i).iter().copied().collect());
            real.push(y[*i]);
        }
    }
    let pit = if calibrate && matches!(scope, Scope::Variable(_)) && real.len() >= MIN_TEST_LEN {
        let refs: Vec<&[f64]> = samples.iter().map(|s| s.as_slice()).collect();
        Some(normalized_errors(&refs, &real)?)
    } else {
        None
    };
    Ok(CellScores { sq_err, log_score, pit })
}

/// Evaluates models forecast over common origins against `cfg.benchmark`.
pub fn evaluate(models: &[(String, Vec<OriginForecast>)], target_names: &[String], cfg: &EvalConfig) -> Result<EvalReport> {
    let bench = models
        .iter()
        .position(|(name, _)| *name == cfg.benchmark)
        .ok_or_else(|| BvarError::InvalidInput(format!("benchmark {:?} is not among the models", cfg.benchmark)))?;
    let first = &models[bench].1;
    let origin = first.first().ok_or_else(|| BvarError::EmptyInput("benchmark has no origins".into()))?;
    let horizons = origin.run.horizons.clone();
    for (name, m) in models {
        if m.len() != first.len() || m.iter().zip(first).any(|(a, b)| a.origin != b.origin || a.run.horizons != horizons) {
            return Err(BvarError::ShapeMismatch(format!("model {name} does not share the benchmark's origins and horizons")));
        }
    }
    let n_targets = origin.run.targets.len();
    let mut scopes: Vec<(Scope, String)> = (0..n_targets).map(|i| (Scope::Variable(i), target_names.get(i).cloned().unwrap_or_else(|| format!("target{i}")))).collect();
    if n_targets > 1 {
        scopes.push((Scope::Joint, "joint".into()));
    }
    let mut rows = Vec::new();
    for &h in &horizons {
        for (scope, scope_name) in &scopes {
            let scores = models.iter().map(|(_, m)| cell_scores(m, h, scope, cfg.calibration)).collect::<Result<Vec<_>>>()?;
            let b = &scores[bench];
            let n = b.sq_err.len();
            let membership = |pick: &dyn Fn(&CellScores) -> Vec<f64>| -> Result<Vec<bool>> {
                if models.len() < 2 || n < 20 {
                    return Ok(vec![true; models.len()]);
                }
                let mat = DMatrix::from_fn(n, models.len(), |t, j| pick(&scores[j])[t]);
                let labels = models.iter().map(|(l, _)| l.clone()).collect();
                let res = mcs(&LossMatrix::new(labels, mat)?, &cfg.mcs)?;
                Ok((0..models.len()).map(|j| res.superior.contains(&j)).collect())
            };
            let in_point = membership(&|s: &CellScores| s.sq_err.clone())?;
            let in_density = membership(&|s: &CellScores| s.log_score.iter().map(|v| -v).collect())?;
            for (j, ((name, _), s)) in models.iter().zip(&scores).enumerate() {
                let err_m: Vec<f64> = s.sq_err.iter().map(|v| v.sqrt()).collect();
                let err_b: Vec<f64> = b.sq_err.iter().map(|v| v.sqrt()).collect();
                let dm_diff: Vec<f64> = s.sq_err.iter().zip(&b.sq_err).map(|(a, c)| a - c).collect();
                let ag_diff: Vec<f64> = s.log_score.iter().zip(&b.log_score).map(|(a, c)| a - c).collect();
                let (dm, ag) = if n >= MIN_TEST_LEN {
                    (dm_test(&dm_diff, h)?, ag_test(&ag_diff, h)?)
                } else {
                    (TestResult { statistic: f64::NAN, p_value: f64::NAN }, TestResult { statistic: f64::NAN, p_value: f64::NAN })
                };
                let lpl_sum: f64 = s.log_score.iter().sum();
                rows.push(EvalRow {
                    model: name.clone(),
                    horizon: h,
                    scope: scope_name.clone(),
                    n_origins: n,
                    rmse: rmse(&err_m)?,
                    rmse_ratio: rmse_ratio(&err_m, &err_b)?,
                    dm_statistic: dm.statistic,
                    dm_p_value: dm.p_value,
                    dm_stars: if dm.p_value.is_nan() { 0 } else { stars(dm.p_value) },
                    lpl_sum,
                    lpl_diff: lpl_sum - b.log_score.iter().sum::<f64>(),
                    ag_statistic: ag.statistic,
                    ag_p_value: ag.p_value,
                    ag_stars: if ag.p_value.is_nan() { 0 } else { stars(ag.p_value) },
                    in_mcs_point: in_point[j],
                    in_mcs_density: in_density[j],
                    pit_mean: s.pit.as_ref().map(|c| c.mean_estimate),
                    pit_mean_p: s.pit.as_ref().map(|c| c.mean.p_value),
                    pit_variance: s.pit.as_ref().map(|c| c.variance_estimate),
                    pit_variance_p: s.pit.as_ref().map(|c| c.variance.p_value),
                    pit_ar1: s.pit.as_ref().map(|c| c.ar1_estimate),
                    pit_ar1_p: s.pit.as_ref().map(|c| c.ar1.p_value),
                });
            }
        }
    }
    Ok(EvalReport { benchmark: cfg.benchmark.clone(), target_names: target_names.to_vec(), rows })
}

pub fn write_report_csv<W: std::io::Write>(report: &EvalReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
