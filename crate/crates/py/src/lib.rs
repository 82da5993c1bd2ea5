//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sparsebvar::cli::{self, Command, Overrides};
use sparsebvar::config::RunConfig;
use sparsebvar::dgp::{draw_dgp, simulate_series, DgpConfig, Sparsity};
use sparsebvar::error::BvarError;
use sparsebvar::evaluation::{dm_test, mcs, normalized_errors, LossMatrix, McsConfig};
use sparsebvar::forecast::{forecast_at_origin, ExerciseConfig, ModelSpec, SparsifySpec, ThetaMode};
use sparsebvar::minnesota::MinnesotaHyper;
use sparsebvar::posterior::{fit_minnesota, grid_search_theta, sample_posterior, MinnesotaFit, THETA1_GRID};
use sparsebvar::precision::{sparsify_precision, PrecisionConfig};
use sparsebvar::savs::{column_norms, savs_draw, SavsConfig, SavsScheme};
use sparsebvar::var_core::{companion_spectral_radius, CovMatrix, TimeSeriesPanel, VarCoefficients};

fn err(e: BvarError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn panel(data: &[Vec<f64>]) -> PyResult<TimeSeriesPanel> {
    TimeSeriesPanel::from_matrix(to_matrix(data)?).map_err(err)
}

fn sparsity(label: &str) -> PyResult<Sparsity> {
    match label.to_ascii_lowercase().as_str() {
        "dense" => Ok(Sparsity::Dense),
        "moderate" => Ok(Sparsity::Moderate),
        "sparse" => Ok(Sparsity::Sparse),
        other => other.parse::<f64>().map(Sparsity::Custom).map_err(|_| PyValueError::new_err(format!("unknown sparsity {label:?}"))),
    }
}

/// Conjugate Minnesota posterior fitted to a `T x m` panel.
#[pyclass(module = "sparsebvar_py")]
struct Posterior {
    fit: MinnesotaFit,
}

#[pymethods]
impl Posterior {
    /// θ1 is chosen by marginal likelihood over the default grid when not
    /// given.
    #[new]
    #[pyo3(signature = (data, p, theta1=None))]
    fn new(data: Vec<Vec<f64>>, p: usize, theta1: Option<f64>) -> PyResult<Self> {
        let panel = panel(&data)?;
        let hyper = MinnesotaHyper::new(panel.nvars(), theta1.unwrap_or(0.1));
        let theta = match theta1 {
            Some(t) => t,
            None => grid_search_theta(&panel, p, &THETA1_GRID, &hyper).map_err(err)?.best_theta1,
        };
        let fit = fit_minnesota(&panel, p, &hyper.with_theta1(theta)).map_err(err)?;
        Ok(Self { fit })
    }

    #[getter]
    fn theta1(&self) -> f64 {
        self.fit.hyper.theta1
    }

    #[getter]
    fn log_ml(&self) -> f64 {
        self.fit.log_ml
    }

    #[getter]
    fn a_bar(&self) -> Vec<Vec<f64>> {
        to_rows(&self.fit.moments.a_bar)
    }

    #[getter]
    fn v_bar(&self) -> Vec<Vec<f64>> {
        to_rows(&self.fit.moments.v_bar)
    }

    #[getter]
    fn s1_scale(&self) -> Vec<Vec<f64>> {
        to_rows(&self.fit.moments.s1_scale)
    }

    #[getter]
    fn s1_dof(&self) -> f64 {
        self.fit.moments.s1_dof
    }

    /// Squared design column norms, as used by the coefficient sparsifier.
    fn column_norms(&self) -> Vec<f64> {
        column_norms(&self.fit.design).norms_sq
    }

    /// Posterior draws as `(coefficients, sigma)` pairs.
    fn sample(&self, draws: usize, seed: u64) -> PyResult<Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>> {
        let out = sample_posterior(&self.fit.moments, draws, seed).map_err(err)?;
        Ok(out.iter().map(|d| (to_rows(d.coeffs.matrix()), to_rows(d.cov.sigma()))).collect())
    }
}

/// Largest eigenvalue modulus of the companion matrix of an `(mp+1) x m`
/// coefficient matrix.
#[pyfunction]
fn spectral_radius(coeffs: Vec<Vec<f64>>, m: usize, p: usize) -> PyResult<f64> {
    let c = VarCoefficients::new(to_matrix(&coeffs)?, m, p).map_err(err)?;
    companion_spectral_radius(&c).map_err(err)
}

/// Sparsifies one coefficient draw; returns the sparse matrix.
#[pyfunction]
#[pyo3(signature = (coeffs, m, p, norms_sq, lam, zeta=2.0, lagwise=true))]
fn savs(coeffs: Vec<Vec<f64>>, m: usize, p: usize, norms_sq: Vec<f64>, lam: f64, zeta: f64, lagwise: bool) -> PyResult<Vec<Vec<f64>>> {
    let c = VarCoefficients::new(to_matrix(&coeffs)?, m, p).map_err(err)?;
    let cfg = SavsConfig { lambda: lam, zeta, scheme: if lagwise { SavsScheme::LagWise } else { SavsScheme::Plain }, ..Default::default() };
    let out = savs_draw(&c, &sparsebvar::savs::ColumnNorms { norms_sq }, &cfg).map_err(err)?;
    Ok(to_rows(out.coeffs_sparse.matrix()))
}

/// Sparsified precision matrix of a covariance draw.
#[pyfunction]
#[pyo3(signature = (sigma, varpi, kappa=2.0))]
fn sparse_precision(sigma: Vec<Vec<f64>>, varpi: f64, kappa: f64) -> PyResult<Vec<Vec<f64>>> {
    let cov = CovMatrix::new(to_matrix(&sigma)?).map_err(err)?;
    let cfg = PrecisionConfig { varpi, kappa_prec: kappa, ..Default::default() };
    Ok(to_rows(&sparsify_precision(&cov, &cfg).map_err(err)?.omega))
}

/// Draws a stable sparse VAR(5) and simulates `t` observations from it.
#[pyfunction]
#[pyo3(signature = (m, t, sparsity="sparse", seed=0))]
fn simulate<'py>(py: Python<'py>, m: usize, t: usize, sparsity: &str, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = DgpConfig { m, t, sparsity: self::sparsity(sparsity)?, seed, ..Default::default() };
    let truth = draw_dgp(&cfg).map_err(err)?;
    let data = simulate_series(&truth, t, cfg.burn_in, sparsebvar::rng::derive_seed(seed, 1)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("coeffs", to_rows(truth.coeffs_true.matrix()))?;
    d.set_item("sigma", to_rows(truth.sigma_true.sigma()))?;
    d.set_item("data", to_rows(data.values()))?;
    Ok(d)
}

/// Forecasts from the last row of `data`. Returns per-horizon point
/// forecasts and standard deviations in the data's units.
#[pyfunction]
#[pyo3(signature = (data, p, horizons, draws=1000, seed=0, theta1=None, lam=None))]
fn forecast<'py>(
    py: Python<'py>,
    data: Vec<Vec<f64>>,
    p: usize,
    horizons: Vec<usize>,
    draws: usize,
    seed: u64,
    theta1: Option<f64>,
    lam: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let panel = panel(&data)?;
    let names = panel.names().to_vec();
    let spec = ModelSpec {
        name: "model".into(),
        variables: names.clone(),
        factor_inputs: Vec::new(),
        n_factors: 0,
        p,
        theta: theta1.map_or_else(ThetaMode::default, ThetaMode::Fixed),
        sparsify: lam.map(SparsifySpec::with_lambda),
    };
    let cfg = ExerciseConfig { horizons: horizons.clone(), draws, sims_per_draw: 1, seed, targets: names };
    let out = forecast_at_origin(&panel, &spec, &cfg, panel.nobs() - 1).map_err(err)?;
    let st = &out.standardization;
    let mut point = Vec::new();
    let mut sd = Vec::new();
    for paths in &out.run.paths {
        let n = paths.nrows() as f64;
        let mean: Vec<f64> = paths.column_iter().map(|c| c.sum() / n).collect();
        let var: Vec<f64> = paths.column_iter().zip(&mean).map(|(c, mu)| c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).collect();
        point.push(mean.iter().enumerate().map(|(i, v)| st.mean[i] + st.sd[i] * v).collect::<Vec<f64>>());
        sd.push(var.iter().enumerate().map(|(i, v)| st.sd[i] * v.sqrt()).collect::<Vec<f64>>());
    }
    let d = PyDict::new(py);
    d.set_item("horizons", horizons)?;
    d.set_item("theta1", out.theta1)?;
    d.set_item("mean", point)?;
    d.set_item("sd", sd)?;
    Ok(d)
}

/// Diebold-Mariano statistic and p-value for a loss-difference series.
#[pyfunction]
fn diebold_mariano(loss_diff: Vec<f64>, h: usize) -> PyResult<(f64, f64)> {
    let r = dm_test(&loss_diff, h).map_err(err)?;
    Ok((r.statistic, r.p_value))
}

/// Indices of the models in the confidence set; `losses` is origins x models.
#[pyfunction]
#[pyo3(signature = (losses, alpha=0.25, replications=5000, seed=0))]
fn model_confidence_set(losses: Vec<Vec<f64>>, alpha: f64, replications: usize, seed: u64) -> PyResult<Vec<usize>> {
    let l = to_matrix(&losses)?;
    let labels = (0..l.ncols()).map(|j| j.to_string()).collect();
    let cfg = McsConfig { alpha, replications, seed, block_len: None };
    Ok(mcs(&LossMatrix::new(labels, l).map_err(err)?, &cfg).map_err(err)?.superior)
}

/// Normalized forecast errors and the p-values of the mean, variance and
/// AR(1) calibration tests.
#[pyfunction]
fn calibration(draws: Vec<Vec<f64>>, realized: Vec<f64>) -> PyResult<(Vec<f64>, (f64, f64, f64))> {
    let refs: Vec<&[f64]> = draws.iter().map(|d| d.as_slice()).collect();
    let c = normalized_errors(&refs, &realized).map_err(err)?;
    Ok((c.z, (c.mean.p_value, c.variance.p_value, c.ar1.p_value)))
}

/// The default run configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_json()
}

/// Runs a CLI command (`study`, `fit`, `forecast` or `evaluate`) from a
/// JSON config; returns the output directory.
#[pyfunction]
#[pyo3(signature = (command, config_json, force=false))]
fn run(command: &str, config_json: &str, force: bool) -> PyResult<String> {
    let cmd = match command {
        "study" => Command::Study,
        "fit" => Command::Fit,
        "forecast" => Command::Forecast,
        "evaluate" => Command::Evaluate,
        other => return Err(PyValueError::new_err(format!("unknown command {other:?}"))),
    };
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    let ov = Overrides { force, ..Default::default() };
    let out = cli::run(cmd, &cfg, &ov).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(out.display().to_string())
}

#[pymodule]
fn sparsebvar_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Posterior>()?;
    m.add_function(wrap_pyfunction!(spectral_radius, m)?)?;
    m.add_function(wrap_pyfunction!(savs, m)?)?;
    m.add_function(wrap_pyfunction!(sparse_precision, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(forecast, m)?)?;
    m.add_function(wrap_pyfunction!(diebold_mariano, m)?)?;
    m.add_function(wrap_pyfunction!(model_confidence_set, m)?)?;
    m.add_function(wrap_pyfunction!(calibration, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
