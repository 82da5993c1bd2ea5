//! Run configuration shared by every CLI command.
//!
//! A run is described by one JSON document. Missing blocks and fields take
//! their defaults; command-line flags override the document.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::ModelSize;
use crate::dgp::{CovTarget, DgpConfig, Sparsity, StudyConfig, StudyEstimator};
use crate::error::{BvarError, Result};
use crate::evaluation::{EvalConfig, McsConfig};
use crate::forecast::{ExerciseConfig, SparsifySpec, ThetaMode};
use crate::posterior::THETA1_GRID;
use crate::precision::{PdRepair, PrecisionConfig, PrecisionMode};
use crate::rng::derive_seed;
use crate::savs::{SavsConfig, SavsScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaChoice {
    Fixed,
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBlock {
    pub size: ModelSize,
    pub p: usize,
    pub theta1_mode: ThetaChoice,
    /// Used when `theta1_mode` is `fixed`.
    pub theta1: f64,
    /// Searched when `theta1_mode` is `grid`.
    pub theta1_grid: Vec<f64>,
    /// Principal components appended to the FA model.
    pub n_factors: usize,
}

impl Default for ModelBlock {
    fn default() -> Self {
        Self { size: ModelSize::S, p: 5, theta1_mode: ThetaChoice::Grid, theta1: 0.05, theta1_grid: THETA1_GRID.to_vec(), n_factors: 3 }
    }
}

impl ModelBlock {
    pub fn theta(&self) -> ThetaMode {
        match self.theta1_mode {
            ThetaChoice::Fixed => ThetaMode::Fixed(self.theta1),
            ThetaChoice::Grid => ThetaMode::Grid(self.theta1_grid.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparsifyBlock {
    pub enabled: bool,
    /// One sparsified model (or study estimator) per value.
    pub lambdas: Vec<f64>,
    pub zeta: f64,
    pub scheme: SavsScheme,
    pub sparsify_intercept: bool,
    pub sparsify_first_own_lag: bool,
    /// `None` ties the precision penalty to `λ / 10`.
    pub varpi: Option<f64>,
    pub kappa_prec: f64,
    pub mode: PrecisionMode,
    pub tol: f64,
    pub max_iter: usize,
    pub pd_repair: PdRepair,
    pub refit_diagonal: bool,
}

impl Default for SparsifyBlock {
    fn default() -> Self {
        let savs = SavsConfig::default();
        let prec = PrecisionConfig::default();
        Self {
            enabled: true,
            lambdas: vec![0.01, 0.1, 0.5, 1.0],
            zeta: savs.zeta,
            scheme: savs.scheme,
            sparsify_intercept: savs.sparsify_intercept,
            sparsify_first_own_lag: savs.sparsify_first_own_lag,
            varpi: None,
            kappa_prec: prec.kappa_prec,
            mode: prec.mode,
            tol: prec.tol,
            max_iter: prec.max_iter,
            pd_repair: prec.pd_repair,
            refit_diagonal: prec.refit_diagonal,
        }
    }
}

impl SparsifyBlock {
    pub fn savs(&self, lambda: f64) -> SavsConfig {
        SavsConfig {
            lambda,
            zeta: self.zeta,
            scheme: self.scheme,
            sparsify_intercept: self.sparsify_intercept,
            sparsify_first_own_lag: self.sparsify_first_own_lag,
        }
    }

    pub fn precision(&self, lambda: f64) -> PrecisionConfig {
        PrecisionConfig {
            varpi: self.varpi.unwrap_or(lambda / 10.0),
            kappa_prec: self.kappa_prec,
            mode: self.mode,
            tol: self.tol,
            max_iter: self.max_iter,
            pd_repair: self.pd_repair,
            refit_diagonal: self.refit_diagonal,
        }
    }

    pub fn spec(&self, lambda: f64) -> SparsifySpec {
        SparsifySpec { savs: self.savs(lambda), precision: self.precision(lambda) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingBlock {
    pub draws: usize,
    pub seed: u64,
    pub sims_per_draw: usize,
}

impl Default for SamplingBlock {
    fn default() -> Self {
        Self { draws: 1000, seed: 0, sims_per_draw: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyBlock {
    /// Cells are the product `m × t × sparsity`, in that nesting order.
    pub m: Vec<usize>,
    pub t: Vec<usize>,
    pub sparsity: Vec<Sparsity>,
    pub replications: usize,
    /// `None` picks the size-dependent default.
    pub xi: Option<f64>,
    pub burn_in: usize,
    pub max_stability_redraws: usize,
    /// Extra estimators run at a single λ; `None` skips them.
    pub savs_median_lambda: Option<f64>,
    pub cda_lambda: Option<f64>,
    pub cda_tol: f64,
    pub cda_max_iter: usize,
    pub cov_target: CovTarget,
}

impl Default for StudyBlock {
    fn default() -> Self {
        Self {
            m: vec![3],
            t: vec![240],
            sparsity: vec![Sparsity::Dense, Sparsity::Moderate, Sparsity::Sparse],
            replications: 30,
            xi: None,
            burn_in: 100,
            max_stability_redraws: 1000,
            savs_median_lambda: Some(1.0),
            cda_lambda: Some(1.0),
            cda_tol: 1e-10,
            cda_max_iter: 1000,
            cov_target: CovTarget::Sigma,
        }
    }
}

/// Simulated input used in place of a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateBlock {
    pub m: usize,
    pub t: usize,
    pub sparsity: Sparsity,
    pub xi: Option<f64>,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self { m: 10, t: 200, sparsity: Sparsity::Sparse, xi: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastBlock {
    /// First hold-out period: a quarter label such as `1990:Q1`, or a row
    /// index for simulated data.
    pub split: String,
    pub horizons: Vec<usize>,
    /// `None` uses the manifest targets, or the first three simulated series.
    pub targets: Option<Vec<String>>,
}

impl Default for ForecastBlock {
    fn default() -> Self {
        Self { split: "1990:Q1".into(), horizons: vec![1, 4, 8], targets: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationBlock {
    pub mcs_alpha: f64,
    pub mcs_replications: usize,
    pub mcs_block_len: Option<usize>,
    pub calibration: bool,
}

impl Default for EvaluationBlock {
    fn default() -> Self {
        let mcs = McsConfig::default();
        Self { mcs_alpha: mcs.alpha, mcs_replications: mcs.replications, mcs_block_len: mcs.block_len, calibration: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsBlock {
    /// Data CSV; relative paths resolve against the data directory.
    pub data: Option<PathBuf>,
    /// Variable manifest CSV; `None` uses the bundled one.
    pub manifest: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for PathsBlock {
    fn default() -> Self {
        Self { data: None, manifest: None, output: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub sparsify: SparsifyBlock,
    pub sampling: SamplingBlock,
    pub study: StudyBlock,
    pub forecast: ForecastBlock,
    pub evaluation: EvaluationBlock,
    pub paths: PathsBlock,
    /// Used when `paths.data` is unset.
    pub simulate: Option<SimulateBlock>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> BvarError {
    BvarError::InvalidInput(format!("{field}: {msg}"))
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

/// Name of the non-sparse model in forecast output.
pub const BENCHMARK_MODEL: &str = "bvar";

pub fn sparse_model_name(lambda: f64) -> String {
    format!("sparse_lambda{lambda}")
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.p == 0 {
            return Err(invalid("model.p", "must be at least 1"));
        }
        check_positive("model.theta1", m.theta1)?;
        if m.theta1_grid.is_empty() {
            return Err(invalid("model.theta1_grid", "is empty"));
        }
        for &g in &m.theta1_grid {
            check_positive("model.theta1_grid", g)?;
        }
        if m.size == ModelSize::FA && m.n_factors == 0 {
            return Err(invalid("model.n_factors", "FA models need at least one factor"));
        }

        let s = &self.sparsify;
        if s.enabled && s.lambdas.is_empty() {
            return Err(invalid("sparsify.lambdas", "is empty"));
        }
        for &l in &s.lambdas {
            s.savs(l).validate().map_err(|e| invalid("sparsify", e))?;
            s.precision(l).validate().map_err(|e| invalid("sparsify", e))?;
        }
        let mut names: Vec<String> = s.lambdas.iter().map(|&l| sparse_model_name(l)).collect();
        names.sort();
        names.dedup();
        if names.len() != s.lambdas.len() {
            return Err(invalid("sparsify.lambdas", "contains duplicates"));
        }

        if self.sampling.draws == 0 {
            return Err(invalid("sampling.draws", "must be at least 1"));
        }
        if self.sampling.sims_per_draw == 0 {
            return Err(invalid("sampling.sims_per_draw", "must be at least 1"));
        }

        let st = &self.study;
        if st.m.is_empty() || st.t.is_empty() || st.sparsity.is_empty() {
            return Err(invalid("study", "m, t and sparsity need at least one value each"));
        }
        if st.replications == 0 {
            return Err(invalid("study.replications", "must be at least 1"));
        }
        for l in [st.savs_median_lambda, st.cda_lambda].into_iter().flatten() {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(invalid("study", format!("lambda must be finite and >= 0, got {l}")));
            }
        }
        check_positive("study.cda_tol", st.cda_tol)?;
        for cell in self.study_cells() {
            cell.validate().map_err(|e| invalid("study", e))?;
        }

        let f = &self.forecast;
        if f.horizons.is_empty() || f.horizons.contains(&0) {
            return Err(invalid("forecast.horizons", "must be nonempty and positive"));
        }
        if f.split.trim().is_empty() {
            return Err(invalid("forecast.split", "is empty"));
        }
        if let Some(t) = &f.targets {
            if t.is_empty() {
                return Err(invalid("forecast.targets", "is empty"));
            }
        }

        let e = &self.evaluation;
        if !(e.mcs_alpha > 0.0 && e.mcs_alpha < 1.0) {
            return Err(invalid("evaluation.mcs_alpha", format!("must lie in (0, 1), got {}", e.mcs_alpha)));
        }
        if e.mcs_replications == 0 || e.mcs_block_len == Some(0) {
            return Err(invalid("evaluation", "mcs_replications and mcs_block_len must be at least 1"));
        }

        if let Some(sim) = &self.simulate {
            self.simulation_dgp(sim).validate().map_err(|e| invalid("simulate", e))?;
        }
        Ok(())
    }

    /// Study cells; every cell shares the run seed so that the sparsity
    /// levels see common random numbers.
    pub fn study_cells(&self) -> Vec<DgpConfig> {
        let st = &self.study;
        let mut cells = Vec::new();
        for &m in &st.m {
            for &t in &st.t {
                for &sparsity in &st.sparsity {
                    cells.push(DgpConfig {
                        m,
                        t,
                        p: self.model.p,
                        xi: st.xi,
                        sparsity,
                        seed: self.sampling.seed,
                        max_stability_redraws: st.max_stability_redraws,
                        burn_in: st.burn_in,
                    });
                }
            }
        }
        cells
    }

    pub fn study_config(&self) -> StudyConfig {
        let st = &self.study;
        let mut estimators: Vec<StudyEstimator> = self.sparsify.lambdas.iter().map(|&lambda| StudyEstimator::Sparse { lambda }).collect();
        estimators.extend(st.savs_median_lambda.map(|lambda| StudyEstimator::SavsMedian { lambda }));
        estimators.extend(st.cda_lambda.map(|lambda| StudyEstimator::Cda { lambda }));
        let base = self.sparsify.lambdas.first().copied().unwrap_or(1.0);
        StudyConfig {
            cells: self.study_cells(),
            replications: st.replications,
            draws: self.sampling.draws,
            estimators,
            theta1_grid: self.model.theta1_grid.clone(),
            savs: self.sparsify.savs(base),
            precision: self.sparsify.precision(base),
            cov_target: st.cov_target,
            cda_tol: st.cda_tol,
            cda_max_iter: st.cda_max_iter,
        }
    }

    /// DGP behind simulated input. Its seeds derive from the run seed.
    pub fn simulation_dgp(&self, sim: &SimulateBlock) -> DgpConfig {
        DgpConfig {
            m: sim.m,
            t: sim.t,
            p: self.model.p,
            xi: sim.xi,
            sparsity: sim.sparsity,
            seed: derive_seed(self.sampling.seed, SIMULATION_LABEL),
            max_stability_redraws: self.study.max_stability_redraws,
            burn_in: self.study.burn_in,
        }
    }

    pub fn exercise_config(&self, targets: Vec<String>) -> ExerciseConfig {
        ExerciseConfig {
            horizons: self.forecast.horizons.clone(),
            draws: self.sampling.draws,
            sims_per_draw: self.sampling.sims_per_draw,
            seed: self.sampling.seed,
            targets,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        let e = &self.evaluation;
        EvalConfig {
            benchmark: BENCHMARK_MODEL.into(),
            mcs: McsConfig {
                alpha: e.mcs_alpha,
                block_len: e.mcs_block_len,
                replications: e.mcs_replications,
                seed: derive_seed(self.sampling.seed, MCS_LABEL),
            },
            calibration: e.calibration,
        }
    }
}

/// Seed labels for the stages that draw their own randomness.
pub const SIMULATION_LABEL: u64 = 0x5151;
pub const MCS_LABEL: u64 = 0x4d43;
