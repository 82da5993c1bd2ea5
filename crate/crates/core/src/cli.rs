//! Command implementations behind the `sparsebvar` binary.
//!
//! Every run writes into one output directory: a `manifest.json` audit
//! record plus the command's tables. Forecast output gets one subdirectory
//! per model. Outputs carry no timestamps, so a rerun with the same config
//! and seed reproduces them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{sparse_model_name, RunConfig, ThetaChoice, BENCHMARK_MODEL};
use crate::data::{load_csv, load_manifest, resolve_data_path, select_set, standardize, transform_panel, DatasetManifest, ModelSize, Quarter, Standardization};
use crate::dgp::{draw_dgp, panel_hash, run_study, simulate_series, write_study_csv};
use crate::error::BvarError;
use crate::evaluation::{evaluate, log_predictive_likelihood, write_report_csv, Scope};
use crate::forecast::{model_window, recursive_exercise, ModelSpec, OriginForecast};
use crate::minnesota::MinnesotaHyper;
use crate::posterior::{fit_minnesota, grid_search_theta, PosteriorMoments};
use crate::rng::derive_seed;
use crate::var_core::TimeSeriesPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Study,
    Fit,
    Forecast,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Study => "study",
            Self::Fit => "fit",
            Self::Forecast => "forecast",
            Self::Evaluate => "evaluate",
        }
    }
}

/// Command-line values that take precedence over the config document.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub force: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or refused output directory.
    Config(String),
    /// Failure inside a pipeline stage.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "configuration error: {m}"),
            Self::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = std::result::Result<T, CliError>;

fn rt(op: &str) -> impl Fn(BvarError) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{op}: {e}"))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Reads and validates the config document; no path means all defaults.
pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Flags override config fields.
pub fn apply_overrides(mut cfg: RunConfig, ov: &Overrides) -> CliResult<RunConfig> {
    if let Some(seed) = ov.seed {
        cfg.sampling.seed = seed;
    }
    if let Some(out) = &ov.output {
        cfg.paths.output = out.clone();
    }
    if ov.workers == Some(0) {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputHash {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub simulation: Option<u64>,
    pub mcs: u64,
}

/// Audit record written with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub inputs: Vec<InputHash>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(io(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Panel and variable lists that the forecasting commands work on.
pub struct Inputs {
    pub panel: TimeSeriesPanel,
    pub variables: Vec<String>,
    pub factor_inputs: Vec<String>,
    pub n_factors: usize,
    pub targets: Vec<String>,
    pub hashes: Vec<InputHash>,
    pub simulation_seed: Option<u64>,
}

pub fn load_inputs(cfg: &RunConfig, ov: &Overrides) -> CliResult<Inputs> {
    match (&cfg.paths.data, &cfg.simulate) {
        (Some(file), _) => load_file_inputs(cfg, file, ov),
        (None, Some(sim)) => {
            let dgp = cfg.simulation_dgp(sim);
            let truth = draw_dgp(&dgp).map_err(rt("dgp_simulator::draw_dgp"))?;
            let panel = simulate_series(&truth, dgp.t, dgp.burn_in, derive_seed(dgp.seed, 1)).map_err(rt("dgp_simulator::simulate_series"))?;
            let variables = panel.names().to_vec();
            let targets = match &cfg.forecast.targets {
                Some(t) => t.clone(),
                None => variables.iter().take(3).cloned().collect(),
            };
            if let Some(bad) = targets.iter().find(|t| !variables.contains(t)) {
                return Err(CliError::Config(format!("forecast.targets: {bad} is not a simulated series")));
            }
            let hashes = vec![InputHash { role: "simulated_panel".into(), path: String::new(), sha256: panel_hash(&panel) }];
            Ok(Inputs { panel, variables, factor_inputs: Vec::new(), n_factors: 0, targets, hashes, simulation_seed: Some(dgp.seed) })
        }
        (None, None) => Err(CliError::Config("set paths.data or a simulate block".into())),
    }
}

fn load_file_inputs(cfg: &RunConfig, file: &Path, ov: &Overrides) -> CliResult<Inputs> {
    let mut hashes = Vec::new();
    let mut manifest = match &cfg.paths.manifest {
        Some(p) => {
            let path = resolve_data_path(p, ov.data_dir.as_deref());
            hashes.push(InputHash { role: "manifest".into(), path: p.display().to_string(), sha256: sha256_file(&path)? });
            load_manifest(&path).map_err(|e| CliError::Config(format!("data_pipeline::load_manifest: {e}")))?
        }
        None => DatasetManifest::bundled(),
    };
    if let Some(t) = &cfg.forecast.targets {
        manifest = manifest.with_targets(t.clone()).map_err(|e| CliError::Config(format!("forecast.targets: {e}")))?;
    }
    let path = resolve_data_path(file, ov.data_dir.as_deref());
    hashes.push(InputHash { role: "data".into(), path: file.display().to_string(), sha256: sha256_file(&path)? });
    let raw = load_csv(&path, &manifest).map_err(rt("data_pipeline::load_csv"))?;
    let panel = transform_panel(&raw, &manifest).map_err(rt("data_pipeline::transform_panel"))?;
    let set = select_set(&manifest, cfg.model.size).map_err(|e| CliError::Config(format!("data_pipeline::select_set: {e}")))?;
    let n_factors = if cfg.model.size == ModelSize::FA { cfg.model.n_factors } else { 0 };
    Ok(Inputs {
        panel,
        variables: set.variables,
        factor_inputs: set.factor_inputs,
        n_factors,
        targets: manifest.targets.clone(),
        hashes,
        simulation_seed: None,
    })
}

/// Row index of the first hold-out period.
pub fn split_index(panel: &TimeSeriesPanel, split: &str) -> CliResult<usize> {
    let idx = match Quarter::parse(split) {
        Some(q) => panel.dates().iter().position(|d| Quarter::parse(d) == Some(q)),
        None => split.trim().parse::<usize>().ok().filter(|&i| i < panel.nobs()),
    };
    match idx {
        Some(i) if i >= 1 => Ok(i),
        _ => Err(CliError::Config(format!(
            "forecast.split {split:?} is not a period inside the sample ({} to {})",
            panel.dates()[0],
            panel.dates()[panel.nobs() - 1]
        ))),
    }
}

/// The non-sparse benchmark followed by one sparsified model per λ.
pub fn model_specs(cfg: &RunConfig, inputs: &Inputs) -> Vec<ModelSpec> {
    let base = ModelSpec {
        name: BENCHMARK_MODEL.into(),
        variables: inputs.variables.clone(),
        factor_inputs: inputs.factor_inputs.clone(),
        n_factors: inputs.n_factors,
        p: cfg.model.p,
        theta: cfg.model.theta(),
        sparsify: None,
    };
    let mut specs = vec![base.clone()];
    if cfg.sparsify.enabled {
        for &l in &cfg.sparsify.lambdas {
            specs.push(ModelSpec { name: sparse_model_name(l), sparsify: Some(cfg.sparsify.spec(l)), ..base.clone() });
        }
    }
    specs
}

fn prepare_output(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() && !force {
        return Err(CliError::Config(format!("output directory {} already exists; pass --force to write into it", dir.display())));
    }
    fs::create_dir_all(dir).map_err(io(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io(path))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Runs one command; returns the output directory.
pub fn run(cmd: Command, cfg: &RunConfig, ov: &Overrides) -> CliResult<PathBuf> {
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = ov.workers {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?
    };
    let out = cfg.paths.output.clone();
    prepare_output(&out, ov.force)?;
    pool.install(|| {
        let (inputs, simulation) = match cmd {
            Command::Study => (Vec::new(), None),
            _ => {
                let inputs = load_inputs(cfg, ov)?;
                let sim = inputs.simulation_seed;
                let hashes = inputs.hashes.clone();
                match cmd {
                    Command::Fit => cmd_fit(cfg, &inputs, &out)?,
                    Command::Forecast => {
                        cmd_forecast(cfg, &inputs, &out)?;
                    }
                    _ => cmd_evaluate(cfg, &inputs, &out)?,
                }
                (hashes, sim)
            }
        };
        if cmd == Command::Study {
            cmd_study(cfg, &out)?;
        }
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            command: cmd.name().into(),
            config: cfg.clone(),
            seeds: Seeds { master: cfg.sampling.seed, simulation, mcs: cfg.eval_config().mcs.seed },
            inputs,
        };
        write_json(&out.join("manifest.json"), &manifest)
    })?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct ReplicationRecord<'a> {
    m: usize,
    #[serde(rename = "T")]
    t: usize,
    sparsity: String,
    replication: usize,
    theta1: f64,
    estimator: &'a str,
    lambda: f64,
    mae_coeffs: f64,
    mae_cov: f64,
    data_hash: &'a str,
}

pub fn cmd_study(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let study = cfg.study_config();
    let (rows, reps) = run_study(&study).map_err(rt("dgp_simulator::run_study"))?;
    let path = out.join("study.csv");
    let file = fs::File::create(&path).map_err(io(&path))?;
    write_study_csv(&rows, file).map_err(rt("dgp_simulator::write_study_csv"))?;
    write_json(&out.join("study.json"), &rows)?;

    let path = out.join("replications.csv");
    let mut w = csv_writer(&path)?;
    let labels: Vec<_> = std::iter::once(crate::dgp::StudyEstimator::Benchmark).chain(study.estimators.iter().copied()).collect();
    for (cell, cell_reps) in study.cells.iter().zip(&reps) {
        for (r, rep) in cell_reps.iter().enumerate() {
            for (k, est) in labels.iter().enumerate() {
                w.serialize(ReplicationRecord {
                    m: cell.m,
                    t: cell.t,
                    sparsity: cell.sparsity.label(),
                    replication: r,
                    theta1: rep.theta1,
                    estimator: est.label(),
                    lambda: est.lambda(),
                    mae_coeffs: rep.mae_coeffs[k],
                    mae_cov: rep.mae_cov[k],
                    data_hash: &rep.data_hash,
                })
                .map_err(csv_err(&path))?;
            }
        }
    }
    w.flush().map_err(io(&path))
}

/// Metadata stored next to the persisted posterior moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub variables: Vec<String>,
    pub theta1_mode: ThetaChoice,
    pub theta1: f64,
    pub log_ml: f64,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub nobs: usize,
    pub s1_dof: f64,
    pub first_period: String,
    pub last_period: String,
    pub data_hash: String,
    pub standardization: Standardization,
}

pub const MOMENT_FILES: [&str; 3] = ["a_bar.csv", "v_bar.csv", "s1_scale.csv"];

/// Writes a matrix as headerless CSV with shortest round-trip decimals.
pub fn write_matrix(path: &Path, mat: &DMatrix<f64>) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    for row in mat.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).map_err(csv_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| CliError::Runtime(format!("{}: {s:?}: {e}", path.display()))))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, |r| r.len());
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Reads back what `fit` wrote.
pub fn load_moments(dir: &Path) -> CliResult<(PosteriorMoments, FitMetadata)> {
    let path = dir.join("fit.json");
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let meta: FitMetadata = serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let [a, v, s] = MOMENT_FILES.map(|f| read_matrix(&dir.join(f)));
    let moments = PosteriorMoments { a_bar: a?, v_bar: v?, s1_scale: s?, s1_dof: meta.s1_dof, m: meta.m, p: meta.p };
    if moments.a_bar.shape() != (meta.n, meta.m) || moments.v_bar.shape() != (meta.n, meta.n) || moments.s1_scale.shape() != (meta.m, meta.m) {
        return Err(CliError::Runtime(format!("{}: moment shapes do not match fit.json", dir.display())));
    }
    Ok((moments, meta))
}

/// Estimates the benchmark on the full sample, standardized as in the
/// forecasting exercise.
pub fn cmd_fit(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> CliResult<()> {
    let spec = &model_specs(cfg, inputs)[0];
    let last = inputs.panel.nobs() - 1;
    let window = model_window(&inputs.panel, spec, last).map_err(rt("forecasting::model_window"))?;
    let (z, stats) = standardize(&window).map_err(rt("data_pipeline::standardize"))?;
    let hyper0 = MinnesotaHyper::new(z.nvars(), cfg.model.theta1);
    let theta1 = match cfg.model.theta1_mode {
        ThetaChoice::Fixed => cfg.model.theta1,
        ThetaChoice::Grid => {
            let grid = grid_search_theta(&z, cfg.model.p, &cfg.model.theta1_grid, &hyper0).map_err(rt("conjugate_posterior::grid_search_theta"))?;
            let path = out.join("log_ml_grid.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["theta1", "log_ml"]).map_err(csv_err(&path))?;
            for (t, l) in &grid.log_ml {
                w.write_record([t.to_string(), l.to_string()]).map_err(csv_err(&path))?;
            }
            w.flush().map_err(io(&path))?;
            grid.best_theta1
        }
    };
    let fit = fit_minnesota(&z, cfg.model.p, &hyper0.with_theta1(theta1)).map_err(rt("conjugate_posterior::fit_minnesota"))?;
    let mo = &fit.moments;
    for (name, mat) in MOMENT_FILES.iter().zip([&mo.a_bar, &mo.v_bar, &mo.s1_scale]) {
        write_matrix(&out.join(name), mat)?;
    }
    let meta = FitMetadata {
        variables: z.names().to_vec(),
        theta1_mode: cfg.model.theta1_mode,
        theta1,
        log_ml: fit.log_ml,
        m: mo.m,
        p: mo.p,
        n: mo.n(),
        nobs: fit.design.nobs(),
        s1_dof: mo.s1_dof,
        first_period: z.dates()[0].clone(),
        last_period: z.dates()[z.nobs() - 1].clone(),
        data_hash: panel_hash(&z),
        standardization: stats,
    };
    write_json(&out.join("fit.json"), &meta)
}

#[derive(Debug, Serialize)]
struct ForecastRecord<'a> {
    origin: &'a str,
    theta1: f64,
    horizon: usize,
    target: &'a str,
    mean: f64,
    sd: f64,
    q05: f64,
    q50: f64,
    q95: f64,
    realized: Option<f64>,
    mean_original_units: f64,
    realized_original_units: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ScoreRecord<'a> {
    origin: &'a str,
    horizon: usize,
    scope: &'a str,
    squared_error: f64,
    log_score: f64,
}

/// Sample quantile by linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn write_model_output(dir: &Path, targets: &[String], model_vars: &[String], origins: &[OriginForecast]) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let fpath = dir.join("forecasts.csv");
    let spath = dir.join("scores.csv");
    let mut fw = csv_writer(&fpath)?;
    let mut sw = csv_writer(&spath)?;
    let mut scopes: Vec<(Scope, &str)> = targets.iter().enumerate().map(|(i, t)| (Scope::Variable(i), t.as_str())).collect();
    if targets.len() > 1 {
        scopes.push((Scope::Joint, "joint"));
    }
    for o in origins {
        for (k, &h) in o.run.horizons.iter().enumerate() {
            let realized = o.realized[k].as_ref();
            for (i, t) in targets.iter().enumerate() {
                let col = model_vars.iter().position(|v| v == t).expect("target is a model variable");
                let (mu, sd) = (o.standardization.mean[col], o.standardization.sd[col]);
                let mut sample: Vec<f64> = o.run.paths[k].column(i).iter().copied().collect();
                sample.sort_by(f64::total_cmp);
                let n = sample.len() as f64;
                let mean = o.run.point[k][i];
                let var = if sample.len() > 1 { sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                let real = realized.map(|r| r[i]);
                fw.serialize(ForecastRecord {
                    origin: &o.origin_label,
                    theta1: o.theta1,
                    horizon: h,
                    target: t,
                    mean,
                    sd: var.sqrt(),
                    q05: quantile(&sample, 0.05),
                    q50: quantile(&sample, 0.5),
                    q95: quantile(&sample, 0.95),
                    realized: real,
                    mean_original_units: mean * sd + mu,
                    realized_original_units: real.map(|r| r * sd + mu),
                })
                .map_err(csv_err(&fpath))?;
            }
            let Some(y) = realized else { continue };
            for (scope, name) in &scopes {
                let idx: Vec<usize> = match scope {
                    Scope::Joint => (0..targets.len()).collect(),
                    Scope::Variable(i) => vec![*i],
                };
                let sq = idx.iter().map(|&i| (o.run.point[k][i] - y[i]).powi(2)).sum::<f64>() / idx.len() as f64;
                let ls = log_predictive_likelihood(&o.run, k, y, scope).map_err(rt("evaluation::log_predictive_likelihood"))?;
                sw.serialize(ScoreRecord { origin: &o.origin_label, horizon: h, scope: name, squared_error: sq, log_score: ls }).map_err(csv_err(&spath))?;
            }
        }
    }
    fw.flush().map_err(io(&fpath))?;
    sw.flush().map_err(io(&spath))
}

/// Runs the recursive exercise for every model and writes per-model tables.
pub fn cmd_forecast(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> CliResult<Vec<(String, Vec<OriginForecast>)>> {
    let split = split_index(&inputs.panel, &cfg.forecast.split)?;
    let ex = cfg.exercise_config(inputs.targets.clone());
    let mut results = Vec::new();
    for spec in model_specs(cfg, inputs) {
        log::info!("forecasting with {}", spec.name);
        let origins = recursive_exercise(&inputs.panel, &spec, &ex, split - 1).map_err(rt(&format!("forecasting::recursive_exercise[{}]", spec.name)))?;
        if origins.is_empty() {
            return Err(CliError::Config(format!("forecast.split {:?} leaves no hold-out period", cfg.forecast.split)));
        }
        let mut model_vars = spec.variables.clone();
        model_vars.extend((1..=spec.n_factors).map(|k| format!("PC{k}")));
        write_model_output(&out.join(&spec.name), &inputs.targets, &model_vars, &origins)?;
        results.push((spec.name, origins));
    }
    Ok(results)
}

/// Forecasts every model, then scores them against the benchmark.
pub fn cmd_evaluate(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> CliResult<()> {
    let models = cmd_forecast(cfg, inputs, out)?;
    let report = evaluate(&models, &inputs.targets, &cfg.eval_config()).map_err(rt("evaluation::evaluate"))?;
    let path = out.join("evaluation.csv");
    let file = fs::File::create(&path).map_err(io(&path))?;
    write_report_csv(&report, file).map_err(rt("evaluation::write_report_csv"))?;
    write_json(&out.join("evaluation.json"), &report)
}
