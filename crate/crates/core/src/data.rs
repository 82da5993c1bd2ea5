//! Macro panel ingestion: manifest, transforms, standardization and
//! variable-set selection.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::var_core::TimeSeriesPanel;

/// Environment variable overriding the data directory (a CLI flag wins).
pub const DATA_DIR_ENV: &str = "SPARSEBVAR_DATA_DIR";

pub const DEFAULT_TARGETS: [&str; 3] = ["GDPC1", "CPIAUCSL", "FEDFUNDS"];

const BUNDLED_MANIFEST: &str = include_str!("../data/fredqd_manifest.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformCode {
    Level,
    Diff,
    LogDiff,
    LogDiff2,
    PctChangeDiff,
}

impl TransformCode {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Self::Level),
            2 => Ok(Self::Diff),
            5 => Ok(Self::LogDiff),
            6 => Ok(Self::LogDiff2),
            7 => Ok(Self::PctChangeDiff),
            other => Err(BvarError::InvalidInput(format!("unsupported transform code {other}"))),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Self::Level => 1,
            Self::Diff => 2,
            Self::LogDiff => 5,
            Self::LogDiff2 => 6,
            Self::PctChangeDiff => 7,
        }
    }

    /// Observations lost at the start of the series. Code 7 differences a
    /// growth rate, so it consumes two.
    pub fn order(self) -> usize {
        match self {
            Self::Level => 0,
            Self::Diff | Self::LogDiff => 1,
            Self::LogDiff2 | Self::PctChangeDiff => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Slow,
    PolicyRate,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub mnemonic: String,
    pub tcode: TransformCode,
    pub small: bool,
    pub medium: bool,
    pub large: bool,
    pub block: Block,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub variables: Vec<VariableSpec>,
    pub targets: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    mnemonic: String,
    tcode: u8,
    small: u8,
    medium: u8,
    large: u8,
    block: String,
}

fn parse_flag(v: u8, what: &str, name: &str) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(BvarError::InvalidInput(format!("{what} flag for {name} must be 0 or 1"))),
    }
}

fn parse_manifest<R: std::io::Read>(reader: R) -> Result<DatasetManifest> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut variables = Vec::new();
    for row in rdr.deserialize() {
        let row: ManifestRow = row?;
        let block = match row.block.as_str() {
            "Slow" => Block::Slow,
            "PolicyRate" => Block::PolicyRate,
            "Fast" => Block::Fast,
            other => return Err(BvarError::InvalidInput(format!("unknown block {other:?} for {}", row.mnemonic))),
        };
        variables.push(VariableSpec {
            tcode: TransformCode::from_code(row.tcode)?,
            small: parse_flag(row.small, "small", &row.mnemonic)?,
            medium: parse_flag(row.medium, "medium", &row.mnemonic)?,
            large: parse_flag(row.large, "large", &row.mnemonic)?,
            block,
            mnemonic: row.mnemonic,
        });
    }
    let manifest = DatasetManifest { variables, targets: DEFAULT_TARGETS.iter().map(|s| s.to_string()).collect() };
    manifest.validate()?;
    Ok(manifest)
}

impl DatasetManifest {
    /// The FRED-QD variable list shipped with the crate.
    pub fn bundled() -> Self {
        parse_manifest(BUNDLED_MANIFEST.as_bytes()).expect("bundled manifest is valid")
    }

    pub fn with_targets(mut self, targets: Vec<String>) -> Result<Self> {
        self.targets = targets;
        self.validate()?;
        Ok(self)
    }

    pub fn get(&self, mnemonic: &str) -> Option<&VariableSpec> {
        self.variables.iter().find(|v| v.mnemonic == mnemonic)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.mnemonic.as_str()) {
                return Err(BvarError::InvalidInput(format!("duplicate mnemonic {}", v.mnemonic)));
            }
            if (v.small && !v.medium) || (v.medium && !v.large) {
                return Err(BvarError::FlagInconsistency(format!("{} breaks SMALL ⊆ MEDIUM ⊆ LARGE", v.mnemonic)));
            }
        }
        if self.targets.is_empty() {
            return Err(BvarError::FlagInconsistency("no target variables".into()));
        }
        for t in &self.targets {
            match self.get(t) {
                Some(v) if v.large => {}
                _ => return Err(BvarError::FlagInconsistency(format!("target {t} is not a LARGE variable"))),
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    parse_manifest(std::fs::File::open(path)?)
}

/// Resolves a data file: absolute paths pass through, otherwise the flag
/// directory, then the environment variable, then the working directory.
pub fn resolve_data_path(file: &Path, dir_flag: Option<&Path>) -> PathBuf {
    if file.is_absolute() {
        return file.to_path_buf();
    }
    if let Some(dir) = dir_flag {
        return dir.join(file);
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(file),
        _ => file.to_path_buf(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    pub q: u32,
}

impl Quarter {
    /// Accepts `YYYY:Qn`, `YYYYQn`, `YYYY-MM-DD` and `M/D/YYYY`.
    pub fn parse(label: &str) -> Option<Self> {
        let s = label.trim();
        if let Some((y, q)) = s.split_once(":Q").or_else(|| s.split_once('Q')) {
            let (year, q) = (y.parse().ok()?, q.parse().ok()?);
            return (1..=4).contains(&q).then_some(Self { year, q });
        }
        let parts: Vec<&str> = s.split(['-', '/']).collect();
        let [a, b, c] = parts[..] else { return None };
        let (y, mo, day) = match (a.len(), c.len()) {
            (4, 1..=2) => (a, b, c),
            (1..=2, 4) => (c, a, b),
            _ => return None,
        };
        let month: u32 = mo.parse().ok()?;
        let day: u32 = day.parse().ok()?;
        if !(1..=12).contains(&month) || !(1..=31).contains(&day) {
            return None;
        }
        Some(Self { year: y.parse().ok()?, q: (month - 1) / 3 + 1 })
    }
}

impl std::fmt::Display for Quarter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:Q{}", self.year, self.q)
    }
}

/// Untransformed data; `NaN` marks missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPanel {
    pub values: DMatrix<f64>,
    pub names: Vec<String>,
    pub dates: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | ".")
}

/// Reads a CSV whose first column holds period labels and whose header
/// names variables. Columns are returned in manifest order; columns the
/// manifest does not list are ignored.
pub fn load_csv(path: &Path, manifest: &DatasetManifest) -> Result<RawPanel> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() {
        return Err(BvarError::EmptyInput("CSV has no header".into()));
    }
    let lookup: HashMap<&str, usize> = header.iter().enumerate().skip(1).map(|(i, h)| (h.as_str(), i)).collect();
    let mut cols = Vec::with_capacity(manifest.variables.len());
    for v in &manifest.variables {
        cols.push(*lookup.get(v.mnemonic.as_str()).ok_or_else(|| BvarError::MissingColumn(v.mnemonic.clone()))?);
    }
    let ignored = header.len() - 1 - cols.len();
    if ignored > 0 {
        log::info!("ignoring {ignored} columns of {} not in the manifest", path.display());
    }

    let mut dates = Vec::new();
    let mut data = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let label = rec.get(0).unwrap_or("").trim().to_string();
        if Quarter::parse(&label).is_none() {
            return Err(BvarError::UnparseableCell { row, column: header[0].clone(), value: label });
        }
        dates.push(label);
        for (v, &c) in manifest.variables.iter().zip(&cols) {
            let cell = rec.get(c).unwrap_or("");
            let x = if is_missing(cell) {
                f64::NAN
            } else {
                cell.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| BvarError::UnparseableCell {
                    row,
                    column: v.mnemonic.clone(),
                    value: cell.to_string(),
                })?
            };
            data.push(x);
        }
    }
    if dates.is_empty() {
        return Err(BvarError::EmptyInput(format!("{} has no data rows", path.display())));
    }
    let values = DMatrix::from_row_slice(dates.len(), cols.len(), &data);
    Ok(RawPanel { values, names: manifest.variables.iter().map(|v| v.mnemonic.clone()).collect(), dates })
}

/// Returns the transformed series, shorter by `code.order()`. Missing
/// (`NaN`) inputs propagate; `column` only labels errors.
pub fn apply_transform(series: &[f64], code: TransformCode, column: &str) -> Result<Vec<f64>> {
    let logs = |xs: &[f64]| -> Result<Vec<f64>> {
        xs.iter()
            .enumerate()
            .map(|(row, &x)| {
                if x.is_nan() {
                    Ok(f64::NAN)
                } else if x <= 0.0 {
                    Err(BvarError::NonPositiveForLog { row: row + 1, column: column.to_string() })
                } else {
                    Ok(x.ln())
                }
            })
            .collect()
    };
    let diff = |xs: &[f64]| -> Vec<f64> { xs.windows(2).map(|w| w[1] - w[0]).collect() };
    Ok(match code {
        TransformCode::Level => series.to_vec(),
        TransformCode::Diff => diff(series),
        TransformCode::LogDiff => diff(&logs(series)?),
        TransformCode::LogDiff2 => diff(&diff(&logs(series)?)),
        TransformCode::PctChangeDiff => diff(&series.windows(2).map(|w| w[1] / w[0] - 1.0).collect::<Vec<_>>()),
    })
}

/// Transforms every column, drops the first `max order` rows so all columns
/// share dates, then trims leading rows with gaps. Gaps after the first
/// complete row are errors.
pub fn transform_panel(raw: &RawPanel, manifest: &DatasetManifest) -> Result<TimeSeriesPanel> {
    let (t, k) = raw.values.shape();
    let specs: Vec<&VariableSpec> = raw
        .names
        .iter()
        .map(|n| manifest.get(n).ok_or_else(|| BvarError::MissingColumn(n.clone())))
        .collect::<Result<_>>()?;
    let max_order = specs.iter().map(|s| s.tcode.order()).max().unwrap_or(0);
    if t <= max_order {
        return Err(BvarError::TooFewObservations { needed: max_order, got: t });
    }
    let rows = t - max_order;
    let mut out = DMatrix::zeros(rows, k);
    for (j, spec) in specs.iter().enumerate() {
        let col: Vec<f64> = raw.values.column(j).iter().copied().collect();
        let tr = apply_transform(&col, spec.tcode, &spec.mnemonic)?;
        let skip = tr.len() - rows;
        for i in 0..rows {
            out[(i, j)] = tr[skip + i];
        }
    }
    let first = (0..rows)
        .find(|&i| out.row(i).iter().all(|x| x.is_finite()))
        .ok_or_else(|| BvarError::EmptyInput("no complete rows after transformation".into()))?;
    for i in first..rows {
        for j in 0..k {
            if !out[(i, j)].is_finite() {
                return Err(BvarError::MissingValue { row: i + max_order + 1, column: raw.names[j].clone() });
            }
        }
    }
    let values = out.rows(first, rows - first).into_owned();
    let dates = raw.dates[max_order + first..].to_vec();
    TimeSeriesPanel::new(values, raw.names.clone(), dates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Demeans and scales each column by its sample standard deviation.
pub fn standardize(panel: &TimeSeriesPanel) -> Result<(TimeSeriesPanel, Standardization)> {
    let v = panel.values();
    let t = v.nrows();
    if t < 2 {
        return Err(BvarError::TooFewObservations { needed: 1, got: t });
    }
    let mut mean = Vec::with_capacity(v.ncols());
    let mut sd = Vec::with_capacity(v.ncols());
    for (j, col) in v.column_iter().enumerate() {
        let mu = col.mean();
        let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (t - 1) as f64;
        let s = var.sqrt();
        if !(s > 1e-12 * mu.abs().max(1.0)) {
            return Err(BvarError::ZeroVariance(panel.names()[j].clone()));
        }
        mean.push(mu);
        sd.push(s);
    }
    let z = DMatrix::from_fn(t, v.ncols(), |i, j| (v[(i, j)] - mean[j]) / sd[j]);
    let out = TimeSeriesPanel::new(z, panel.names().to_vec(), panel.dates().to_vec())?;
    Ok((out, Standardization { mean, sd }))
}

pub fn destandardize(panel: &TimeSeriesPanel, stats: &Standardization) -> Result<TimeSeriesPanel> {
    let v = panel.values();
    if stats.mean.len() != v.ncols() || stats.sd.len() != v.ncols() {
        return Err(BvarError::ShapeMismatch("standardization stats do not match panel width".into()));
    }
    let x = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * stats.sd[j] + stats.mean[j]);
    TimeSeriesPanel::new(x, panel.names().to_vec(), panel.dates().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelSize {
    S,
    M,
    FA,
    L,
}

impl ModelSize {
    pub fn label(self) -> &'static str {
        match self {
            Self::S => "S",
            Self::M => "M",
            Self::FA => "FA",
            Self::L => "L",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSelection {
    /// Variables entering the VAR directly; targets come first.
    pub variables: Vec<String>,
    /// Inputs to the principal components (FA only).
    pub factor_inputs: Vec<String>,
}

fn targets_first(manifest: &DatasetManifest, keep: impl Fn(&VariableSpec) -> bool) -> Vec<String> {
    let mut out = manifest.targets.clone();
    out.extend(manifest.variables.iter().filter(|v| keep(v) && !manifest.targets.contains(&v.mnemonic)).map(|v| v.mnemonic.clone()));
    out
}

pub fn select_set(manifest: &DatasetManifest, size: ModelSize) -> Result<SetSelection> {
    manifest.validate()?;
    let (variables, factor_inputs) = match size {
        ModelSize::S => (manifest.targets.clone(), Vec::new()),
        ModelSize::M => {
            for t in &manifest.targets {
                if !manifest.get(t).is_some_and(|v| v.medium) {
                    return Err(BvarError::FlagInconsistency(format!("target {t} is not flagged MEDIUM")));
                }
            }
            (targets_first(manifest, |v| v.medium), Vec::new())
        }
        ModelSize::L => (targets_first(manifest, |v| v.large), Vec::new()),
        ModelSize::FA => {
            let rest = targets_first(manifest, |v| v.large).split_off(manifest.targets.len());
            (manifest.targets.clone(), rest)
        }
    };
    Ok(SetSelection { variables, factor_inputs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    #[test]
    fn bundled_manifest_sizes() {
        let m = DatasetManifest::bundled();
        assert_eq!(m.variables.len(), 165);
        assert_eq!(select_set(&m, ModelSize::S).unwrap().variables, vec!["GDPC1", "CPIAUCSL", "FEDFUNDS"]);
        assert_eq!(select_set(&m, ModelSize::L).unwrap().variables.len(), 165);
        assert_eq!(select_set(&m, ModelSize::M).unwrap().variables.len(), 20);
        let fa = select_set(&m, ModelSize::FA).unwrap();
        assert_eq!(fa.variables.len(), 3);
        assert_eq!(fa.factor_inputs.len(), 162);
        assert!(fa.factor_inputs.iter().all(|v| !m.targets.contains(v)));
        let small: Vec<_> = m.variables.iter().filter(|v| v.small).map(|v| v.mnemonic.as_str()).collect();
        assert_eq!(small, ["GDPC1", "GDPCTPI", "FEDFUNDS"]);
    }

    #[test]
    fn small_price_variable_is_configurable() {
        let m = DatasetManifest::bundled().with_targets(vec!["GDPC1".into(), "GDPCTPI".into(), "FEDFUNDS".into()]).unwrap();
        assert_eq!(select_set(&m, ModelSize::S).unwrap().variables[1], "GDPCTPI");
        assert!(DatasetManifest::bundled().with_targets(vec!["NOPE".into()]).is_err());
    }

    #[test]
    fn inconsistent_flags_rejected() {
        let mut m = DatasetManifest::bundled();
        m.variables[1].small = true;
        m.variables[1].medium = false;
        assert!(matches!(m.validate(), Err(BvarError::FlagInconsistency(_))));
    }

    #[test]
    fn transforms() {
        let e = std::f64::consts::E;
        assert_eq!(apply_transform(&[3.0, -1.0], TransformCode::Level, "x").unwrap(), vec![3.0, -1.0]);
        assert_eq!(apply_transform(&[5.0, 7.0, 10.0], TransformCode::Diff, "x").unwrap(), vec![2.0, 3.0]);
        let ld = apply_transform(&[1.0, e, e * e], TransformCode::LogDiff, "x").unwrap();
        assert_relative_eq!(ld[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(ld[1], 1.0, epsilon = 1e-15);
        let ld2 = apply_transform(&[1.0, e, e.powi(3)], TransformCode::LogDiff2, "x").unwrap();
        assert_eq!(ld2.len(), 1);
        assert_relative_eq!(ld2[0], 1.0, epsilon = 1e-14);
        let pc = apply_transform(&[1.0, 2.0, 3.0], TransformCode::PctChangeDiff, "x").unwrap();
        assert_eq!(pc, vec![-0.5]);
        assert!(matches!(
            apply_transform(&[1.0, 0.0], TransformCode::LogDiff, "x"),
            Err(BvarError::NonPositiveForLog { row: 2, .. })
        ));
        for code in [1, 2, 5, 6, 7] {
            let c = TransformCode::from_code(code).unwrap();
            assert_eq!(c.code(), code);
            assert_eq!(apply_transform(&[1.0, 2.0, 4.0, 8.0], c, "x").unwrap().len(), 4 - c.order());
        }
        assert!(TransformCode::from_code(3).is_err());
    }

    #[test]
    fn standardize_hand_example_and_roundtrip() {
        let p = TimeSeriesPanel::from_matrix(DMatrix::from_column_slice(2, 1, &[0.0, 2.0])).unwrap();
        let (z, st) = standardize(&p).unwrap();
        assert_eq!(z.values().as_slice(), &[-1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        assert_eq!(st.mean, vec![1.0]);
        assert_relative_eq!(st.sd[0], 2f64.sqrt(), epsilon = 1e-15);
        let back = destandardize(&z, &st).unwrap();
        assert_relative_eq!(back.values(), p.values(), epsilon = 1e-12);
        let (zz, st2) = standardize(&z).unwrap();
        assert_relative_eq!(zz.values(), z.values(), epsilon = 1e-12);
        assert!(st2.mean[0].abs() < 1e-12 && (st2.sd[0] - 1.0).abs() < 1e-12);
        let c = TimeSeriesPanel::from_matrix(DMatrix::from_element(4, 1, 3.0)).unwrap();
        assert!(matches!(standardize(&c), Err(BvarError::ZeroVariance(_))));
    }

    #[test]
    fn quarter_labels() {
        assert_eq!(Quarter::parse("1959:Q1"), Some(Quarter { year: 1959, q: 1 }));
        assert_eq!(Quarter::parse("2018Q4"), Some(Quarter { year: 2018, q: 4 }));
        assert_eq!(Quarter::parse("1989-12-01"), Some(Quarter { year: 1989, q: 4 }));
        assert_eq!(Quarter::parse("3/1/1959"), Some(Quarter { year: 1959, q: 1 }));
        assert_eq!(Quarter::parse("12/1/2018"), Some(Quarter { year: 2018, q: 4 }));
        assert_eq!(Quarter::parse("3/1/59"), None);
        assert_eq!(Quarter::parse("1989:Q5"), None);
        assert_eq!(Quarter::parse("hello"), None);
        assert_eq!(Quarter { year: 1990, q: 2 }.to_string(), "1990:Q2");
    }

    fn small_manifest() -> DatasetManifest {
        let mut m = DatasetManifest::bundled();
        m.variables.retain(|v| m.targets.contains(&v.mnemonic));
        m
    }

    #[test]
    fn csv_roundtrip_with_leading_gaps_and_extra_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "date,FEDFUNDS,EXTRA,CPIAUCSL,GDPC1").unwrap();
        writeln!(f, "2000:Q1,5.0,1,,100").unwrap();
        writeln!(f, "2000:Q2,5.5,1,170,101").unwrap();
        writeln!(f, "2000:Q3,5.2,1,171,102").unwrap();
        writeln!(f, "2000:Q4,5.1,1,173,102.5").unwrap();
        writeln!(f, "2001:Q1,4.0,1,174,103").unwrap();
        drop(f);
        let m = small_manifest();
        let raw = load_csv(&path, &m).unwrap();
        assert_eq!(raw.names, m.variables.iter().map(|v| v.mnemonic.clone()).collect::<Vec<_>>());
        let panel = transform_panel(&raw, &m).unwrap();
        // CPIAUCSL is Δ²log; its leading gap costs one more row
        assert_eq!(panel.dates(), &["2000:Q4", "2001:Q1"]);
        assert!(panel.values().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_manifest();
        let p1 = dir.path().join("a.csv");
        std::fs::write(&p1, "date,GDPC1,CPIAUCSL\n2000:Q1,1,2\n").unwrap();
        assert!(matches!(load_csv(&p1, &m), Err(BvarError::MissingColumn(c)) if c == "FEDFUNDS"));
        let p2 = dir.path().join("b.csv");
        std::fs::write(&p2, "date,GDPC1,CPIAUCSL,FEDFUNDS\n2000:Q1,1,x2,3\n").unwrap();
        assert!(matches!(load_csv(&p2, &m), Err(BvarError::UnparseableCell { row: 1, .. })));
        let p3 = dir.path().join("c.csv");
        std::fs::write(&p3, "date,GDPC1,CPIAUCSL,FEDFUNDS\n2000:Q1,1,2,3\n2000:Q2,1,2,3\n2000:Q3,1,2,3\n2000:Q4,1,2,3\n2001:Q1,1,,3\n2001:Q2,1,2,3\n2001:Q3,1,2,3\n2001:Q4,1,2,3\n").unwrap();
        let raw = load_csv(&p3, &m).unwrap();
        assert!(matches!(transform_panel(&raw, &m), Err(BvarError::MissingValue { .. })));
    }

    #[test]
    fn data_path_precedence() {
        let flag = Path::new("/flag");
        assert_eq!(resolve_data_path(Path::new("x.csv"), Some(flag)), PathBuf::from("/flag/x.csv"));
        assert_eq!(resolve_data_path(Path::new("/abs/x.csv"), Some(flag)), PathBuf::from("/abs/x.csv"));
    }
}
