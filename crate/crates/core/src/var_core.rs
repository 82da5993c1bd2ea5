//! VAR data model: observed panels, lag designs, coefficient layout and
//! stability checks.
//!
//! Coefficients are stored as the `n x m` matrix `A = (A_1', ..., A_p', C')'`
//! with `n = mp + 1`. Row `(lag - 1) * m + source` holds the coefficient of
//! `y_{source, t-lag}`, column `equation` the equation it enters. The
//! intercept occupies the last row. Lag numbers start at 1, variable
//! indices at 0.

use nalgebra::{DMatrix, DVector, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{BvarError, Result};
use crate::linalg::SpdFactor;

/// `T x m` matrix of observations (rows are periods) with names and period
/// labels. Labels are opaque; only their order matters.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: DMatrix<f64>,
    names: Vec<String>,
    dates: Vec<String>,
}

impl TimeSeriesPanel {
    pub fn new(values: DMatrix<f64>, names: Vec<String>, dates: Vec<String>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(BvarError::EmptyInput("panel has no rows".into()));
        }
        if values.ncols() != names.len() {
            return Err(BvarError::ShapeMismatch(format!(
                "{} columns but {} names",
                values.ncols(),
                names.len()
            )));
        }
        if values.nrows() != dates.len() {
            return Err(BvarError::ShapeMismatch(format!(
                "{} rows but {} dates",
                values.nrows(),
                dates.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(BvarError::MissingValue { row, column: names[col].clone() });
        }
        Ok(Self { values, names, dates })
    }

    /// Panel with generated names `y1..ym` and integer period labels.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let names = (1..=values.ncols()).map(|i| format!("y{i}")).collect();
        let dates = (0..values.nrows()).map(|t| t.to_string()).collect();
        Self::new(values, names, dates)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dates(&self) -> &[String] {
        &self.dates
    }

    pub fn nobs(&self) -> usize {
        self.values.nrows()
    }

    pub fn nvars(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.nobs() {
            return Err(BvarError::IndexOutOfRange(format!(
                "rows {start}..{end} of a {}-row panel",
                self.nobs()
            )));
        }
        Self::new(
            self.values.rows(start, end - start).into_owned(),
            self.names.clone(),
            self.dates[start..end].to_vec(),
        )
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(c) = cols.iter().find(|&&c| c >= self.nvars()) {
            return Err(BvarError::IndexOutOfRange(format!("column {c}")));
        }
        Self::new(
            self.values.select_columns(cols),
            cols.iter().map(|&c| self.names[c].clone()).collect(),
            self.dates.clone(),
        )
    }

    /// Appends the columns of `other`, which must share this panel's dates.
    pub fn hstack(&self, other: &TimeSeriesPanel) -> Result<Self> {
        if other.dates != self.dates {
            return Err(BvarError::ShapeMismatch("panels cover different periods".into()));
        }
        let mut values = DMatrix::zeros(self.nobs(), self.nvars() + other.nvars());
        values.columns_mut(0, self.nvars()).copy_from(&self.values);
        values.columns_mut(self.nvars(), other.nvars()).copy_from(&other.values);
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        Self::new(values, names, self.dates.clone())
    }
}

/// Full-data regression matrices `Y = X A + E` for a VAR(p).
#[derive(Debug, Clone, PartialEq)]
pub struct LagDesign {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub m: usize,
    pub p: usize,
}

impl LagDesign {
    /// Number of regressors per equation, `mp + 1`.
    pub fn n(&self) -> usize {
        self.m * self.p + 1
    }

    /// Total number of coefficients, `m(mp + 1)`.
    pub fn k(&self) -> usize {
        self.m * self.n()
    }

    /// Usable rows, `T - p`.
    pub fn nobs(&self) -> usize {
        self.y.nrows()
    }
}

/// Regressor vector `(y'_{t-1}, ..., y'_{t-p}, 1)` built from the `p` most
/// recent rows of `history` (last row = most recent).
pub fn regressor_row(history: &DMatrix<f64>, p: usize) -> Result<DVector<f64>> {
    let (t, m) = history.shape();
    if t < p {
        return Err(BvarError::TooFewObservations { needed: p - 1, got: t });
    }
    let mut x = DVector::zeros(m * p + 1);
    for lag in 1..=p {
        for i in 0..m {
            x[(lag - 1) * m + i] = history[(t - lag, i)];
        }
    }
    x[m * p] = 1.0;
    Ok(x)
}

/// Builds `(Y, X)` conditioning on the first `p` observations.
pub fn build_lag_design(panel: &TimeSeriesPanel, p: usize) -> Result<LagDesign> {
    if p == 0 {
        return Err(BvarError::InvalidInput("lag order must be at least 1".into()));
    }
    let (t, m) = panel.values.shape();
    if t <= p {
        return Err(BvarError::TooFewObservations { needed: p, got: t });
    }
    let rows = t - p;
    let n = m * p + 1;
    let v = &panel.values;
    let y = v.rows(p, rows).into_owned();
    let mut x = DMatrix::zeros(rows, n);
    for r in 0..rows {
        let now = r + p;
        for lag in 1..=p {
            for i in 0..m {
                x[(r, (lag - 1) * m + i)] = v[(now - lag, i)];
            }
        }
        x[(r, n - 1)] = 1.0;
    }
    Ok(LagDesign { y, x, m, p })
}

/// Position of one coefficient in `A` and in `a = vec(A)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoefIndex {
    Lag { lag: usize, source: usize, equation: usize },
    Intercept { equation: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoefPosition {
    pub row: usize,
    pub col: usize,
    /// Offset into the column-major vectorization of `A`.
    pub flat: usize,
}

pub fn vec_index(idx: CoefIndex, m: usize, p: usize) -> Result<CoefPosition> {
    let n = m * p + 1;
    let (row, col) = match idx {
        CoefIndex::Lag { lag, source, equation } => {
            if lag == 0 || lag > p || source >= m || equation >= m {
                return Err(BvarError::IndexOutOfRange(format!(
                    "lag {lag}, source {source}, equation {equation} for m={m}, p={p}"
                )));
            }
            ((lag - 1) * m + source, equation)
        }
        CoefIndex::Intercept { equation } => {
            if equation >= m {
                return Err(BvarError::IndexOutOfRange(format!("intercept of equation {equation}")));
            }
            (n - 1, equation)
        }
    };
    Ok(CoefPosition { row, col, flat: col * n + row })
}

/// Inverse of [`vec_index`].
pub fn vec_position(flat: usize, m: usize, p: usize) -> Result<CoefIndex> {
    let n = m * p + 1;
    if flat >= n * m {
        return Err(BvarError::IndexOutOfRange(format!("flat index {flat} >= k = {}", n * m)));
    }
    let (row, equation) = (flat % n, flat / n);
    Ok(row_to_index(row, equation, m, p))
}

pub(crate) fn row_to_index(row: usize, equation: usize, m: usize, p: usize) -> CoefIndex {
    if row == m * p {
        CoefIndex::Intercept { equation }
    } else {
        CoefIndex::Lag { lag: row / m + 1, source: row % m, equation }
    }
}

/// Stacked VAR coefficients `A` (`n x m`).
#[derive(Debug, Clone, PartialEq)]
pub struct VarCoefficients {
    a: DMatrix<f64>,
    m: usize,
    p: usize,
}

impl VarCoefficients {
    pub fn new(a: DMatrix<f64>, m: usize, p: usize) -> Result<Self> {
        if a.shape() != (m * p + 1, m) {
            return Err(BvarError::ShapeMismatch(format!(
                "coefficient matrix is {:?}, expected ({}, {m})",
                a.shape(),
                m * p + 1
            )));
        }
        Ok(Self { a, m, p })
    }

    pub fn zeros(m: usize, p: usize) -> Self {
        Self { a: DMatrix::zeros(m * p + 1, m), m, p }
    }

    /// From lag matrices in equation-major form (`A_l[(j, i)]` is the effect
    /// of `y_{i,t-l}` on `y_{j,t}`) and an intercept.
    pub fn from_lag_matrices(lags: &[DMatrix<f64>], intercept: &DVector<f64>) -> Result<Self> {
        let p = lags.len();
        let m = intercept.len();
        if p == 0 || lags.iter().any(|l| l.shape() != (m, m)) {
            return Err(BvarError::ShapeMismatch("lag matrices must be m x m".into()));
        }
        let mut a = DMatrix::zeros(m * p + 1, m);
        for (l, mat) in lags.iter().enumerate() {
            a.rows_mut(l * m, m).copy_from(&mat.transpose());
        }
        a.row_mut(m * p).copy_from(&intercept.transpose());
        Ok(Self { a, m, p })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.a
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.a
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.m * self.p + 1
    }

    pub fn get(&self, idx: CoefIndex) -> Result<f64> {
        let pos = vec_index(idx, self.m, self.p)?;
        Ok(self.a[(pos.row, pos.col)])
    }

    pub fn set(&mut self, idx: CoefIndex, value: f64) -> Result<()> {
        let pos = vec_index(idx, self.m, self.p)?;
        self.a[(pos.row, pos.col)] = value;
        Ok(())
    }

    /// `A_lag` in equation-major form.
    pub fn lag_matrix(&self, lag: usize) -> DMatrix<f64> {
        assert!(lag >= 1 && lag <= self.p, "lag {lag} out of 1..={}", self.p);
        self.a.rows((lag - 1) * self.m, self.m).transpose()
    }

    pub fn intercept(&self) -> DVector<f64> {
        self.a.row(self.m * self.p).transpose()
    }

    pub fn vectorize(&self) -> DVector<f64> {
        DVector::from_column_slice(self.a.as_slice())
    }

    pub fn devectorize(a: &DVector<f64>, m: usize, p: usize) -> Result<Self> {
        let n = m * p + 1;
        if a.len() != n * m {
            return Err(BvarError::ShapeMismatch(format!("vector of length {} for k = {}", a.len(), n * m)));
        }
        Ok(Self { a: DMatrix::from_column_slice(n, m, a.as_slice()), m, p })
    }

    /// Companion matrix of the lag polynomial (intercept excluded).
    pub fn companion(&self) -> DMatrix<f64> {
        let (m, p) = (self.m, self.p);
        let mp = m * p;
        let mut f = DMatrix::zeros(mp, mp);
        for lag in 1..=p {
            f.view_mut((0, (lag - 1) * m), (m, m)).copy_from(&self.lag_matrix(lag));
        }
        for i in m..mp {
            f[(i, i - m)] = 1.0;
        }
        f
    }
}

/// Symmetric positive-definite error covariance with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    sigma: DMatrix<f64>,
    chol_l: DMatrix<f64>,
}

impl CovMatrix {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        if !sigma.is_square() {
            return Err(BvarError::ShapeMismatch("covariance must be square".into()));
        }
        if crate::linalg::asymmetry(&sigma) > 1e-12 {
            return Err(BvarError::InvalidInput("covariance is not symmetric".into()));
        }
        let sigma = crate::linalg::symmetrize(&sigma);
        let chol_l = SpdFactor::new(sigma.clone())
            .map_err(|e| BvarError::NotPositiveDefinite(format!("covariance: {e}")))?
            .l();
        Ok(Self { sigma, chol_l })
    }

    pub fn from_cholesky(chol_l: DMatrix<f64>) -> Result<Self> {
        Self::new(crate::linalg::symmetrize(&(&chol_l * chol_l.transpose())))
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// Free elements, `m(m + 1) / 2`.
    pub fn free_params(&self) -> usize {
        let m = self.dim();
        m * (m + 1) / 2
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let inv_l = self
            .chol_l
            .clone()
            .solve_lower_triangular(&DMatrix::identity(self.dim(), self.dim()))
            .expect("Cholesky factor has a positive diagonal");
        crate::linalg::symmetrize(&(inv_l.transpose() * inv_l))
    }
}

/// Largest eigenvalue modulus of the companion matrix.
pub fn companion_spectral_radius(coeffs: &VarCoefficients) -> Result<f64> {
    let mp = coeffs.m * coeffs.p;
    // a nilpotent shift matrix: report the exact answer instead of rounding noise
    if coeffs.a.rows(0, mp).iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let f = coeffs.companion();
    let schur = Schur::try_new(f, f64::EPSILON, 10_000)
        .ok_or_else(|| BvarError::NumericalFailure("companion eigenvalues did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn is_stable(coeffs: &VarCoefficients) -> Result<bool> {
    Ok(companion_spectral_radius(coeffs)? < 1.0)
}
