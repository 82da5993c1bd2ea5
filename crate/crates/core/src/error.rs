use thiserror::Error;

pub type Result<T> = std::result::Result<T, BvarError>;

#[derive(Debug, Error)]
pub enum BvarError {
    #[error("too few observations: need more than {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular design in {0}")]
    SingularDesign(String),

    #[error("singular prior precision: {0}")]
    SingularPrior(String),

    #[error("singular augmented Gram matrix: {0}")]
    SingularGram(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("predictive degrees of freedom too small: s1 = {0}")]
    DofTooSmall(f64),

    #[error("no stable system after {0} redraws")]
    StabilityExhausted(usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("division by zero: {0}")]
    DivisionByZero(String),

    #[error("series too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("model confidence set needs at least 2 models, got {0}")]
    TooFewModels(usize),

    #[error("degenerate predictive distribution at origin {0}")]
    DegeneratePredictive(usize),

    #[error("fewer than {wanted} positive eigenvalues (found {found})")]
    RankDeficient { wanted: usize, found: usize },

    #[error("missing column {0}")]
    MissingColumn(String),

    #[error("unparseable cell at row {row}, column {column}: {value:?}")]
    UnparseableCell { row: usize, column: String, value: String },

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("non-positive value in {column} at row {row}; log transform undefined")]
    NonPositiveForLog { row: usize, column: String },

    #[error("zero variance in column {0}")]
    ZeroVariance(String),

    #[error("variable set flags inconsistent: {0}")]
    FlagInconsistency(String),

    #[error("draw {index}: {source}")]
    AtDraw {
        index: usize,
        #[source]
        source: Box<BvarError>,
    },

    #[error("replication {index}: {source}")]
    AtReplication {
        index: usize,
        #[source]
        source: Box<BvarError>,
    },

    #[error("origin {origin}: {source}")]
    AtOrigin {
        origin: String,
        #[source]
        source: Box<BvarError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BvarError {
    pub fn at_draw(self, index: usize) -> Self {
        BvarError::AtDraw { index, source: Box::new(self) }
    }

    pub fn at_replication(self, index: usize) -> Self {
        BvarError::AtReplication { index, source: Box::new(self) }
    }

    pub fn at_origin(self, origin: impl Into<String>) -> Self {
        BvarError::AtOrigin { origin: origin.into(), source: Box::new(self) }
    }
}
