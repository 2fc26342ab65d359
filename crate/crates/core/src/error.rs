use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    // Format errors.
    #[error("bad magic bytes {found:?}, expected \"FMAT\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported FMAT version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    // Algorithm contract violations.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} centroids, found {found}")]
    TooFewCentroids { needed: usize, found: usize },
    #[error("cycle {cycle} outside 1..={cycles}")]
    CycleOutOfRange { cycle: usize, cycles: usize },
    #[error("sub-pool for cycle {cycle} has no unlabeled members")]
    EmptySubPool { cycle: usize },
    #[error("beta {beta} is below the feasibility floor {floor}")]
    InfeasibleBeta { beta: f64, floor: f64 },
    #[error("requested {requested} rows but only {available} are available")]
    BudgetExceedsPool { requested: usize, available: usize },
    #[error("invalid probability row {row}: {reason}")]
    InvalidProbabilities { row: usize, reason: String },
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("feature matrix carries no labels")]
    MissingLabels,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("row {0} selected more than once")]
    DuplicateSelection(usize),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no feasible balancing factor among candidates")]
    NoFeasibleBeta,
    #[error("external model: {0}")]
    External(String),
}
