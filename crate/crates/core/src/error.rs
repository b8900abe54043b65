use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no sample identifiers are shared by all inputs")]
    EmptyIntersection,

    #[error("duplicate sample identifier `{0}`")]
    DuplicateId(String),

    #[error("empty sample identifier at position {0}")]
    EmptyId(usize),

    #[error("sample `{0}` is not present in the registry")]
    UnknownId(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}:{line}: value {value} in column `{column}` is outside [0, 2]", path.display())]
    Range {
        path: PathBuf,
        line: u64,
        column: String,
        value: f64,
    },

    #[error("{}:{line}: binary phenotype must be 0 or 1, found `{value}`", path.display())]
    Coding {
        path: PathBuf,
        line: u64,
        value: String,
    },

    #[error("{}: expected {expected} bytes, found {found}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric: entry ({i}, {j}) differs from ({j}, {i}) by {diff:e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },

    #[error("no polymorphic markers remain after frequency filtering")]
    NoPolymorphicMarkers,

    #[error("sample `{0}` has zero variance across markers")]
    ZeroVarianceRow(String),

    #[error("component weights sum to {0}, which exceeds 1")]
    WeightSumExceedsOne(f64),

    #[error("weight for component `{name}` is {value}; weights must be non-negative and finite")]
    NegativeWeight { name: String, value: f64 },

    #[error("component registries differ")]
    RegistryMismatch,

    #[error(
        "similarity matrix is not positive definite (pivot {pivot_index}, smallest eigenvalue {min_eigenvalue:e}) even after diagonal jitter {jitter:e}; increase the nugget weight"
    )]
    SingularSigma {
        pivot_index: usize,
        min_eigenvalue: f64,
        jitter: f64,
    },

    #[error("covariate matrix does not have full column rank")]
    RankDeficientZ,

    #[error("fold count {k} is invalid for {n} samples (need 2 <= k <= n)")]
    BadFoldCount { n: usize, k: usize },

    #[error("metric undefined: vector is constant")]
    ConstantVector,

    #[error("metric needs at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("AUC needs at least one case and one control")]
    OneClassOnly,

    #[error("grid step {0} is not of the form 1/k")]
    StepNotUnitFraction(f64),

    #[error("eigendecomposition did not converge")]
    ConvergenceFailure,

    #[error("design matrix is rank deficient")]
    RankDeficientDesign,

    #[error("no markers selected for the score")]
    EmptyMarkerSet,

    #[error("{0}")]
    InsufficientSamples(String),

    #[error("bad simulation weights: {0}")]
    BadTheta(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the linear algebra rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSigma { .. }
                | Error::RankDeficientZ
                | Error::ConvergenceFailure
                | Error::RankDeficientDesign
        )
    }

    /// True for failures to read, parse or write a file.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Range { .. }
                | Error::Coding { .. }
                | Error::SizeMismatch { .. }
                | Error::Json(_)
        )
    }
}
