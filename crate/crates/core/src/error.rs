use std::path::PathBuf;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },
    #[error("duplicate profile id `{0}`")]
    DuplicateId(String),
    #[error("profile `{id}` has {months} months, need at least 3")]
    TooShort { id: String, months: usize },
    #[error("profile `{0}` has no views after dropping the first month")]
    AllZeroViews(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("least-squares design matrix is rank deficient")]
    SingularDesign,
    #[error("breakpoints {0} and {1} are closer than the minimum gap")]
    DegenerateBreakpoints(f64, f64),
    #[error("segmented fit did not converge")]
    NotConverged,
    #[error("sign pattern needs at least two segments, got {0}")]
    TooFewSegments(usize),
    #[error("features mix segment counts ({expected} and {found})")]
    MixedSegmentCounts { expected: usize, found: usize },
    #[error("variable `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid cluster count {k} for {n} leaves")]
    InvalidK { k: usize, n: usize },
    #[error("covariance matrix is degenerate (all points identical)")]
    DegenerateCovariance,
    #[error("labels and patterns are misaligned ({labels} vs {patterns})")]
    Misalignment { labels: usize, patterns: usize },
    #[error("cannot average an empty group")]
    EmptyGroup,
    #[error("histograms use different bin specifications")]
    BinMismatch,
    #[error("missing upstream artifact {}", .0.display())]
    MissingUpstreamArtifact(PathBuf),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
