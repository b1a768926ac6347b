use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 1")]
    InvalidDimension,
    #[error("element count must be at least 1")]
    EmptySet,
    #[error("element {index} is not orthogonal (max deviation {deviation:.3e})")]
    NotOrthogonal { index: usize, deviation: f64 },
    #[error("elements {a} and {b} coincide within tolerance")]
    DuplicateElements { a: usize, b: usize },
    #[error("set is not closed under composition (product of {a} and {b} is missing)")]
    NotClosed { a: usize, b: usize },
    #[error("group cardinality {count} exceeds cap {cap}")]
    GroupTooLarge { count: usize, cap: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value encountered")]
    NonFinite,
    #[error("invalid kernel parameter: {0}")]
    InvalidKernel(String),
    #[error("one-sided evaluation requires an exact group")]
    NotExactGroup,
    #[error("factorization failed for ridge {ridge:.3e}")]
    FactorizationFailed { ridge: f64 },
    #[error("template solve residual {residual:.3e} exceeds tolerance")]
    SolveResidual { residual: f64 },
    #[error("input is not unit-normalized (norm {norm})")]
    Unnormalized { norm: f64 },
    #[error("pooling violates the Lipschitz premise: N_out * L = {actual:.4} > 1/sqrt(2); require L <= {required:.6}")]
    LipschitzPremise { actual: f64, required: f64 },
    #[error("pooling mode is not Lipschitz-certifiable")]
    NonCertifiablePooling,
    #[error("kernel is not normalized: |k(x,x) - 1| = {deviation:.3e}")]
    UnnormalizedKernel { deviation: f64 },
    #[error("labels must contain both classes")]
    SingleClassLabels,
    #[error("label column has {count} distinct values; exactly 2 required")]
    LabelCardinality { count: usize },
    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRow { row: usize, got: usize, expected: usize },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },
    #[error("fold count {folds} exceeds sample count {samples}")]
    TooManyFolds { folds: usize, samples: usize },
    #[error("gram matrix is not symmetric (max deviation {deviation:.3e})")]
    AsymmetricGram { deviation: f64 },
    #[error("need at least 2 training samples")]
    TooFewSamples,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
