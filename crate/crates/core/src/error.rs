use thiserror::Error;

pub type Result<T> = std::result::Result<T, GampiError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GampiError {
    /// The objective evaluated to NaN or infinity, usually because the
    /// design is badly scaled.
    #[error("numerical overflow while evaluating the negative log-likelihood")]
    NumericalOverflow,

    #[error("singular information matrix on support {support:?}")]
    SingularFit { support: Vec<usize> },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("peeling stalled: columns {columns:?} have no nonzero rows among {rows:?}")]
    PeelStalled { columns: Vec<usize>, rows: Vec<usize> },

    #[error("ancestral relation contains a cycle through node {node}")]
    CyclicAncestry { node: usize },

    #[error("every tuning candidate failed to fit")]
    SelectionFailed,

    #[error("invalid covariance: equicorrelation {corr} is outside ({lower}, 1)")]
    InvalidCovariance { corr: f64, lower: f64 },

    #[error("node {node}: {reason}")]
    NodeFailed { node: usize, reason: String },

    #[error("node {node} skipped because ancestor {ancestor} failed")]
    AncestorFailed { node: usize, ancestor: usize },
}

impl GampiError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GampiError::InvalidInput(msg.into())
    }
}
