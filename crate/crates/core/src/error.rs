use crate::store::StoreError;

/// Errors produced by the index library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("operation needs at least one postings list")]
    EmptyInput,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("blob name {0:?} is not registered in the string table")]
    UnknownBlobName(String),

    #[error("corrupt encoding: {0}")]
    CorruptEncoding(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("corpus contains no documents")]
    EmptyCorpus,

    /// The accuracy budget is below the feasibility floor of the corpus.
    #[error("infeasible accuracy budget: F0 = {f0} is below the lower bound {lower_bound:.6}")]
    InfeasibleBudget { f0: f64, lower_bound: f64 },

    #[error("boolean expression has no clauses")]
    EmptyExpression,

    #[error("query needs at least one keyword")]
    EmptyQuery,

    #[error(transparent)]
    Storage(#[from] StoreError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptEncoding(msg.into())
    }
}
