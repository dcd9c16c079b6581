use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// One entry per violated parameter constraint.
    #[error("invalid parameters: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("parameter domain error: {0}")]
    Domain(String),

    #[error("singular utility exponent: 1 - nu + nu * rho_sq = 0")]
    SingularExponent,

    #[error("series did not converge within {max_terms} terms")]
    NonConvergence { max_terms: usize },

    #[error("{flagged} of {total} simulated paths left the state space")]
    FlaggedPaths { flagged: usize, total: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
