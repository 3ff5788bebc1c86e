use thiserror::Error;

/// Errors shared across the library. Variants are split by failure family so
/// callers can match on the ones they can recover from (scratch sizing,
/// factorization divergence) without string inspection.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid tile config: {0}")]
    InvalidTileConfig(String),

    /// A tile task would need more scratch than the configured budget.
    #[error("scratch budget exceeded: task needs {needed_bytes} bytes, budget is {budget_bytes} bytes")]
    ScratchBudgetExceeded {
        needed_bytes: usize,
        budget_bytes: usize,
    },

    /// The fully fused low-rank path keeps an n-tile × r accumulator resident
    /// in scratch; ranks past the budget-derived bound cannot run fused.
    #[error("rank {rank} too large for scratch: fused low-rank supports r <= {max_rank} under this budget")]
    RankTooLargeForScratch { rank: usize, max_rank: usize },

    /// An executor was handed factors in the wrong storage layout
    /// (e.g. the fused Monarch path before the V re-layout was applied).
    #[error("factor layout mismatch: expected {expected}, found {found}")]
    LayoutMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("BLAST factors are missing the pre-transposed S (apply pretranspose_blast_s first)")]
    MissingPretransposedS,

    #[error("factors are already in the requested layout")]
    AlreadyRelaidOut,

    #[error("no legal tile configuration exists under the scratch budget")]
    NoLegalTileConfig,

    #[error("SVD did not converge within {sweeps} sweeps")]
    SvdNonConvergence { sweeps: usize },

    /// Iterative factorization produced a non-finite loss.
    #[error("factorization diverged at step {step}: loss became non-finite")]
    Divergence { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
