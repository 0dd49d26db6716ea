use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, algebras or graphs that do not fit together.
    #[error("structural error: {0}")]
    Structural(String),

    /// An argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data that failed validation; `pointer` is a JSON pointer into the
    /// offending document when the data came from a spec file.
    #[error("validation error at {pointer}: {message}")]
    Validation { pointer: String, message: String },

    /// An invalid Lie algebra (antisymmetry, nilpotency or Jacobi failure).
    #[error("invalid algebra: {0}")]
    InvalidAlgebra(String),

    /// Row sums of the transition probability differ from one.
    #[error("stochasticity violated at vertex {vertex}: outgoing mass {sum}")]
    Stochasticity { vertex: usize, sum: f64 },

    /// The inverse-edge map is not an involution, or voltages disagree with it.
    #[error("inverse pairing broken at edge {edge}: {message}")]
    InversePairing { edge: usize, message: String },

    /// The quotient walk is not irreducible.
    #[error("transition matrix is reducible: vertex {unreachable} not reachable from vertex {from}")]
    Reducible { from: usize, unreachable: usize },

    /// Iterative or linear-algebra failure.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Singular Albanese Gram matrix.
    #[error("degenerate walk: {0}")]
    Degenerate(String),

    /// Exact oracles that would exceed their memory guard.
    #[error("resource limit exceeded: {states} states (limit {limit})")]
    Resource { states: usize, limit: usize },

    /// A statistical test was called outside its hypotheses.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A feature outside the supported range (e.g. Castell beyond step 3).
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
