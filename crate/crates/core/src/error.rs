use std::path::PathBuf;

use thiserror::Error;

use crate::game::StateId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mixed strategy: {0}")]
    InvalidStrategy(String),

    #[error("state {0} is in the last layer and has no successor")]
    TerminalState(StateId),

    #[error("feature matrices are all identical, cannot normalize")]
    DegenerateFeatures,

    #[error("malformed game: {0}")]
    MalformedGame(String),

    #[error("LP solver failed: {0}")]
    SolverError(String),

    #[error("no feasible point found in the version space after {proposals} proposals")]
    SamplingExhausted { proposals: usize },

    #[error("no (theta, b) pair admits a feasible strategy at epsilon = {epsilon}")]
    AllInfeasible { epsilon: f64 },

    #[error("no follower action is feasible at state {state} with epsilon = {epsilon}")]
    EpsilonInfeasible { state: StateId, epsilon: f64 },

    #[error("hindsight LP has no feasible follower action at state {0}")]
    NumericalDegeneracy(StateId),

    #[error("{count} grid strategies exceeds the limit of {limit}")]
    SizeLimit { count: u128, limit: usize },

    #[error("invalid scenario spec: {0}")]
    SpecError(String),

    #[error("config error in {}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;
