use thiserror::Error;

/// Errors produced by the reaction-network toolkit.
#[derive(Debug, Error)]
pub enum CrnError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("line {line}: rate `{name}` of reaction {reaction} is negative ({value})")]
    NegativeRate {
        line: usize,
        reaction: usize,
        name: &'static str,
        value: f64,
    },

    #[error("line {line}: stoichiometric coefficient for `{species}` must be a nonnegative integer, got {value}")]
    NonIntegerStoichiometry {
        line: usize,
        species: String,
        value: String,
    },

    #[error("duplicate species name `{0}`")]
    DuplicateSpecies(String),

    #[error("line {line}: unknown species `{species}`")]
    UnknownSpecies { line: usize, species: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("vector {0:?} is not a reaction vector of the network")]
    NotAReactionVector(Vec<i64>),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("initial state has a negative component: {0:?}")]
    NegativeState(Vec<f64>),

    #[error("point {0:?} is not on the lattice")]
    OffLattice(Vec<f64>),

    #[error("event cap of {cap} exceeded at time {time}; the process may be exploding")]
    EventCapExceeded { cap: u64, time: f64 },

    #[error("need at least 2 paths, got {0}")]
    TooFewPaths(usize),

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("lattice with {states} states exceeds the cap of {cap}")]
    LatticeTooLarge { states: usize, cap: usize },

    #[error("time step underflow: {steps} steps needed for horizon {horizon}; use a smaller lattice")]
    StepUnderflow { steps: f64, horizon: f64 },

    #[error("zero probability at lattice index {0}")]
    ZeroProbability(usize),

    #[error("steady state must be componentwise positive: {0:?}")]
    NonPositiveSteadyState(Vec<f64>),

    #[error("network has no positive mass vector")]
    NoMassVector,

    #[error("resolvent solve did not converge after {sweeps} sweeps (residual {residual:e})")]
    ResolventNotConverged { sweeps: usize, residual: f64 },

    #[error("NaN in input data")]
    NaNInput,

    #[error("solution blew up at time {0}")]
    BlowUp(f64),

    #[error("no detailed-balance steady state: {0}")]
    NoDetailedBalance(String),

    #[error("Newton iteration did not converge: {0}")]
    NewtonFailed(String),

    #[error("effective dimension {0} exceeds the supported maximum of 2")]
    DimensionTooLarge(usize),

    #[error("characteristics cross before the requested time {0}")]
    CharacteristicCrossing(f64),

    #[error("invariant measure is not reversible (residual {0:e})")]
    NotReversible(f64),

    #[error("Monte Carlo standard error {std_error:e} too large for tolerance {tolerance:e}; about {required_paths} paths needed")]
    McTooNoisy {
        std_error: f64,
        tolerance: f64,
        required_paths: u64,
    },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CrnError>;
