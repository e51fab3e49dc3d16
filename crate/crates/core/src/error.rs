use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("edge ({0}, {1}) is a self-loop or out of range")]
    BadEdge(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge probability {0} outside (0, 1]")]
    BadProbability(f64),
    #[error("support must contain at least one matrix")]
    EmptySupport,
    #[error("matrix {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("matrix {index} violates double stochasticity: {reason}")]
    NotDoublyStochastic { index: usize, reason: String },
    #[error("probabilities invalid: {0}")]
    BadProbabilities(String),
    #[error("mean graph is not strongly connected")]
    Disconnected,
    #[error("could not build a connected mean graph after {0} attempts (edge probability too small?)")]
    ConnectivityRetriesExhausted(usize),
    #[error("malformed graph document: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("agent count must be at least 1")]
    NoAgents,
    #[error("negative eigenvalue bound {0}")]
    NegativeEigenvalue(f64),
    #[error("eigenvalue range [{0}, {1}] is empty")]
    EmptyRange(f64, f64),
    #[error("{zeros} zero eigenvalues requested for dimension {d}")]
    TooManyZeros { zeros: usize, d: usize },
    #[error("negative noise standard deviation {0}")]
    NegativeNoise(f64),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("covariance of agent {0} is not symmetric positive semidefinite")]
    NotPsd(usize),
    #[error("malformed problem document: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule parameter invalid: {0}")]
    BadParameter(String),
    #[error("batch size at iteration {0} overflows the counter")]
    Overflow(u64),
    #[error("per-agent schedule table is empty")]
    EmptyTable,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgorithmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("step-size of agent {0} is not positive")]
    NonPositiveStep(usize),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("accuracy target must be positive, got {0}")]
    BadEpsilon(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("need at least one replication")]
    NoReplications,
    #[error("non-positive value {value} at k = {k} in fit range")]
    NonPositive { k: u64, value: f64 },
    #[error("fit range holds fewer than two points")]
    TooFewPoints,
    #[error("accuracy targets must be positive and decreasing")]
    BadTargets,
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
