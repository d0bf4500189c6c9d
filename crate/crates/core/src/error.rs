use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("inertia matrix is numerically singular (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("target unreachable: distance {distance:.4} m from base is outside the reach annulus")]
    Unreachable { distance: f64 },
    #[error("invalid arm parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scene sampling exhausted {attempts} attempts")]
    RetryExhausted { attempts: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HumanSimError {
    #[error("belief collapsed: all unnormalized masses underflowed")]
    DegenerateBelief,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    HumanSim(#[from] HumanSimError),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("history must hold exactly {expected} ticks, got {got}")]
    ShortHistory { expected: usize, got: usize },
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("value iteration did not converge within {sweeps} sweeps (residual {residual:e})")]
    IterationLimit { sweeps: usize, residual: f64 },
    #[error("training diverged: non-finite {what} at step {step}")]
    Diverged { what: &'static str, step: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
