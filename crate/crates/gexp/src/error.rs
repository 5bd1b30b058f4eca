use thiserror::Error;

/// Crate-wide error type. Solver stages propagate these upward unchanged so
/// a caller can see which stage rejected the input.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("tree depth {0} exceeds the supported maximum of 24")]
    DepthTooLarge(usize),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("shape mismatch: expected {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("level {level} out of range [{lo}, {hi}]")]
    LevelOutOfRange { level: usize, lo: usize, hi: usize },
    #[error("parameter must be positive, got {0}")]
    NonPositiveParameter(f64),
    #[error("drift value {0} exceeds the boundedness cap 1e6")]
    UnboundedDrift(f64),
    #[error("contraction margin violated: C*dt = {0} >= 0.5; increase n_steps")]
    ContractionViolated(f64),
    #[error("implicit step fixed point failed to converge within {0} iterations")]
    FixedPointDiverged(usize),
    #[error("exponent {0} exceeds the overflow guard threshold 700")]
    OverflowGuard(f64),
    #[error("|mu|*sqrt(dt) = {0} >= 1: reweighted branch probability leaves [0,1]")]
    StepTooCoarse(f64),
    #[error("adjoint positivity violated at level {level}, node {node}: factor {factor}; refine the grid")]
    PositivityViolated {
        level: usize,
        node: usize,
        factor: f64,
    },
    #[error("|1 - A*dt| = {0} < 0.1 in the adjoint denominator; refine the grid")]
    DenominatorNearZero(f64),
    #[error("perturbed terminal exits the admissible band [X, Y]")]
    BoundViolation,
    #[error("interiority violated: need E_g[X] < pi0 < E_g[Y], got E_g[X] = {egx}, pi0 = {pi0}, E_g[Y] = {egy}")]
    InteriorityViolated { egx: f64, pi0: f64, egy: f64 },
    #[error("leaf assignment entered a 2-cycle in the candidate fixed point")]
    CycleDetected,
    #[error("tie value not bracketed: E_g range [{lo}, {hi}] does not contain pi0 = {pi0}")]
    NotBracketed { lo: f64, hi: f64, pi0: f64 },
    #[error("multiplier bracket expansion failed after {0} doublings")]
    BracketExpansionFailed(usize),
    #[error("outer iteration on E[n(T)] did not converge: last two iterates {0} and {1}")]
    OuterNoConvergence(f64, f64),
    #[error("multiplier value {v} outside [{lo}, {hi}]: randomized level c leaves [0, 1]")]
    CError { v: f64, lo: f64, hi: f64 },
    #[error("line search failed to descend for 50 consecutive iterations; problem may be nonconvex")]
    NonConvexDetected,
    #[error("tie set empty: nothing to calibrate")]
    EmptyTieSet,
    #[error("oracle supports tree depth <= {max}, got {got}")]
    OracleDepthTooLarge { max: usize, got: usize },
    #[error("structural post-check failed: {0}")]
    FormCheckFailed(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
