use thiserror::Error;

/// Errors raised by the reduced solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("N ≤ 2m: need N > 2m (got N={dim}, m={order})")]
    SubcriticalDimension { dim: usize, order: usize },

    #[error("order m must be at least 1")]
    ZeroOrder,

    #[error("n1 + n2 must equal N + 1 (got n1={n1}, n2={n2}, N={dim})")]
    BlockSum { n1: usize, n2: usize, dim: usize },

    #[error("symmetry blocks need n1 ≥ 2 and n2 ≥ 2 (got n1={n1}, n2={n2})")]
    BlockTooSmall { n1: usize, n2: usize },

    #[error("sphere dimension must be ≥ 1 (got {0})")]
    SphereDimension(i64),

    #[error("weight is singular at t={0} (endpoints 0 and π are excluded)")]
    SingularEndpoint(f64),

    #[error("grid needs at least {min} nodes (got {got})")]
    GridTooSmall { got: usize, min: usize },

    #[error("profile has {got} values but the grid has {expected} nodes")]
    GridMismatch { expected: usize, got: usize },

    #[error("interval too thin: ({a}, {b}) is narrower than {min_width}")]
    IntervalTooThin { a: f64, b: f64, min_width: f64 },

    #[error("invalid interval ({a}, {b}): need 0 ≤ a < b ≤ π")]
    InvalidInterval { a: f64, b: f64 },

    #[error("clamped end {t} lies within {min} of the orbit interval ends")]
    EndTooClose { t: f64, min: f64 },

    #[error("zero profile has no Nehari scaling")]
    ZeroProfile,

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid coupling data: {0}")]
    InvalidCoupling(String),

    #[error("invalid norm weights: {0}")]
    InvalidWeights(String),

    #[error("initialization outside U")]
    InitOutsideU,

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("supports overlap")]
    SupportsOverlap,

    #[error("support not an interval (component {0})")]
    SupportNotInterval(usize),

    #[error("empty support: bundle has no value above the threshold")]
    EmptySupport,

    #[error("species count mismatch: {left} vs {right}")]
    EllMismatch { left: usize, right: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("strong form only implemented for m ∈ {{1, 2}} (got m={0})")]
    UnsupportedOrder(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
