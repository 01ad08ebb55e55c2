use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown constellation `{0}` (expected QPSK, 16QAM or 64QAM)")]
    UnknownConstellation(String),

    #[error("comb spacing kappa={kappa} does not divide N={n}")]
    Divisibility { kappa: usize, n: usize },

    #[error("subcarrier power {value} is below the floor {floor}")]
    Floor { value: f64, floor: f64 },

    #[error("invalid secure-ACF parameters: {0}")]
    InvalidSpec(String),

    #[error("ACF comb is infeasible: subcarrier {index} would receive power {power}")]
    InfeasibleAcf { index: usize, power: f64 },

    #[error("allocation carries no (p, q, kappa) structure")]
    Structure,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("reflector at {range_m:.2} m lies beyond the ISI-free range {limit_m:.2} m")]
    IsiRegion { range_m: f64, limit_m: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("security constraints are infeasible: {0}")]
    InfeasibleSecurity(String),

    #[error("solver failed after {iterations} iterations (projected-gradient norm {pg_norm:.3e}): {reason}")]
    Solver {
        iterations: usize,
        pg_norm: f64,
        reason: String,
    },

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
