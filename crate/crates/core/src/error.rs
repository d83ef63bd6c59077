use thiserror::Error;

/// Errors produced by the solver, marker, and transport layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("marker {index} at ({x}, {y}) is outside the grid coverage for {role}")]
    OutOfDomain {
        index: usize,
        x: f64,
        y: f64,
        role: &'static str,
    },

    #[error("marker {index} escaped the domain at integrator stage {stage} ({x}, {y})")]
    StageEscape {
        index: usize,
        stage: &'static str,
        x: f64,
        y: f64,
    },

    #[error("marker {index} left the single-rank domain at ({x}, {y})")]
    Outbound { index: usize, x: f64, y: f64 },

    #[error("marker {index} moved ({dx}, {dy}) cells, beyond the adjacent-rank constraint")]
    MigrationConstraint { index: usize, dx: i64, dy: i64 },

    #[error("energy residual undefined: body-force norm is zero")]
    UndefinedNormalization,

    #[error("solver diverged at cycle {cycle} (res_total = {res_total:e})")]
    Divergence {
        cycle: usize,
        res_total: f64,
        report: Box<crate::uzawa::SolveReport>,
    },

    #[error("Krylov breakdown: |w| = {nu:e} below threshold after {iters} iterations")]
    Breakdown { nu: f64, iters: usize },

    #[error("communication failure on edge {edge}: {detail}")]
    Communication { edge: String, detail: String },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid_arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfiguration(msg.into())
    }
}
