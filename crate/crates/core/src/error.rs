use std::path::PathBuf;

/// Errors surfaced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e}, trace {trace:e})")]
    NotPsd { min_eigenvalue: f64, trace: f64 },

    #[error("matrix is singular or not positive definite (smallest eigenvalue {min_eigenvalue:e}, trace {trace:e})")]
    Singular { min_eigenvalue: f64, trace: f64 },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:e})")]
    NotHermitian { asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("correlation coefficient magnitude must be below 1, got {0}")]
    BadAlpha(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate channel statistics for user {user}: expected energy {energy:e}")]
    DegenerateChannel { user: usize, energy: f64 },

    #[error("reference channel has zero norm")]
    DegenerateTruth,

    #[error("trial {trial} (seed {seed:#018x}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
