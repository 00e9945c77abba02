//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by geometry, integration, simulation, and I/O paths.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two points that must be distinct coincide (within the 1e-9 m
    /// degeneracy tolerance), or a link/person constraint is violated.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A kernel was evaluated within 1e-9 m of the TX or RX, where the
    /// single-bounce power formulas are singular.
    #[error("singular position: point within {tolerance} m of a node")]
    SingularPosition { tolerance: f64 },

    /// The adaptive scheme exhausted its evaluation budget before reaching
    /// the requested tolerance.
    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    /// The reflection line integral diverges for path loss exponents <= 2
    /// unless a finite integration cap is supplied.
    #[error(
        "divergent tail: reflection integral diverges for np = {np} <= 2; \
         supply an explicit alpha cap to truncate"
    )]
    DivergentTail { np: f64 },

    /// The simulation region captures too little of the shadow-integral mass
    /// for the empirical estimate to be comparable to the analytic value.
    #[error("region too small: only {coverage:.4} of the shadow integral mass is inside")]
    RegionTooSmall { coverage: f64 },

    /// A simulation was requested with no scatterers to perturb.
    #[error("no scatterers: {0}")]
    NoScatterers(String),

    /// An input file's header row does not match the documented schema.
    #[error("schema mismatch in {path}: {detail}")]
    SchemaMismatch { path: PathBuf, detail: String },

    /// Fewer than 10 bins are valid in both surfaces being compared.
    #[error("no overlap: only {joint} bins are valid in both surfaces (need >= 10)")]
    NoOverlap { joint: usize },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// I/O failure, with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
