use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("lattice is not bipartite: {0}")]
    Bipartiteness(String),
    #[error("invalid hopping matrix: {0}")]
    InvalidHopping(String),
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("sector error: {0}")]
    Sector(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("degenerate Slater state: smallest singular value ratio {ratio:e} below tolerance")]
    DegenerateState { ratio: f64 },
    #[error("size limit exceeded: {0}")]
    Size(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("log-magnitude {log_scale:.3} exceeded overflow guard {cap:.3}")]
    OverflowGuard { log_scale: f64, cap: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for failures raised by numerical guards rather than bad input.
    pub fn is_numerical_guard(&self) -> bool {
        matches!(
            self,
            Error::DegenerateState { .. } | Error::Size(_) | Error::OverflowGuard { .. }
        )
    }
}
