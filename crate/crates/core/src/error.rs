use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("pole hit in component {component}")]
    Pole { component: usize },
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("contract violated: {what} (residual {residual:.3e})")]
    Contract { what: String, residual: f64 },
    #[error("no generic point found: {0}")]
    GenericPoint(String),
    #[error("extended solution is not normalized: {0}")]
    NotNormalized(String),
    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(what: impl Into<String>, residual: f64) -> Self {
        Error::Contract { what: what.into(), residual }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
