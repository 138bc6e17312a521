use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a documented bound or shape requirement.
    #[error("validation error: {0}")]
    Validation(String),

    /// No sampled trajectory reached its answer, so the kernel cannot be re-estimated.
    #[error("iteration {iteration}: filter kept 0 of {sampled} trajectories (kept_count=0)")]
    EmptyFilter { iteration: usize, sampled: usize },

    /// Brute-force enumeration would exceed the configured row cap.
    #[error("enumeration cap exceeded: {paths} paths ({detail}) > cap {cap}")]
    Cap {
        paths: f64,
        detail: String,
        cap: u64,
    },

    /// A final reasoning state has no successor.
    #[error("state is already final: {0}")]
    AlreadyFinal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
