use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("node ({level}, {node}) has no children")]
    NoChildren { level: usize, node: usize },

    #[error("fixed-point iteration diverged after {} iterations (last distance {:e})", .history.len(), .history.last().copied().unwrap_or(f64::NAN))]
    Diverged { history: Vec<f64> },

    #[error(
        "conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e}); \
         the follower system may not be coercive, try larger beta"
    )]
    CoercivityFailure { iterations: usize, residual: f64 },
}

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            found,
        })
    }
}
