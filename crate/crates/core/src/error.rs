use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LesError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("objective evaluation failed: {0}")]
    Objective(String),
}

pub type Result<T, E = LesError> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(LesError::Argument(format!(
            "{what}: expected dimension {expected}, got {got}"
        )));
    }
    Ok(())
}
