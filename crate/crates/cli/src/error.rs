use nonlocal_core::Error as CoreError;
use thiserror::Error;

/// Failures of a CLI run, each mapped to an exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for anything the user must fix in the configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Core(e) => match e {
                CoreError::Config(_)
                | CoreError::Kernel { .. }
                | CoreError::Dimension(_)
                | CoreError::Certification { .. }
                | CoreError::Monotonicity { .. }
                | CoreError::Capability(_)
                | CoreError::Precondition(_) => 2,
                _ => 1,
            },
            Self::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn configuration_problems_exit_with_two() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::Precondition("x".into())).exit_code(), 2);
    }

    #[test]
    fn numerical_failures_exit_with_one() {
        assert_eq!(CliError::Core(CoreError::BlowUp { t: 1.0 }).exit_code(), 1);
        assert_eq!(CliError::Core(CoreError::Bound("x".into())).exit_code(), 1);
    }
}
