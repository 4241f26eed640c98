use thiserror::Error;

/// Exit status for a run that failed validation (bad input, bad files).
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for a numerical failure inside the library.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uible::Error),
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Config {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

impl CliError {
    pub fn input(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_map_to_exit_3() {
        let e = CliError::from(uible::Error::SingularVariance { max_jitter: 1e-6 });
        assert_eq!(e.exit_code(), EXIT_NUMERICAL);
        let e = CliError::from(uible::Error::DegenerateDesign { first: 0, second: 1 });
        assert_eq!(e.exit_code(), EXIT_VALIDATION);
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_VALIDATION);
    }
}
