use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_BUDGET: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] lrgw::Error),
    #[error("cannot write {path}: {detail}")]
    Output { path: String, detail: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) => match e.root() {
                lrgw::Error::Numerical { .. } | lrgw::Error::Convergence { .. } => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            },
            CliError::Usage(_) | CliError::Output { .. } => EXIT_USAGE,
        }
    }

    pub fn output(path: impl std::fmt::Display, detail: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.to_string(),
            detail: detail.to_string(),
        }
    }
}
