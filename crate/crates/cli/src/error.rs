use thiserror::Error;

/// Everything a command can fail with, mapped onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] fscnet::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 0 success, 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use fscnet::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) | CliError::Checkpoint(_) => 2,
            CliError::Core(e) => match e {
                E::NonFinite(_) => 3,
                E::Io { .. } | E::Image { .. } | E::EmptyData(_) | E::InsufficientSamples(_) | E::Parse { .. } => 2,
                _ => 1,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
