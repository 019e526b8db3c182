use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] maxweight_ld::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration and domain errors, 3 for exhausted budgets, 1
    /// otherwise.
    pub fn exit_code(&self) -> i32 {
        use maxweight_ld::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Resource(_)) => 3,
            CliError::Core(_) => 2,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}
