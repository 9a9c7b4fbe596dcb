use spice_core::SpiceError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} failed: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: SpiceError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric { .. } => 3,
            CliError::Io(_) | CliError::Csv(_) => 1,
        }
    }
}

/// Tags a core error with the pipeline stage it came from.
pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for Result<T, SpiceError> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| match source {
            SpiceError::Io(e) => CliError::Io(e),
            SpiceError::Csv(e) => CliError::Config(format!("{stage}: {e}")),
            source => CliError::Numeric { stage, source },
        })
    }
}
