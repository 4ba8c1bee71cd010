use std::path::{Path, PathBuf};

use bnnsim::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 configuration, 3 allocation or shape, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Parse { .. } | Error::Domain(_) => 2,
                Error::Allocation { .. }
                | Error::Shape(_)
                | Error::AccumulatorOverflow { .. }
                | Error::ThresholdOverflow { .. }
                | Error::Bus { .. } => 3,
                Error::Io(_) => 4,
                _ => 1,
            },
        }
    }
}
