//! Pipeline driver on top of the inference library: configuration schema,
//! command implementations, and the interface-position sweep.

pub mod commands;
pub mod config;
pub mod sweep;

use thiserror::Error;

/// CLI failure classes, mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] opinf_sfom::Error),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 = configuration error, 3 = numerical failure, 4 = i/o error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(e) => match e {
                opinf_sfom::Error::Io { .. } | opinf_sfom::Error::Parse { .. } => 4,
                opinf_sfom::Error::InvalidArgument(_)
                | opinf_sfom::Error::Shape { .. }
                | opinf_sfom::Error::Bounds { .. } => 2,
                _ => 3,
            },
            CliError::Io(_) => 4,
        }
    }
}
