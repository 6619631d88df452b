// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    /// The flip-bound check found a counterexample.
    Verification(String),
    Other(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Verification(_) => 4,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.code())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<bnn_bet::Error> for CliError {
    fn from(e: bnn_bet::Error) -> Self {
        use bnn_bet::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Format { .. } | E::Json(_) => CliError::Io(msg),
            E::InvalidArgument(_) | E::UnknownPreset(_) | E::Shape(_) | E::InputOutOfRange { .. } => {
                CliError::Config(msg)
            }
            _ => CliError::Other(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
