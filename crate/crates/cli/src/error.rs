use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", match .line { Some(l) => format!("line {l}: {}", .message), None => .message.clone() })]
    Config { line: Option<usize>, message: String },

    #[error("cannot {action} {}: {source}", .path.display())]
    Io {
        action: &'static str,
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Render(String),

    #[error("{failed} of {total} acceptance criteria failed")]
    Acceptance { failed: usize, total: usize },

    #[error("{context}: {source}")]
    Core {
        context: String,
        source: tic_core::Error,
    },
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            line: None,
            message: message.into(),
        }
    }

    pub fn at_line(line: usize, message: impl Into<String>) -> Self {
        CliError::Config {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Render(_) => "render",
            CliError::Acceptance { .. } => "acceptance",
            CliError::Core { source, .. } if source.is_config() => "config",
            CliError::Core { .. } => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "numeric" | "render" => 3,
            "acceptance" => 4,
            _ => 1,
        }
    }

    /// Outermost context first, innermost cause last.
    pub fn chain(&self) -> Vec<String> {
        match self {
            CliError::Core { context, source } => vec![context.clone(), source.to_string()],
            CliError::Io { source, .. } => vec![self.to_string(), source.to_string()],
            other => vec![other.to_string()],
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            status: "error",
            kind: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
            chain: self.chain(),
        }
    }
}

/// What `tic` prints to stderr, as one JSON line, before exiting nonzero.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub status: &'static str,
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
    pub chain: Vec<String>,
}

pub trait Context<T> {
    fn context(self, what: &str) -> Result<T>;
}

impl<T> Context<T> for std::result::Result<T, tic_core::Error> {
    fn context(self, what: &str) -> Result<T> {
        self.map_err(|source| CliError::Core {
            context: what.to_string(),
            source,
        })
    }
}
