use std::path::PathBuf;

use crate::graph::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("graph failed validation: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("graph contains a cycle through {0} node(s)")]
    Cycle(usize),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("no feasible placement exists")]
    Infeasible,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incomplete experiment grid, missing cells: {}", .0.join(", "))]
    IncompleteGrid(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
