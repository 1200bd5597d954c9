use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or physically invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("direction is undefined for a zero-length vector")]
    ZeroDirection,

    #[error("Fisher information is singular or ill-conditioned (reciprocal condition {rcond:.3e})")]
    NonIdentifiable { rcond: f64 },

    #[error("no feasible selection reaches K = {k}")]
    Infeasible { k: usize },

    #[error("all {total} candidate deployments are non-identifiable")]
    NoIdentifiableDeployment { total: usize },

    #[error("greedy search stalled at K = {reached} (target {target}): no identifiable extension")]
    GreedyStalled { reached: usize, target: usize },
}

impl Error {
    pub fn parse(path: impl Into<PathBuf>, err: &serde_json::Error) -> Self {
        Error::Parse {
            path: path.into(),
            line: err.line(),
            column: err.column(),
            message: strip_location(&err.to_string()),
        }
    }
}

fn strip_location(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_owned(),
        None => msg.to_owned(),
    }
}
