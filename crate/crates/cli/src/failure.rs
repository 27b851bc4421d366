//! Errors reported as one JSON object on stderr.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Exit 2 for bad input (flags, config, missing files), 1 for failures
/// while running.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip)]
    pub exit_code: i32,
}

impl Failure {
    pub fn missing(path: &Path) -> Self {
        Self {
            kind: "missing_path",
            message: format!("path does not exist: {}", path.display()),
            path: Some(path.to_path_buf()),
            exit_code: 2,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            message: message.into(),
            path: None,
            exit_code: 2,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            message: message.into(),
            path: None,
            exit_code: 2,
        }
    }

    pub fn from_io(path: &Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            return Self::missing(path);
        }
        Self {
            kind: "io",
            message: format!("{}: {e}", path.display()),
            path: Some(path.to_path_buf()),
            exit_code: 1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<bandit_router::Error> for Failure {
    fn from(e: bandit_router::Error) -> Self {
        use bandit_router::Error as E;
        match e {
            E::Io { path, source } => Self::from_io(&path, source),
            E::Config(m) => Self::config(m),
            E::Schema { .. } | E::Manifest(_) | E::UnknownArm(_) => Self {
                kind: "data",
                message: e.to_string(),
                path: None,
                exit_code: 2,
            },
            other => Self {
                kind: "runtime",
                message: other.to_string(),
                path: None,
                exit_code: 1,
            },
        }
    }
}
