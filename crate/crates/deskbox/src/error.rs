use std::io;
use std::path::PathBuf;

use serde::Serialize;

/// Errors of the command-line layer. Validation problems exit with 1,
/// runtime problems with 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Invalid(#[from] deskbox_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Serialize)]
struct ErrorRecord<'a> {
    kind: &'a str,
    code: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    exit_code: i32,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a core error raised after validation, while model work runs.
    pub fn runtime(err: deskbox_core::Error) -> Self {
        Error::Runtime(err.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Invalid(_) => 1,
            Error::Io { .. } | Error::Runtime(_) => 2,
        }
    }

    fn code(&self) -> &'static str {
        use deskbox_core::Error as E;
        match self {
            Error::Usage(_) => "usage",
            Error::Invalid(E::Config(_)) => "config",
            Error::Invalid(E::Length(_)) => "length",
            Error::Invalid(E::Contract(_)) => "contract",
            Error::Invalid(E::Schema { .. }) => "schema",
            Error::Invalid(E::Rejected(_)) => "rejected",
            Error::Io { .. } => "io",
            Error::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON error record for stderr.
    pub fn to_record(&self) -> String {
        let line = match self {
            Error::Invalid(deskbox_core::Error::Schema { line, .. }) => Some(*line),
            _ => None,
        };
        let record = ErrorRecord {
            kind: if self.exit_code() == 1 {
                "validation"
            } else {
                "runtime"
            },
            code: self.code(),
            message: self.to_string(),
            line,
            exit_code: self.exit_code(),
        };
        let body = serde_json::to_string(&record).unwrap_or_else(|_| String::from("{}"));
        format!("{{\"error\":{body}}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_carry_their_line() {
        let e = Error::from(deskbox_core::Error::Schema {
            line: 7,
            message: "missing required field \"answer\"".into(),
        });
        let v: serde_json::Value = serde_json::from_str(&e.to_record()).unwrap();
        assert_eq!(v["error"]["line"], 7);
        assert_eq!(v["error"]["code"], "schema");
        assert_eq!(v["error"]["exit_code"], 1);
        assert!(!e.to_record().contains('\n'));
    }

    #[test]
    fn io_is_a_runtime_failure() {
        let e = Error::io("x", io::Error::new(io::ErrorKind::NotFound, "gone"));
        assert_eq!(e.exit_code(), 2);
    }
}
