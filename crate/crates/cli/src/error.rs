//! Failure classes and their exit codes.

use std::fmt;

use obeskit_core::pipeline::PipelineError;
use serde_json::json;

#[derive(Debug)]
pub enum Failure {
    /// Invalid or unreadable configuration (exit 2).
    Config(anyhow::Error),
    /// Missing, malformed or unusable input data (exit 3).
    Data(anyhow::Error),
    /// Anything else, including failures to write outputs (exit 4).
    Internal(anyhow::Error),
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Internal(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Failure::Config(_) => "config",
            Failure::Data(_) => "data",
            Failure::Internal(_) => "internal",
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Data(e) | Failure::Internal(e) => e,
        }
    }

    /// Single-line JSON written to stderr before exiting.
    pub fn to_json(&self) -> serde_json::Value {
        let e = self.error();
        let causes: Vec<String> = e.chain().skip(1).map(ToString::to_string).collect();
        json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": e.to_string(),
                "causes": causes,
            }
        })
    }
}

impl Failure {
    /// Prefixes the message with the (pseudonymous) subject it concerns.
    pub fn with_subject(self, subject: &str) -> Self {
        let wrap = |e: anyhow::Error| e.context(format!("subject {subject}"));
        match self {
            Failure::Config(e) => Failure::Config(wrap(e)),
            Failure::Data(e) => Failure::Data(wrap(e)),
            Failure::Internal(e) => Failure::Internal(wrap(e)),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {:#}", self.kind(), self.error())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) => Failure::Config(e.into()),
            other => Failure::Data(other.into()),
        }
    }
}

/// Attaches a failure class and a context message to any error.
pub trait Classify<T> {
    fn config(self, msg: impl fmt::Display) -> Outcome<T>;
    fn data(self, msg: impl fmt::Display) -> Outcome<T>;
    fn internal(self, msg: impl fmt::Display) -> Outcome<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn config(self, msg: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::Config(e.into().context(msg.to_string())))
    }

    fn data(self, msg: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::Data(e.into().context(msg.to_string())))
    }

    fn internal(self, msg: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::Internal(e.into().context(msg.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_json() {
        let f: Outcome<()> = Err(std::io::Error::other("boom")).data("reading input");
        let f = f.unwrap_err();
        assert_eq!(f.exit_code(), 3);
        let v = f.to_json();
        assert_eq!(v["error"]["kind"], "data");
        assert_eq!(v["error"]["message"], "reading input");
        assert_eq!(v["error"]["causes"][0], "boom");
        assert_eq!(Failure::from(PipelineError::Config("x".into())).exit_code(), 2);
    }
}
