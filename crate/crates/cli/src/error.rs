//! Error taxonomy with stable exit codes and machine-readable JSON output.
//!
//! Exit codes: 0 success, 2 infeasible model, 3 iteration/node limit hit,
//! 4 input or configuration error.

use drots_core::reformulate::ReformulateError;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Input,
    Infeasible,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    schema: &'a str,
    kind: &'a ErrorKind,
    message: &'a str,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Input, message: msg.into() }
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        CliError { kind: ErrorKind::Infeasible, message: msg.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Infeasible => 2,
            ErrorKind::Input => 4,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorJson {
            schema: "error/1",
            kind: &self.kind,
            message: &self.message,
        })
        .expect("error serialization")
    }
}

impl From<ReformulateError> for CliError {
    fn from(e: ReformulateError) -> Self {
        let kind = match &e {
            ReformulateError::Infeasible(_)
            | ReformulateError::NoFeasibleStart
            | ReformulateError::UnboundedDual => ErrorKind::Infeasible,
            _ => ErrorKind::Input,
        };
        CliError { kind, message: e.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}
