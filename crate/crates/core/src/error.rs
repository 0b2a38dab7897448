use std::fmt;

use thiserror::Error;

/// A single field-level problem found while parsing an experiment config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub key: String,
    pub message: String,
}

impl FieldError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{what} = {value} lies outside the covered range [0, {limit}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        limit: f64,
    },

    #[error("numerical failure: {message} (best estimate {estimate}, residual {residual:e})")]
    NumericalFailure {
        message: String,
        estimate: f64,
        residual: f64,
    },

    #[error("model inconsistency: intensity {observed} at s = {at} exceeds declared bound {bound}")]
    ModelInconsistency { at: f64, observed: f64, bound: f64 },

    #[error("invalid config: {}", join_fields(.0))]
    Config(Vec<FieldError>),

    #[error("i/o error: {0}")]
    Io(String),
}

fn join_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
