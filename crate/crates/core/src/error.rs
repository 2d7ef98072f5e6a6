use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
}

impl ParseError {
    pub(crate) fn malformed(reason: impl Into<String>) -> Self {
        ParseError::MalformedLine(reason.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("cannot split {size} bytes into {parts} non-empty parts")]
    TooManyParts { size: u64, parts: usize },
    #[error("message size and part counts must be positive")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("path {0} has no BEGIN-to-END span")]
    IncompletePath(String),
    #[error("CAG {cag} does not match pattern {signature}")]
    NonIsomorphicMember { cag: String, signature: String },
    #[error("pattern has no complete members")]
    EmptyPattern,
}
