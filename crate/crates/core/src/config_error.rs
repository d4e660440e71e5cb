use thiserror::Error;

/// A configuration value that failed validation, naming the offending field.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("invalid configuration field '{field}': {reason}")]
pub struct ConfigInvalid {
    pub field: String,
    pub reason: String,
}

impl ConfigInvalid {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigInvalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
