//! Scripted responses for deterministic reproduction of dialogues.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot parse replay script {path}: {reason}")]
    ScriptParse { path: PathBuf, reason: String },
    #[error("replay script exhausted: step {step} requested, {len} responses available")]
    Exhausted { step: usize, len: usize },
}

/// An ordered list of canned responses (a JSON array of strings on disk).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplayScript {
    pub responses: Vec<String>,
}

impl ReplayScript {
    pub fn new(responses: Vec<String>) -> Self {
        ReplayScript { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn next_response(&self, step: usize) -> Result<&str, ReplayError> {
        self.responses
            .get(step)
            .map(String::as_str)
            .ok_or(ReplayError::Exhausted {
                step,
                len: self.responses.len(),
            })
    }
}

pub fn load_replay_script(path: impl AsRef<Path>) -> Result<ReplayScript, ReplayError> {
    let path = path.as_ref();
    let fail = |reason: String| ReplayError::ScriptParse {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| fail(e.to_string()))?;
    let text = String::from_utf8(bytes).map_err(|e| fail(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| fail(e.to_string()))
}
