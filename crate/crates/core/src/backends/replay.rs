use std::collections::HashMap;
use std::fs;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, PromptRendering};
use crate::domain::{BackendFailure, FailureKind, Question};
use crate::error::ConfigError;

/// One line of a replay fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub validator: String,
    pub question_id: String,
    pub raw_response: String,
}

/// Returns recorded raw responses verbatim.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    validator: String,
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    /// Builds a backend for `validator` from the matching fixture entries;
    /// entries for other validators are ignored.
    pub fn from_entries<I>(validator: &str, entries: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = FixtureEntry>,
    {
        let mut responses = HashMap::new();
        for e in entries.into_iter().filter(|e| e.validator == validator) {
            if let Some(prev) = responses.insert(e.question_id.clone(), e.raw_response.clone()) {
                if prev != e.raw_response {
                    return Err(format!(
                        "conflicting fixture entries for ({validator}, {})",
                        e.question_id
                    ));
                }
            }
        }
        Ok(Self {
            validator: validator.to_string(),
            responses,
        })
    }

    pub fn load(validator: &str, path: &Path) -> Result<Self, ConfigError> {
        let fail = |reason: String| ConfigError::Fixture {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry =
                serde_json::from_str(line).map_err(|e| fail(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Self::from_entries(validator, entries).map_err(fail)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn lookup(&self, question_id: &str) -> Result<String, BackendFailure> {
        self.responses.get(question_id).cloned().ok_or_else(|| {
            BackendFailure::new(
                FailureKind::MissingFixture,
                format!("no recorded response for ({}, {question_id})", self.validator),
            )
        })
    }
}

#[async_trait]
impl Backend for ReplayBackend {
    async fn query(&self, question: &Question, _: &PromptRendering) -> Result<String, BackendFailure> {
        self.lookup(&question.id)
    }
}
