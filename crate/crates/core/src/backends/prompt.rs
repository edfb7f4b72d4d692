use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Question;

pub const SYSTEM_TEXT: &str = "You are an independent validator of multiple-choice questions. \
Assess the question using your own knowledge.";

pub const ANSWER_INSTRUCTION: &str = "Respond with only the single letter of the correct option.";

/// The exact text sent to every validator for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRendering {
    pub system_text: String,
    pub user_text: String,
}

impl PromptRendering {
    /// Hex SHA-256 over both message texts.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system_text.as_bytes());
        h.update([0u8]);
        h.update(self.user_text.as_bytes());
        hex::encode(h.finalize())
    }
}

pub fn render_prompt(q: &Question) -> PromptRendering {
    let mut blocks: Vec<String> = vec![q.stem.trim().to_string()];
    if !q.statements.is_empty() {
        let numbered: Vec<String> = q
            .statements
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {}", i + 1, s.trim()))
            .collect();
        blocks.push(numbered.join("\n"));
    }
    if let Some(line) = q.question_line.as_deref().map(str::trim).filter(|l| !l.is_empty()) {
        blocks.push(line.to_string());
    }
    let options: Vec<String> = q
        .options
        .iter()
        .map(|o| format!("({}) {}", o.label, o.text.trim()))
        .collect();
    blocks.push(options.join("\n"));
    blocks.push(ANSWER_INSTRUCTION.to_string());

    PromptRendering {
        system_text: SYSTEM_TEXT.to_string(),
        user_text: blocks.join("\n\n"),
    }
}
