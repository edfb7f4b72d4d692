//! Rule-based mapping of raw validator text to a single option label.
//!
//! The pipeline: trim, case-fold, strip leading noise words and bracket
//! punctuation, then collect standalone single-letter tokens drawn from the
//! allowed label set. Exactly one distinct candidate yields a label; zero or
//! several yield [`NormalizedResult::Unparseable`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{AnswerLabel, Verdict};

/// Leading phrases removed before scanning. Longer phrases first so that
/// "the answer is" wins over "answer".
const NOISE_PHRASES: &[&str] = &["the answer is", "correct answer", "option", "answer", ":"];

const STRIP_PUNCT: &[char] = &['(', ')', '[', ']', '.', ',', '-', ':'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizerConfig {
    /// Responses longer than this many characters are scanned only in
    /// their head and tail windows.
    pub long_response_chars: usize,
    pub window_chars: usize,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        Self {
            long_response_chars: 2000,
            window_chars: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizedResult {
    Label(AnswerLabel),
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizationOutcome {
    pub result: NormalizedResult,
    /// The substring of the raw response that produced the label; empty
    /// when unparseable.
    pub matched_token: String,
}

impl NormalizationOutcome {
    fn unparseable() -> Self {
        Self {
            result: NormalizedResult::Unparseable,
            matched_token: String::new(),
        }
    }

    pub fn label(&self) -> Option<AnswerLabel> {
        match self.result {
            NormalizedResult::Label(l) => Some(l),
            NormalizedResult::Unparseable => None,
        }
    }

    pub fn into_verdict(self) -> Verdict {
        match self.result {
            NormalizedResult::Label(l) => Verdict::Label(l),
            NormalizedResult::Unparseable => Verdict::Unparseable,
        }
    }
}

/// Normalizes with the default long-response bounds.
pub fn normalize(raw: &str, allowed: &BTreeSet<AnswerLabel>) -> NormalizationOutcome {
    normalize_with(raw, allowed, &NormalizerConfig::default())
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '\u{2019}'
}

pub fn normalize_with(
    raw: &str,
    allowed: &BTreeSet<AnswerLabel>,
    config: &NormalizerConfig,
) -> NormalizationOutcome {
    if allowed.is_empty() {
        return NormalizationOutcome::unparseable();
    }

    // Case-folded characters, each tagged with the byte range of the raw
    // character it came from.
    let trimmed = raw.trim();
    let base = raw.len() - raw.trim_start().len();
    let mut folded: Vec<(char, usize, usize)> = Vec::with_capacity(trimmed.len());
    for (offset, c) in trimmed.char_indices() {
        let start = base + offset;
        let end = start + c.len_utf8();
        for lc in c.to_lowercase() {
            folded.push((lc, start, end));
        }
    }

    let start = strip_leading_noise(&folded);
    let end = strip_trailing_punct(&folded, start);
    let body = &folded[start..end];

    let scan_all = body.len() <= config.long_response_chars;
    let in_window = |i: usize| {
        scan_all || i < config.window_chars || i + config.window_chars >= body.len()
    };

    let mut candidates: Vec<(AnswerLabel, usize, usize)> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if !is_word_char(body[i].0) {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < body.len() && is_word_char(body[i].0) {
            i += 1;
        }
        if i - run_start != 1 || !in_window(run_start) {
            continue;
        }
        let (c, raw_start, raw_end) = body[run_start];
        // The raw character itself must be an ASCII letter: 'K' (Kelvin)
        // folds to 'k' but is not an option label.
        let ascii_source = raw_end - raw_start == 1;
        if let Some(label) = AnswerLabel::new(c).filter(|l| ascii_source && allowed.contains(l)) {
            candidates.push((label, raw_start, raw_end));
        }
    }

    let distinct: BTreeSet<AnswerLabel> = candidates.iter().map(|c| c.0).collect();
    if distinct.len() != 1 {
        return NormalizationOutcome::unparseable();
    }
    let (label, s, e) = candidates[0];
    NormalizationOutcome {
        result: NormalizedResult::Label(label),
        matched_token: raw[s..e].to_string(),
    }
}

fn starts_with_phrase(chars: &[(char, usize, usize)], phrase: &str) -> bool {
    let n = phrase.chars().count();
    if chars.len() < n {
        return false;
    }
    if !chars.iter().zip(phrase.chars()).all(|(a, b)| a.0 == b) {
        return false;
    }
    // Word phrases must end at a word boundary ("optional" is not "option").
    let last_is_word = phrase.chars().last().is_some_and(is_word_char);
    !last_is_word || chars.get(n).is_none_or(|c| !is_word_char(c.0))
}

fn strip_leading_noise(chars: &[(char, usize, usize)]) -> usize {
    let mut pos = 0;
    loop {
        let before = pos;
        while pos < chars.len() && (chars[pos].0.is_whitespace() || STRIP_PUNCT.contains(&chars[pos].0)) {
            pos += 1;
        }
        if let Some(p) = NOISE_PHRASES
            .iter()
            .find(|p| starts_with_phrase(&chars[pos..], p))
        {
            pos += p.chars().count();
        }
        if pos == before {
            return pos;
        }
    }
}

fn strip_trailing_punct(chars: &[(char, usize, usize)], start: usize) -> usize {
    let mut end = chars.len();
    while end > start && (chars[end - 1].0.is_whitespace() || STRIP_PUNCT.contains(&chars[end - 1].0)) {
        end -= 1;
    }
    end
}
