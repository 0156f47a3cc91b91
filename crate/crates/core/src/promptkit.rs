//! Prompt rendering and response parsing.
//!
//! Templates use `{name}` placeholders. Substitution is a single left-to-right
//! pass: substituted values are never rescanned, so braces inside a sentence
//! survive verbatim. Values are collapsed to one line before embedding.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::SdohCode;
use crate::text::single_line;

pub const CLASSIFICATION: &str = "classification";
pub const GENERATION: &str = "generation";
pub const NO_KEYWORD: &str = "no_keyword";
pub const VERIFICATION: &str = "verification";

/// Reconstruction of the classification prompt: the code's keyword phrase and
/// the sentence are the only variable fields, and the answer format is forced
/// to a leading Yes/No.
pub const DEFAULT_CLASSIFICATION: &str = "You are a medical coding assistant. Determine whether the following sentence from a patient's medical note contains evidence of {sdoh_keyword}. Answer with 'Yes' or 'No' on the first line, then a one-sentence justification.\nSentence: {sentence}";

pub const DEFAULT_GENERATION: &str = "You are helping build a dataset of sentences from clinical notes. Below are example sentences from patients' medical notes that contain evidence of {sdoh_keyword}.\n{examples}\nWrite {n_requested} new, distinct sentences in the style of a clinical note that each contain evidence of the same social determinant. Output exactly one sentence per line with no numbering and no other text.";

pub const DEFAULT_NO_KEYWORD: &str = "Do not use the words \"{sdoh_keyword}\" in any sentence; convey the evidence indirectly.";

pub const DEFAULT_VERIFICATION: &str = "You are a medical coding assistant. Does the following sentence contain evidence of {sdoh_keyword}? Answer with 'Yes' or 'No' on the first line.\nSentence: {candidate}";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("template {id:?}: placeholder {{{placeholder}}} must appear exactly once, found {count}")]
    Placeholder {
        id: String,
        placeholder: &'static str,
        count: usize,
    },
    #[error("template file line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("generation prompt needs at least one example sentence")]
    NoExamples,
    #[error("n_requested must be at least 1")]
    ZeroRequested,
}

fn required_placeholders(id: &str) -> &'static [&'static str] {
    match id {
        CLASSIFICATION => &["sdoh_keyword", "sentence"],
        GENERATION => &["sdoh_keyword", "examples", "n_requested"],
        NO_KEYWORD => &["sdoh_keyword"],
        VERIFICATION => &["sdoh_keyword", "candidate"],
        _ => &[],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, body: impl Into<String>) -> Result<Self, PromptError> {
        let t = PromptTemplate {
            template_id: template_id.into(),
            body: body.into(),
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), PromptError> {
        for &p in required_placeholders(&self.template_id) {
            let count = self.body.matches(&format!("{{{p}}}")).count();
            if count != 1 {
                return Err(PromptError::Placeholder {
                    id: self.template_id.clone(),
                    placeholder: p,
                    count,
                });
            }
        }
        Ok(())
    }

    /// Substitute known placeholders in a single pass. Unknown `{...}` text is kept.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.body.len() + 128);
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let hit = after.find('}').and_then(|close| {
                let name = &after[..close];
                values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| (close, *v))
            });
            match hit {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// The set of templates in use. Missing ids fall back to built-in defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptKit {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptKit {
    fn default() -> Self {
        let mut templates = BTreeMap::new();
        for (id, body) in [
            (CLASSIFICATION, DEFAULT_CLASSIFICATION),
            (GENERATION, DEFAULT_GENERATION),
            (NO_KEYWORD, DEFAULT_NO_KEYWORD),
            (VERIFICATION, DEFAULT_VERIFICATION),
        ] {
            templates.insert(
                id.to_string(),
                PromptTemplate::new(id, body).expect("built-in templates are valid"),
            );
        }
        PromptKit { templates }
    }
}

impl PromptKit {
    /// Parse a template file: each block starts with a `[template <id>]` line
    /// and its body runs to the next header. Trailing blank lines of a body are
    /// dropped. Ids not present in the file keep their defaults.
    pub fn from_template_file(source: &str) -> Result<Self, PromptError> {
        let mut kit = PromptKit::default();
        let mut current: Option<(String, Vec<&str>)> = None;

        let flush = |cur: Option<(String, Vec<&str>)>, kit: &mut PromptKit| -> Result<(), PromptError> {
            if let Some((id, lines)) = cur {
                let body = lines.join("\n").trim_end().to_string();
                kit.templates
                    .insert(id.clone(), PromptTemplate::new(id, body)?);
            }
            Ok(())
        };

        for (i, line) in source.lines().enumerate() {
            let trimmed = line.trim();
            if let Some(inner) = trimmed.strip_prefix("[template").and_then(|r| r.strip_suffix(']')) {
                let id = inner.trim();
                if id.is_empty() || id.contains(char::is_whitespace) {
                    return Err(PromptError::Syntax {
                        line: i + 1,
                        message: format!("bad template header {trimmed:?}"),
                    });
                }
                flush(current.take(), &mut kit)?;
                current = Some((id.to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Err(PromptError::Syntax {
                    line: i + 1,
                    message: "text before the first [template <id>] header".into(),
                });
            }
        }
        flush(current, &mut kit)?;
        Ok(kit)
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.get(id)
    }

    fn template(&self, id: &str) -> &PromptTemplate {
        self.templates.get(id).expect("core templates always present")
    }

    pub fn render_classification_prompt(&self, code: &SdohCode, sentence_text: &str) -> String {
        let sentence = single_line(sentence_text);
        self.template(CLASSIFICATION).render(&[
            ("sdoh_keyword", &code.keyword_phrase),
            ("sentence", &sentence),
        ])
    }

    pub fn render_generation_prompt(
        &self,
        code: &SdohCode,
        examples: &[String],
        forbid_keyword: bool,
        n_requested: usize,
    ) -> Result<String, PromptError> {
        if examples.is_empty() {
            return Err(PromptError::NoExamples);
        }
        if n_requested == 0 {
            return Err(PromptError::ZeroRequested);
        }
        let listed = examples
            .iter()
            .enumerate()
            .map(|(i, e)| format!("{}. {}", i + 1, single_line(e)))
            .collect::<Vec<_>>()
            .join("\n");
        let n = n_requested.to_string();
        let mut prompt = self.template(GENERATION).render(&[
            ("sdoh_keyword", &code.keyword_phrase),
            ("examples", &listed),
            ("n_requested", &n),
        ]);
        if forbid_keyword {
            prompt.push('\n');
            prompt.push_str(
                &self
                    .template(NO_KEYWORD)
                    .render(&[("sdoh_keyword", &code.keyword_phrase)]),
            );
        }
        Ok(prompt)
    }

    pub fn render_verification_prompt(&self, code: &SdohCode, candidate: &str) -> String {
        let candidate = single_line(candidate);
        self.template(VERIFICATION).render(&[
            ("sdoh_keyword", &code.keyword_phrase),
            ("candidate", &candidate),
        ])
    }
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Indeterminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Positive => "positive",
            Verdict::Negative => "negative",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLabel {
    pub verdict: Verdict,
    pub raw_response: String,
}

static YES_NO: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());

/// Interpret a model's yes/no answer.
///
/// A first line whose first word is "yes" or "no" decides. Otherwise the
/// whole response is scanned for standalone "yes"/"no" words and exactly one
/// of the two must occur; anything else is indeterminate.
pub fn parse_label(response: &str) -> ParsedLabel {
    let verdict = first_line_verdict(response).unwrap_or_else(|| {
        let mut yes = false;
        let mut no = false;
        for m in YES_NO.find_iter(response) {
            if m.as_str().eq_ignore_ascii_case("yes") {
                yes = true;
            } else {
                no = true;
            }
        }
        match (yes, no) {
            (true, false) => Verdict::Positive,
            (false, true) => Verdict::Negative,
            _ => Verdict::Indeterminate,
        }
    });
    ParsedLabel {
        verdict,
        raw_response: response.to_string(),
    }
}

fn first_line_verdict(response: &str) -> Option<Verdict> {
    let line = response.trim().lines().next()?;
    let word: String = line
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect();
    if word.eq_ignore_ascii_case("yes") {
        Some(Verdict::Positive)
    } else if word.eq_ignore_ascii_case("no") {
        Some(Verdict::Negative)
    } else {
        None
    }
}
