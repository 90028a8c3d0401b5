//! Prompt templates, placeholder substitution, and parsing of the
//! structured model outputs the templates mandate.
//!
//! The five templates ship as embedded text assets and can be overridden
//! per template by dropping a file with the same name into a prompts
//! directory (`decompose.txt`, `intermediate_answer.txt`,
//! `final_answer.txt`, `risk_reconstruct.txt`, `verifier.txt`).

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::domain::Document;

/// Exact sentence the answer prompt mandates when no evidence is usable.
pub const NO_EVIDENCE_SENTINEL: &str = "No directly relevant facts found.";

/// Placeholder names that may appear in template bodies, brace-delimited.
pub const PLACEHOLDERS: [&str; 6] = [
    "original question",
    "reasoning state",
    "retrieved documents",
    "sub-question",
    "supporting facts",
    "sub-questions",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateName {
    Decompose,
    IntermediateAnswer,
    FinalAnswer,
    RiskReconstruct,
    Verifier,
}

impl TemplateName {
    pub const ALL: [TemplateName; 5] = [
        TemplateName::Decompose,
        TemplateName::IntermediateAnswer,
        TemplateName::FinalAnswer,
        TemplateName::RiskReconstruct,
        TemplateName::Verifier,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::Decompose => "decompose.txt",
            TemplateName::IntermediateAnswer => "intermediate_answer.txt",
            TemplateName::FinalAnswer => "final_answer.txt",
            TemplateName::RiskReconstruct => "risk_reconstruct.txt",
            TemplateName::Verifier => "verifier.txt",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_name().trim_end_matches(".txt"))
    }
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template} has no binding for placeholder \"{placeholder}\"")]
    MissingBinding {
        template: String,
        placeholder: String,
    },
    #[error("failed to read prompt override {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no \"Sub-question:\" marker in model output")]
    NoSubQuestion,
    #[error("no numeric token in verifier output")]
    NoNumericToken,
}

/// Thought/sub-question pair extracted from a decomposition completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub thought: String,
    pub sub_question: String,
}

/// The five templates, resolved once at startup.
#[derive(Debug, Clone)]
pub struct PromptSet {
    decompose: String,
    intermediate_answer: String,
    final_answer: String,
    risk_reconstruct: String,
    verifier: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        Self {
            decompose: include_str!("../assets/prompts/decompose.txt").to_owned(),
            intermediate_answer: include_str!("../assets/prompts/intermediate_answer.txt")
                .to_owned(),
            final_answer: include_str!("../assets/prompts/final_answer.txt").to_owned(),
            risk_reconstruct: include_str!("../assets/prompts/risk_reconstruct.txt").to_owned(),
            verifier: include_str!("../assets/prompts/verifier.txt").to_owned(),
        }
    }

    /// Builtin templates with per-file overrides from `dir`. A template
    /// without an override file keeps the builtin text.
    pub fn with_overrides(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                *set.template_mut(name) = text;
            }
        }
        Ok(set)
    }

    pub fn template(&self, name: TemplateName) -> &str {
        match name {
            TemplateName::Decompose => &self.decompose,
            TemplateName::IntermediateAnswer => &self.intermediate_answer,
            TemplateName::FinalAnswer => &self.final_answer,
            TemplateName::RiskReconstruct => &self.risk_reconstruct,
            TemplateName::Verifier => &self.verifier,
        }
    }

    fn template_mut(&mut self, name: TemplateName) -> &mut String {
        match name {
            TemplateName::Decompose => &mut self.decompose,
            TemplateName::IntermediateAnswer => &mut self.intermediate_answer,
            TemplateName::FinalAnswer => &mut self.final_answer,
            TemplateName::RiskReconstruct => &mut self.risk_reconstruct,
            TemplateName::Verifier => &mut self.verifier,
        }
    }

    /// Substitutes `bindings` into the named template. Every placeholder
    /// present in the template body must be bound; none survives in the
    /// rendered output. Extra bindings are ignored.
    pub fn render(
        &self,
        name: TemplateName,
        bindings: &[(&str, &str)],
    ) -> Result<String, TemplateError> {
        let mut out = self.template(name).to_owned();
        for placeholder in PLACEHOLDERS {
            let token = format!("{{{placeholder}}}");
            if !out.contains(&token) {
                continue;
            }
            let value = bindings
                .iter()
                .find(|(k, _)| *k == placeholder)
                .map(|(_, v)| *v)
                .ok_or_else(|| TemplateError::MissingBinding {
                    template: name.to_string(),
                    placeholder: placeholder.to_owned(),
                })?;
            out = out.replace(&token, value);
        }
        Ok(out)
    }
}

/// Renders documents as the numbered list embedded into prompts:
/// one `i. <title>: <text>` line per document.
pub fn render_documents(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("{}. {}: {}", i + 1, d.title, d.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extracts the thought and sub-question from a decomposition completion.
/// When the model restates the format, the last "Sub-question:" marker is
/// the answer position.
pub fn parse_decomposition(raw: &str) -> Result<Decomposition, ParseError> {
    const MARKER: &str = "Sub-question:";
    let marker_at = raw.rfind(MARKER).ok_or(ParseError::NoSubQuestion)?;
    let sub_question = raw[marker_at + MARKER.len()..].trim().to_owned();
    let thought = match raw.find("Thought:") {
        Some(at) => {
            let start = at + "Thought:".len();
            let end = if marker_at > start {
                marker_at
            } else {
                raw.len()
            };
            raw[start..end].trim().to_owned()
        }
        None => String::new(),
    };
    if sub_question.is_empty() {
        return Err(ParseError::NoSubQuestion);
    }
    Ok(Decomposition {
        thought,
        sub_question,
    })
}

/// Reads the first integer or decimal token, clamps it to [0, 10], and
/// rescales to [0, 1].
pub fn parse_verifier_score(raw: &str) -> Result<f64, ParseError> {
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len()
                && bytes[i] == b'.'
                && i + 1 < bytes.len()
                && bytes[i + 1].is_ascii_digit()
            {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let token: f64 = raw[start..i].parse().expect("digit run parses as f64");
            return Ok(token.clamp(0.0, 10.0) / 10.0);
        }
        i += 1;
    }
    Err(ParseError::NoNumericToken)
}
