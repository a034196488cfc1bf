//! Prompt templates and the parsers for the structured responses they elicit.
//!
//! Templates are UTF-8 resource files with `{{name}}` placeholders. A built-in
//! copy of every template is embedded in the binary; `TemplateStore::from_dir`
//! loads overrides from disk so prompt edits do not require a rebuild.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

pub mod parse;

pub use parse::{
    parse_boxed_score, parse_generated_problem, parse_pairwise_json, parse_reward_json,
    CriterionScore, GeneratedProblem, PairwiseVerdict, ParseError, RewardScores,
};

/// Identifies one of the pipeline's prompt templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TemplateId {
    /// Rewrite a terse seed answer into a detailed step-by-step solution.
    Detail,
    /// Extract knowledge points and problem-solving skills from a solution.
    Extract,
    /// Generate a new problem from merged knowledge points and skills.
    Generate,
    /// Grade a candidate answer, returning a boxed credibility score.
    PeerReview,
    /// Induce a prescriptive answer-style guide from student Q&A pairs.
    SummarizeStyle,
    /// Rewrite a solution to follow the induced style guide.
    Align,
    /// Score an answer on the four reward criteria, returning JSON.
    Reward,
    /// Compare two answers head to head, returning JSON scores.
    Pairwise,
    /// Judge directional entailment between two Q&A items (decontamination).
    Entailment,
    /// Wrap a response in an instruction-guessing preamble (reflection scoring).
    GuessInstruction,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Detail,
        TemplateId::Extract,
        TemplateId::Generate,
        TemplateId::PeerReview,
        TemplateId::SummarizeStyle,
        TemplateId::Align,
        TemplateId::Reward,
        TemplateId::Pairwise,
        TemplateId::Entailment,
        TemplateId::GuessInstruction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Detail => "detail",
            TemplateId::Extract => "extract",
            TemplateId::Generate => "generate",
            TemplateId::PeerReview => "peer_review",
            TemplateId::SummarizeStyle => "summarize_style",
            TemplateId::Align => "align",
            TemplateId::Reward => "reward",
            TemplateId::Pairwise => "pairwise",
            TemplateId::Entailment => "entailment",
            TemplateId::GuessInstruction => "guess_instruction",
        }
    }

    pub fn from_str_id(s: &str) -> Option<TemplateId> {
        Self::ALL.iter().copied().find(|id| id.as_str() == s)
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::Detail => include_str!("templates/detail.txt"),
            TemplateId::Extract => include_str!("templates/extract.txt"),
            TemplateId::Generate => include_str!("templates/generate.txt"),
            TemplateId::PeerReview => include_str!("templates/peer_review.txt"),
            TemplateId::SummarizeStyle => include_str!("templates/summarize_style.txt"),
            TemplateId::Align => include_str!("templates/align.txt"),
            TemplateId::Reward => include_str!("templates/reward.txt"),
            TemplateId::Pairwise => include_str!("templates/pairwise.txt"),
            TemplateId::Entailment => include_str!("templates/entailment.txt"),
            TemplateId::GuessInstruction => include_str!("templates/guess_instruction.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A prompt template with its placeholder inventory.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: TemplateId,
    pub body: String,
    pub required_placeholders: BTreeSet<String>,
}

impl Template {
    fn new(id: TemplateId, body: String) -> Self {
        let required_placeholders = scan_placeholders(&body);
        Template {
            id,
            body,
            required_placeholders,
        }
    }
}

/// Errors from template lookup and rendering.
#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` is missing a binding for placeholder `{placeholder}`")]
    MissingPlaceholder {
        template: TemplateId,
        placeholder: String,
    },
    #[error("failed to read template file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Holds every template for a run; rendering is pure and thread-safe.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<TemplateId, Template>,
}

impl TemplateStore {
    /// The embedded template set shipped with the binary.
    pub fn builtin() -> Self {
        let templates = TemplateId::ALL
            .iter()
            .map(|&id| (id, Template::new(id, id.builtin_body().to_string())))
            .collect();
        TemplateStore { templates }
    }

    /// Load `<id>.txt` overrides from a directory; ids without a file keep
    /// the built-in body.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut store = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{}.txt", id.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                store.templates.insert(id, Template::new(id, body));
            }
        }
        Ok(store)
    }

    pub fn template(&self, id: TemplateId) -> &Template {
        // Every id is populated by construction.
        &self.templates[&id]
    }

    /// Substitute bindings into the template body. Text outside placeholder
    /// spans is passed through byte for byte.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
    ) -> Result<String, PromptError> {
        let template = self.template(id);
        for name in &template.required_placeholders {
            if !bindings.contains_key(name) {
                return Err(PromptError::MissingPlaceholder {
                    template: id,
                    placeholder: name.clone(),
                });
            }
        }
        Ok(substitute(&template.body, bindings))
    }
}

/// Convenience for building binding maps inline.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn scan_placeholders(body: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'{' && bytes[i + 1] == b'{' {
            if let Some(end) = body[i + 2..].find("}}") {
                let name = &body[i + 2..i + 2 + end];
                if is_placeholder_name(name) {
                    names.insert(name.to_string());
                    i += 2 + end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    names
}

fn is_placeholder_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn substitute(body: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(body.len());
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        if let Some(len) = rest[start + 2..].find("}}") {
            let name = &rest[start + 2..start + 2 + len];
            if let Some(value) = bindings.get(name) {
                out.push_str(&rest[..start]);
                out.push_str(value);
                rest = &rest[start + 2 + len + 2..];
                continue;
            }
        }
        // Not a bound placeholder; emit up to and including the brace pair.
        out.push_str(&rest[..start + 2]);
        rest = &rest[start + 2..];
    }
    out.push_str(rest);
    out
}
