use serde::{Deserialize, Serialize};

use super::RagError;
use crate::corpus::KnowledgeDocument;
use crate::index::RetrievalHit;
use crate::text::estimate_tokens;

pub const PROMPT_HEADER: &str =
    "You are a specialized assistant supporting automotive HIL testing. \
Using only the following provided information, accurately answer the engineer's query:";
pub const SOURCE_INSTRUCTION: &str =
    "End your answer with a final line of the form \"SOURCE: <doc_id>\" naming the document the answer is derived from.";
pub const NO_DOCUMENTS_MARKER: &str = "No documents retrieved.";
const SEPARATOR: &str = "---";
const QUERY_PREFIX: &str = "Engineer\u{2019}s Query: ";
const RESPONSE_LINE: &str = "Response:";

/// A truncated document keeps at least this many estimated tokens.
pub const MIN_TRUNCATED_TOKENS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub token_budget: usize,
    pub reserved_response_tokens: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            token_budget: 8192,
            reserved_response_tokens: 1024,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RagError> {
        if self.k < 1 {
            return Err(RagError::InvalidConfig("k must be at least 1".into()));
        }
        if self.reserved_response_tokens >= self.token_budget {
            return Err(RagError::InvalidConfig(format!(
                "reserved response tokens {} must be below the budget {}",
                self.reserved_response_tokens, self.token_budget
            )));
        }
        Ok(())
    }

    /// Tokens left for documents: budget − reserved − template overhead.
    pub fn available_tokens(&self) -> usize {
        self.token_budget
            .saturating_sub(self.reserved_response_tokens)
            .saturating_sub(template_overhead_tokens())
    }
}

/// Estimated tokens of the fixed prompt text (header, separators, query
/// prefix, attribution instruction, response line).
pub fn template_overhead_tokens() -> usize {
    let fixed = [
        PROMPT_HEADER,
        SEPARATOR,
        SEPARATOR,
        QUERY_PREFIX,
        SOURCE_INSTRUCTION,
        RESPONSE_LINE,
    ];
    estimate_tokens(&fixed.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub doc_id: String,
    pub title: String,
    pub included_text: String,
    pub est_tokens: usize,
    pub truncated: bool,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub entries: Vec<ContextEntry>,
    pub total_est_tokens: usize,
    pub available_tokens: usize,
}

/// One ranked document offered to [`pack_context`].
#[derive(Debug, Clone, PartialEq)]
pub struct ContextCandidate {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
}

/// Greedy priority packing. Candidates are taken in the given order while
/// they fit; the first one that does not fit is cut to the longest prefix
/// that does (only if that leaves at least [`MIN_TRUNCATED_TOKENS`]), and
/// everything after it is dropped.
pub fn pack_context(
    candidates: &[ContextCandidate],
    available: usize,
) -> Result<ContextBundle, RagError> {
    let mut bundle = ContextBundle {
        available_tokens: available,
        ..Default::default()
    };
    for (rank, c) in candidates.iter().enumerate() {
        let est = estimate_tokens(&c.text);
        let remaining = available - bundle.total_est_tokens;
        if est <= remaining {
            bundle.total_est_tokens += est;
            bundle.entries.push(ContextEntry {
                doc_id: c.doc_id.clone(),
                title: c.title.clone(),
                included_text: c.text.clone(),
                est_tokens: est,
                truncated: false,
                score: c.score,
            });
            continue;
        }
        if remaining >= MIN_TRUNCATED_TOKENS {
            let prefix: String = c.text.chars().take(remaining * 4).collect();
            let est = estimate_tokens(&prefix);
            bundle.total_est_tokens += est;
            bundle.entries.push(ContextEntry {
                doc_id: c.doc_id.clone(),
                title: c.title.clone(),
                included_text: prefix,
                est_tokens: est,
                truncated: true,
                score: c.score,
            });
        } else if rank == 0 {
            return Err(RagError::BudgetTooSmall {
                available,
                needed: MIN_TRUNCATED_TOKENS.min(est),
            });
        }
        break;
    }
    Ok(bundle)
}

/// Packs ranked hits into the budget left by `config`. Each document
/// contributes its body text; its title goes into the block header.
pub fn assemble_context(
    hits: &[(RetrievalHit, &KnowledgeDocument)],
    config: &RetrievalConfig,
) -> Result<ContextBundle, RagError> {
    config.validate()?;
    let candidates: Vec<ContextCandidate> = hits
        .iter()
        .map(|(h, d)| ContextCandidate {
            doc_id: h.doc_id.clone(),
            title: d.title.clone(),
            text: d.body_text(),
            score: h.score,
        })
        .collect();
    pack_context(&candidates, config.available_tokens())
}

/// Renders the assistant prompt: fixed header, one `[doc_id] title` block per
/// bundle entry (or the no-documents marker), the question, and the
/// attribution instruction.
pub fn render_prompt(bundle: &ContextBundle, question: &str) -> String {
    let mut out = String::new();
    out.push_str(PROMPT_HEADER);
    out.push('\n');
    out.push_str(SEPARATOR);
    out.push('\n');
    if bundle.entries.is_empty() {
        out.push_str(NO_DOCUMENTS_MARKER);
        out.push('\n');
    }
    for (i, e) in bundle.entries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(
            "[{}] {}\n{}\n",
            e.doc_id, e.title, e.included_text
        ));
    }
    out.push_str(SEPARATOR);
    out.push('\n');
    out.push_str(&format!("{QUERY_PREFIX}\"{question}\"\n"));
    out.push_str(SOURCE_INSTRUCTION);
    out.push('\n');
    out.push_str(RESPONSE_LINE);
    out
}
