//! Online pipeline: query preprocessing, retrieval, token-budgeted context
//! assembly, prompt rendering, generation with a bounded tool loop, and
//! source attribution.

mod client;
mod context;
mod generate;
mod pipeline;
mod query;
mod tools;

pub use client::{
    transcript_digest, ChatClient, ChatMessage, ClientError, EchoClient, HttpChatClient,
    HttpClientConfig, Role, ScriptFile, ScriptedClient, UnavailableClient,
};
pub use context::{
    assemble_context, pack_context, render_prompt, template_overhead_tokens, ContextBundle,
    ContextCandidate, ContextEntry, RetrievalConfig, MIN_TRUNCATED_TOKENS, NO_DOCUMENTS_MARKER,
    PROMPT_HEADER, SOURCE_INSTRUCTION,
};
pub use generate::{
    parse_attribution, parse_reply, run_generation, GenerationResult, GenerationStatus, Reply,
};
pub use pipeline::{InferenceTrace, Prepared, RagPipeline};
pub use query::{preprocess_query, retrieve, NormalizedQuery, RetrievalNotice, RetrievalOutcome};
pub use tools::{
    dispatch_tool, ParamKind, ParamSpec, ToolCall, ToolHandler, ToolRegistry, ToolResult, ToolSpec,
    ToolStatus, DEFAULT_TOOL_TIMEOUT,
};

use thiserror::Error;

use crate::embed::EmbedError;
use crate::index::IndexError;

pub const DEFAULT_MAX_TOOL_DEPTH: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RagError {
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("token budget too small: {available} tokens available, {needed} needed for the top document")]
    BudgetTooSmall { available: usize, needed: usize },
    #[error("generation client failed: {0}")]
    ClientFailure(String),
    #[error("tool depth {max_depth} exceeded")]
    ToolDepthExceeded { max_depth: usize },
    #[error("unknown document {0} in retrieval results")]
    UnknownDocument(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl From<ClientError> for RagError {
    fn from(e: ClientError) -> Self {
        RagError::ClientFailure(e.to_string())
    }
}
