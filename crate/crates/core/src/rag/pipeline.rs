use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::client::ChatClient;
use super::context::{assemble_context, render_prompt, ContextBundle, RetrievalConfig};
use super::generate::{run_generation, GenerationResult};
use super::query::{preprocess_query, retrieve, NormalizedQuery, RetrievalNotice};
use super::tools::ToolRegistry;
use super::{RagError, DEFAULT_MAX_TOOL_DEPTH};
use crate::corpus::KnowledgeDocument;
use crate::digest::sha256_hex;
use crate::embed::Encoder;
use crate::index::{RetrievalHit, SharedIndex};

/// Everything one inference produced. Generation failures are kept inside the
/// trace so callers can record them before reporting.
#[derive(Debug, Clone, Serialize)]
pub struct InferenceTrace {
    pub query: NormalizedQuery,
    pub hits: Vec<RetrievalHit>,
    pub notice: Option<RetrievalNotice>,
    pub bundle: ContextBundle,
    pub prompt: String,
    pub prompt_digest: String,
    #[serde(skip)]
    pub generation: Result<GenerationResult, RagError>,
}

/// Immutable wiring of index, encoder, documents and tools. Cheap to clone
/// and safe to share across concurrent inferences.
#[derive(Debug, Clone)]
pub struct RagPipeline {
    index: SharedIndex,
    encoder: Encoder,
    documents: Arc<BTreeMap<String, KnowledgeDocument>>,
    config: RetrievalConfig,
    registry: Arc<ToolRegistry>,
    max_depth: usize,
}

/// Normalized query, ranked hits, retrieval notice, packed bundle and the
/// rendered prompt.
pub type Prepared = (
    NormalizedQuery,
    Vec<RetrievalHit>,
    Option<RetrievalNotice>,
    ContextBundle,
    String,
);

impl RagPipeline {
    pub fn new(
        index: SharedIndex,
        encoder: Encoder,
        documents: impl IntoIterator<Item = KnowledgeDocument>,
        config: RetrievalConfig,
    ) -> Result<Self, RagError> {
        config.validate()?;
        let documents: BTreeMap<String, KnowledgeDocument> =
            documents.into_iter().map(|d| (d.id.clone(), d)).collect();
        let registry = Arc::new(ToolRegistry::fixture(
            &documents.values().cloned().collect::<Vec<_>>(),
        ));
        Ok(Self {
            index,
            encoder,
            documents: Arc::new(documents),
            config,
            registry,
            max_depth: DEFAULT_MAX_TOOL_DEPTH,
        })
    }

    pub fn with_registry(mut self, registry: ToolRegistry) -> Self {
        self.registry = Arc::new(registry);
        self
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn index(&self) -> &SharedIndex {
        &self.index
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn document(&self, id: &str) -> Option<&KnowledgeDocument> {
        self.documents.get(id)
    }

    /// Retrieval, context assembly and prompt rendering, without generation.
    pub fn prepare(&self, raw: &str, k_override: Option<usize>) -> Result<Prepared, RagError> {
        let config = RetrievalConfig {
            k: k_override.unwrap_or(self.config.k),
            ..self.config.clone()
        };
        let query = preprocess_query(raw);
        let index = self.index.snapshot();
        let outcome = retrieve(&query, &index, &self.encoder, &config)?;
        let with_docs = outcome
            .hits
            .iter()
            .map(|h| {
                self.documents
                    .get(&h.doc_id)
                    .map(|d| (h.clone(), d))
                    .ok_or_else(|| RagError::UnknownDocument(h.doc_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bundle = assemble_context(&with_docs, &config)?;
        let prompt = render_prompt(&bundle, raw);
        Ok((query, outcome.hits, outcome.notice, bundle, prompt))
    }

    pub fn answer(
        &self,
        raw: &str,
        k_override: Option<usize>,
        client: &dyn ChatClient,
    ) -> Result<InferenceTrace, RagError> {
        let (query, hits, notice, bundle, prompt) = self.prepare(raw, k_override)?;
        let generation = run_generation(client, &prompt, &self.registry, self.max_depth);
        Ok(InferenceTrace {
            query,
            hits,
            notice,
            bundle,
            prompt_digest: sha256_hex(prompt.as_bytes()),
            prompt,
            generation,
        })
    }
}
