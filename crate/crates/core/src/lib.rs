//! Core engine: corpus ingestion, hash/external embeddings with a trainable
//! adapter, triplet mining, contrastive training, an exact cosine index, the
//! retrieval + generation pipeline, and evaluation metrics.

pub mod corpus;
pub mod digest;
pub mod embed;
pub mod eval;
pub mod exec;
pub mod fixtures;
pub mod index;
pub mod mine;
pub mod rag;
pub mod text;
pub mod train;

pub use corpus::{KnowledgeDocument, Provenance, TripletRecord, ValidationReport};
pub use embed::{AdapterModel, Embedder, Embedding, Encoder, HashEmbedder};
pub use index::{SharedIndex, VectorIndex};
