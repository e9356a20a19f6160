use std::path::{Path, PathBuf};

use anyhow::Context;
use hilrag_core::digest::config_digest;
use hilrag_core::embed::EmbeddingProviderDescriptor;
use hilrag_core::mine::MiningConfig;
use hilrag_core::rag::{HttpClientConfig, RetrievalConfig};
use hilrag_core::train::TrainingConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of raw corpus files for `ingest`.
    pub source: Option<PathBuf>,
    /// Canonical corpus (JSON, JSONL or a directory of them).
    pub corpus: Option<PathBuf>,
    pub triplets: Option<PathBuf>,
    /// Held-out triplets scored after every training epoch.
    pub benchmark: Option<PathBuf>,
    /// Evaluation queries: JSONL of `{"query", "true_doc_id"}`.
    pub queries: Option<PathBuf>,
    pub adapter: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub journals: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientConfig {
    Echo {
        #[serde(default = "yes")]
        with_source: bool,
    },
    Scripted {
        script: PathBuf,
    },
    Http(HttpClientConfig),
}

fn yes() -> bool {
    true
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig::Echo { with_source: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub bind: String,
    pub client: ClientConfig,
    /// Environment variable holding the optional static bearer token.
    pub token_env: String,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            client: ClientConfig::default(),
            token_env: "HILRAG_API_TOKEN".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MineSection {
    #[serde(flatten)]
    pub mining: MiningConfig,
    /// Template-synthesized triplets appended to the mined set.
    pub synthetic: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: u64,
    pub paths: Paths,
    pub embedder: EmbeddingProviderDescriptor,
    pub retrieval: RetrievalConfig,
    pub training: TrainingConfig,
    pub mining: MineSection,
    pub serve: ServeConfig,
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config: CliConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    /// Makes relative paths absolute against `base` (the config file's
    /// directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for field in [
            &mut p.source,
            &mut p.corpus,
            &mut p.triplets,
            &mut p.benchmark,
            &mut p.queries,
            &mut p.adapter,
            &mut p.index,
            &mut p.journals,
            &mut p.reports,
        ] {
            resolve(base, field);
        }
        if let ClientConfig::Scripted { script } = &mut self.serve.client {
            if script.is_relative() {
                *script = base.join(&*script);
            }
        }
    }

    /// Propagates the top-level seed into the sections that use one.
    pub fn apply_seed(&mut self) {
        self.training.seed = self.seed;
        self.mining.mining.seed = self.seed;
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }
}
