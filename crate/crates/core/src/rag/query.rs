use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{RagError, RetrievalConfig};
use crate::embed::Encoder;
use crate::index::{metadata_tokens, RetrievalHit, VectorIndex};
use crate::text;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedQuery {
    pub raw: String,
    pub tokens: Vec<String>,
    /// Currently only `identifiers`: component/signal names copied verbatim.
    pub extracted_metadata: BTreeMap<String, Vec<String>>,
    pub timestamp: DateTime<Utc>,
}

impl NormalizedQuery {
    pub fn identifiers(&self) -> &[String] {
        self.extracted_metadata
            .get("identifiers")
            .map(Vec::as_slice)
            .unwrap_or_default()
    }
}

/// A word counts as an identifier if it contains `_` (`ECU_12`) or mixes at
/// least two uppercase letters with lowercase ones (`VehSpd`). All-caps
/// acronyms such as `CAN` are ordinary words.
fn is_identifier(word: &str) -> bool {
    let upper = word.chars().filter(|c| c.is_uppercase()).count();
    let lower = word.chars().any(|c| c.is_lowercase());
    word.contains('_') || (upper >= 2 && lower)
}

/// Lowercases and tokenizes `raw`, and extracts identifier-like words.
pub fn preprocess_query(raw: &str) -> NormalizedQuery {
    let mut identifiers: Vec<String> = Vec::new();
    for word in raw.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        let word = word.trim_matches('_');
        if !word.is_empty() && is_identifier(word) && !identifiers.iter().any(|w| w == word) {
            identifiers.push(word.to_string());
        }
    }
    let mut extracted_metadata = BTreeMap::new();
    if !identifiers.is_empty() {
        extracted_metadata.insert("identifiers".to_string(), identifiers);
    }
    NormalizedQuery {
        raw: raw.to_string(),
        tokens: text::tokens(raw),
        extracted_metadata,
        timestamp: Utc::now(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalNotice {
    /// The query embedded to the zero vector; nothing was retrieved.
    QueryDegenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub hits: Vec<RetrievalHit>,
    pub notice: Option<RetrievalNotice>,
}

/// Dense top-k over the raw query, then a stable promotion of hits whose
/// metadata mentions any extracted identifier.
pub fn retrieve(
    query: &NormalizedQuery,
    index: &VectorIndex,
    encoder: &Encoder,
    config: &RetrievalConfig,
) -> Result<RetrievalOutcome, RagError> {
    config.validate()?;
    let qv = encoder.embed(&query.raw)?;
    if qv.is_zero() {
        return Ok(RetrievalOutcome {
            hits: Vec::new(),
            notice: Some(RetrievalNotice::QueryDegenerate),
        });
    }
    let hits = index.search_topk(&qv, config.k, None)?;
    let ids = query.identifiers();
    if ids.is_empty() {
        return Ok(RetrievalOutcome { hits, notice: None });
    }
    let mentions = |hit: &RetrievalHit| {
        index.get(&hit.doc_id).is_some_and(|e| {
            e.metadata
                .values()
                .flat_map(|v| metadata_tokens(v))
                .any(|tok| ids.iter().any(|id| tok.eq_ignore_ascii_case(id)))
        })
    };
    let (mut promoted, rest): (Vec<_>, Vec<_>) = hits.into_iter().partition(mentions);
    promoted.extend(rest);
    Ok(RetrievalOutcome {
        hits: promoted,
        notice: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KnowledgeDocument;
    use serde_json::json;

    #[test]
    fn extracts_identifiers() {
        let q = preprocess_query("Verify CAN signal VehSpd on ECU_12");
        assert_eq!(q.identifiers(), ["VehSpd", "ECU_12"]);
        assert_eq!(
            q.tokens,
            vec!["verify", "can", "signal", "vehspd", "on", "ecu", "12"]
        );

        let q = preprocess_query("wiper speed test");
        assert!(q.extracted_metadata.is_empty());

        let q = preprocess_query("");
        assert!(q.tokens.is_empty());
        assert!(q.extracted_metadata.is_empty());
    }

    fn fixture() -> (VectorIndex, Encoder) {
        let enc = Encoder::hash(64).unwrap();
        let mut docs = vec![
            KnowledgeDocument::new("A", "Wiper", "wiper speed stage one test", "exterior"),
            KnowledgeDocument::new("B", "Wiper fast", "wiper speed stage two", "exterior"),
            KnowledgeDocument::new("C", "Wiper park", "wiper park position", "exterior"),
            KnowledgeDocument::new("D", "Radio", "radio volume", "infotainment"),
        ];
        docs[2]
            .metadata
            .insert("signals".into(), json!(["WiperStat", "VehSpd"]));
        (VectorIndex::build(&docs, &enc).unwrap(), enc)
    }

    #[test]
    fn plain_and_promoted_order() {
        let (idx, enc) = fixture();
        let cfg = RetrievalConfig {
            k: 3,
            ..Default::default()
        };
        let plain = retrieve(&preprocess_query("wiper speed stage"), &idx, &enc, &cfg).unwrap();
        let order: Vec<&str> = plain.hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(order.len(), 3);
        assert_eq!(order[2], "C", "park doc ranks third without identifiers");

        let promoted = retrieve(
            &preprocess_query("wiper speed stage VehSpd"),
            &idx,
            &enc,
            &cfg,
        )
        .unwrap();
        let dense = idx
            .search_topk(&enc.embed("wiper speed stage VehSpd").unwrap(), 3, None)
            .unwrap();
        let mut expected: Vec<&str> = vec!["C"];
        expected.extend(
            dense
                .iter()
                .map(|h| h.doc_id.as_str())
                .filter(|id| *id != "C"),
        );
        let got: Vec<&str> = promoted.hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn degenerate_query() {
        let (idx, enc) = fixture();
        let out = retrieve(
            &preprocess_query(""),
            &idx,
            &enc,
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert!(out.hits.is_empty());
        assert_eq!(out.notice, Some(RetrievalNotice::QueryDegenerate));
    }

    #[test]
    fn empty_index_yields_nothing() {
        let enc = Encoder::hash(64).unwrap();
        let idx = VectorIndex::new(64, "none");
        let out = retrieve(
            &preprocess_query("wiper"),
            &idx,
            &enc,
            &RetrievalConfig::default(),
        )
        .unwrap();
        assert!(out.hits.is_empty());
        assert!(out.notice.is_none());
    }
}
