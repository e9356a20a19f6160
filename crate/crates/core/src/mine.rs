//! Triplet construction: heuristic positive pairs, hard negatives drawn
//! from a similarity rank band, and template-based synthetic triplets.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{KnowledgeDocument, Provenance, TripletRecord};
use crate::embed::{cosine, fnv1a64, EmbedError, Encoder};
use crate::exec;
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MineError {
    #[error("invalid mining config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("triplet generator failed: {0}")]
    GeneratorFailure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub jaccard_threshold: f64,
    pub shared_key_fields: Vec<String>,
    /// Inclusive 1-based rank band among non-positive candidates.
    pub negative_rank_band: (usize, usize),
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            jaccard_threshold: 0.3,
            shared_key_fields: vec!["module_id".into(), "signals".into()],
            negative_rank_band: (5, 25),
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MineError> {
        let (lo, hi) = self.negative_rank_band;
        if lo < 1 || lo > hi {
            return Err(MineError::InvalidConfig(format!(
                "rank band ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            )));
        }
        if !(0.0..=1.0).contains(&self.jaccard_threshold) {
            return Err(MineError::InvalidConfig(format!(
                "jaccard threshold {} outside [0, 1]",
                self.jaccard_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    SharedKey,
    TokenOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub anchor_id: String,
    pub candidate_id: String,
    pub evidence: Evidence,
    /// Token-set Jaccard of the two requirement texts.
    pub score: f64,
}

/// Emits each unordered pair once, with `anchor_id < candidate_id`, when the
/// documents share a value in any key field or their requirement token sets
/// reach the Jaccard threshold. Output is sorted by (anchor_id, candidate_id).
pub fn mine_positive_pairs(
    corpus: &[KnowledgeDocument],
    config: &MiningConfig,
) -> Vec<CandidatePair> {
    let mut docs: Vec<&KnowledgeDocument> = corpus.iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let tokens: Vec<BTreeSet<String>> = docs
        .iter()
        .map(|d| text::token_set(&d.requirements))
        .collect();
    let keys: Vec<Vec<BTreeSet<String>>> = docs
        .iter()
        .map(|d| {
            config
                .shared_key_fields
                .iter()
                .map(|f| d.metadata_values(f))
                .collect()
        })
        .collect();

    exec::map_range(docs.len(), |i| {
        let mut out = Vec::new();
        for j in i + 1..docs.len() {
            if docs[i].id == docs[j].id {
                continue;
            }
            let shared = keys[i].iter().zip(&keys[j]).any(|(a, b)| !a.is_disjoint(b));
            let score = text::jaccard(&tokens[i], &tokens[j]);
            let evidence = if shared {
                Evidence::SharedKey
            } else if score >= config.jaccard_threshold {
                Evidence::TokenOverlap
            } else {
                continue;
            };
            out.push(CandidatePair {
                anchor_id: docs[i].id.clone(),
                candidate_id: docs[j].id.clone(),
                evidence,
                score,
            });
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Turns mined pairs into anchor/positive triplets without negatives.
pub fn pairs_to_triplets(
    pairs: &[CandidatePair],
    corpus: &[KnowledgeDocument],
) -> Vec<TripletRecord> {
    let by_id: HashMap<&str, &KnowledgeDocument> =
        corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    pairs
        .iter()
        .filter_map(|p| {
            let a = by_id.get(p.anchor_id.as_str())?;
            let c = by_id.get(p.candidate_id.as_str())?;
            TripletRecord::new(
                a.requirements.clone(),
                c.passage_text(),
                None,
                Provenance::Heuristic,
                vec![a.id.clone(), c.id.clone()],
            )
            .ok()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandEmpty {
    pub anchor_id: String,
    /// Usable non-positive candidates found for this anchor.
    pub available: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HardNegativeOutcome {
    pub triplets: Vec<TripletRecord>,
    /// Anchors skipped because the rank band held no usable candidate.
    pub band_empty: Vec<BandEmpty>,
}

/// Ranks the pool against one anchor and returns the band candidates as
/// `(similarity, doc index)`, best first.
///
/// `pool_sims` holds the anchor's similarity to each pool document.
/// Documents in `excluded` are never candidates; candidates must score
/// strictly below `ceiling`.
pub fn band_candidates(
    pool_ids: &[&str],
    pool_sims: &[f64],
    excluded: &BTreeSet<&str>,
    band: (usize, usize),
    ceiling: f64,
) -> Result<Vec<(f64, usize)>, usize> {
    let mut ranked: Vec<(f64, usize)> = pool_sims
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(pool_ids[*i]))
        .map(|(i, &s)| (s, i))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| pool_ids[a.1].cmp(pool_ids[b.1]))
    });
    let (lo, hi) = band;
    if ranked.len() < lo {
        return Err(ranked.len());
    }
    let band: Vec<(f64, usize)> = ranked[lo - 1..hi.min(ranked.len())]
        .iter()
        .copied()
        .filter(|(s, _)| *s < ceiling)
        .collect();
    if band.is_empty() {
        return Err(ranked.len());
    }
    Ok(band)
}

/// For every anchor in `pairs`, scores all pool passages with the reference
/// encoder, drops the anchor and its known positives, and draws one
/// negative per (anchor, positive) pair uniformly from the configured rank
/// band. Negatives always score strictly below the anchor's best positive.
pub fn mine_hard_negatives(
    pairs: &[CandidatePair],
    pool: &[KnowledgeDocument],
    reference: &Encoder,
    config: &MiningConfig,
) -> Result<HardNegativeOutcome, MineError> {
    config.validate()?;
    let index_of: HashMap<&str, usize> = pool
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();

    let mut positives: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in pairs {
        positives
            .entry(&p.anchor_id)
            .or_default()
            .insert(&p.candidate_id);
        positives
            .entry(&p.candidate_id)
            .or_default()
            .insert(&p.anchor_id);
    }
    let mut by_anchor: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in pairs {
        if index_of.contains_key(p.anchor_id.as_str())
            && index_of.contains_key(p.candidate_id.as_str())
        {
            by_anchor
                .entry(&p.anchor_id)
                .or_default()
                .push(&p.candidate_id);
        }
    }
    let anchors: Vec<(&str, Vec<&str>)> = by_anchor
        .into_iter()
        .map(|(a, mut c)| {
            c.sort_unstable();
            c.dedup();
            (a, c)
        })
        .collect();

    let passages: Vec<String> = pool.iter().map(KnowledgeDocument::passage_text).collect();
    let pool_vecs = reference.embed_batch(&passages)?;
    let pool_ids: Vec<&str> = pool.iter().map(|d| d.id.as_str()).collect();

    let per_anchor = exec::map(&anchors, |(anchor_id, cands)| -> Result<_, MineError> {
        let anchor = &pool[index_of[anchor_id]];
        let av = reference.embed(&anchor.requirements)?;
        let sims = pool_vecs
            .iter()
            .map(|v| cosine(&av, v))
            .collect::<Result<Vec<f64>, _>>()?;
        let mut excluded = positives.get(anchor_id).cloned().unwrap_or_default();
        excluded.insert(anchor_id);
        let ceiling = excluded
            .iter()
            .filter(|id| **id != *anchor_id)
            .filter_map(|id| index_of.get(id))
            .map(|&i| sims[i])
            .fold(f64::NEG_INFINITY, f64::max);

        let band = match band_candidates(
            &pool_ids,
            &sims,
            &excluded,
            config.negative_rank_band,
            ceiling,
        ) {
            Ok(b) => b,
            Err(available) => {
                return Ok(Err(BandEmpty {
                    anchor_id: anchor_id.to_string(),
                    available,
                }))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ fnv1a64(anchor_id));
        let mut out = Vec::with_capacity(cands.len());
        for cand in cands {
            let (_, neg) = band[rng.random_range(0..band.len())];
            let positive = &pool[index_of[cand]];
            if let Ok(t) = TripletRecord::new(
                anchor.requirements.clone(),
                positive.passage_text(),
                Some(passages[neg].clone()),
                Provenance::HardNegative,
                vec![anchor.id.clone(), positive.id.clone(), pool[neg].id.clone()],
            ) {
                out.push(t);
            }
        }
        Ok(Ok(out))
    });

    let mut outcome = HardNegativeOutcome::default();
    for r in per_anchor {
        match r? {
            Ok(ts) => outcome.triplets.extend(ts),
            Err(empty) => {
                tracing::debug!(anchor = %empty.anchor_id, available = empty.available, "rank band empty");
                outcome.band_empty.push(empty);
            }
        }
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Synthetic triplets
// ---------------------------------------------------------------------------

/// Produces one triplet anchored on `doc`. External-model generators plug in
/// here; returning `Ok(None)` skips the document.
pub trait TripletGenerator: Send + Sync {
    fn generate(
        &self,
        doc: &KnowledgeDocument,
        corpus: &[KnowledgeDocument],
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<TripletRecord>, MineError>;
}

const SYNONYMS: &[(&str, &str)] = &[
    ("verify", "check"),
    ("check", "verify"),
    ("activate", "enable"),
    ("activates", "enables"),
    ("deactivate", "disable"),
    ("deactivates", "disables"),
    ("signal", "message"),
    ("speed", "velocity"),
    ("vehicle", "car"),
    ("test", "validate"),
    ("ensure", "confirm"),
    ("when", "whenever"),
    ("shall", "must"),
    ("must", "shall"),
    ("increase", "raise"),
    ("decrease", "lower"),
    ("start", "begin"),
    ("stop", "halt"),
    ("display", "show"),
    ("value", "reading"),
    ("error", "fault"),
    ("request", "demand"),
];

/// Deterministic paraphraser: rotates clauses and swaps keywords from a
/// fixed synonym table. Negatives come from a different document, preferring
/// another category.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSynthesizer;

impl TemplateSynthesizer {
    pub fn paraphrase(&self, text: &str, rng: &mut ChaCha8Rng) -> String {
        let mut clauses: Vec<String> = text
            .split([',', ';'])
            .flat_map(|c| c.split(" and "))
            .map(|c| c.trim().trim_end_matches('.').to_string())
            .filter(|c| !c.is_empty())
            .collect();
        if clauses.len() > 1 {
            let k = rng.random_range(1..clauses.len());
            clauses.rotate_left(k);
        }
        let joined = clauses.join(", ");
        let mut swapped = false;
        let words: Vec<String> = joined
            .split(' ')
            .map(|w| {
                let lower = w.to_lowercase();
                match SYNONYMS.iter().find(|(from, _)| *from == lower) {
                    Some((_, to)) if rng.random_bool(0.5) => {
                        swapped = true;
                        to.to_string()
                    }
                    _ => w.to_string(),
                }
            })
            .collect();
        let out = words.join(" ");
        if swapped || out != text {
            out
        } else {
            format!("Confirm that {out}")
        }
    }
}

impl TripletGenerator for TemplateSynthesizer {
    fn generate(
        &self,
        doc: &KnowledgeDocument,
        corpus: &[KnowledgeDocument],
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<TripletRecord>, MineError> {
        let anchor = self.paraphrase(&doc.requirements, rng);
        let positive = doc.passage_text();
        let others: Vec<&KnowledgeDocument> = corpus.iter().filter(|d| d.id != doc.id).collect();
        let cross: Vec<&KnowledgeDocument> = others
            .iter()
            .copied()
            .filter(|d| d.category != doc.category)
            .collect();
        let pick_from = if cross.is_empty() { &others } else { &cross };
        let neg = (!pick_from.is_empty()).then(|| pick_from[rng.random_range(0..pick_from.len())]);
        let mut source_ids = vec![doc.id.clone()];
        if let Some(n) = neg {
            source_ids.push(n.id.clone());
        }
        Ok(TripletRecord::new(
            anchor,
            positive,
            neg.map(KnowledgeDocument::passage_text),
            Provenance::Synthetic,
            source_ids,
        )
        .ok())
    }
}

/// Draws `n` synthetic triplets with anchors chosen uniformly from the corpus.
pub fn synthesize_triplets(
    corpus: &[KnowledgeDocument],
    generator: &dyn TripletGenerator,
    n: usize,
    seed: u64,
) -> Result<Vec<TripletRecord>, MineError> {
    let mut out = Vec::with_capacity(n);
    if corpus.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempts = 0;
    while out.len() < n && attempts < n.saturating_mul(4).max(8) {
        attempts += 1;
        let doc = &corpus[rng.random_range(0..corpus.len())];
        if let Some(t) = generator.generate(doc, corpus, &mut rng)? {
            out.push(t);
        }
    }
    Ok(out)
}
