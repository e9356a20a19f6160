use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use hilrag_core::index::RetrievalHit;
use hilrag_core::rag::{NormalizedQuery, ToolCall, ToolResult};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::journal::JournalRecord;

/// 128 random bits, lowercase hex.
pub fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Support,
    InteractiveControl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Ok,
    MalformedToolRequest,
    ClientFailure,
    ToolDepthExceeded,
    Error,
}

/// One inference. Fields that were never produced (for example the answer
/// of a failed generation) are `None`, not empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub inference_id: String,
    pub timestamp: DateTime<Utc>,
    pub raw_query: String,
    pub normalized_query: Option<NormalizedQuery>,
    pub retrieved: Vec<RetrievalHit>,
    pub adapter_digest: String,
    pub prompt_digest: Option<String>,
    pub tool_trace: Vec<(ToolCall, ToolResult)>,
    pub answer: Option<String>,
    pub attributed_doc_id: Option<String>,
    pub mode: Mode,
    pub status: AuditStatus,
    pub error: Option<String>,
}

impl JournalRecord for AuditRecord {
    fn key(&self) -> &str {
        &self.inference_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingDimension {
    Completeness,
    Truthfulness,
    Naturalness,
    Satisfaction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackSubmission {
    pub inference_id: String,
    #[serde(default)]
    pub helpful: Option<bool>,
    #[serde(default)]
    pub ratings: BTreeMap<RatingDimension, u8>,
    #[serde(default)]
    pub free_text: Option<String>,
    #[serde(default)]
    pub flagged_inaccurate: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeedbackError {
    #[error("unknown inference {0}")]
    UnknownInference(String),
    #[error("rating {value} for {dimension:?} is outside 1..=5")]
    RatingOutOfRange {
        dimension: RatingDimension,
        value: u8,
    },
}

impl FeedbackSubmission {
    pub fn check_ratings(&self) -> Result<(), FeedbackError> {
        match self.ratings.iter().find(|(_, v)| !(1..=5).contains(*v)) {
            Some((&dimension, &value)) => Err(FeedbackError::RatingOutOfRange { dimension, value }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub feedback_id: String,
    pub inference_id: String,
    pub helpful: Option<bool>,
    pub ratings: BTreeMap<RatingDimension, u8>,
    pub free_text: Option<String>,
    pub flagged_inaccurate: bool,
    /// Copied from the audit record so aggregation needs no join.
    pub mode: Mode,
    pub timestamp: DateTime<Utc>,
}

impl JournalRecord for FeedbackRecord {
    fn key(&self) -> &str {
        &self.feedback_id
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackFilter {
    #[serde(default)]
    pub since: Option<DateTime<Utc>>,
    #[serde(default)]
    pub until: Option<DateTime<Utc>>,
    #[serde(default)]
    pub mode: Option<Mode>,
}

impl FeedbackFilter {
    pub fn matches(&self, r: &FeedbackRecord) -> bool {
        self.since.is_none_or(|t| r.timestamp >= t)
            && self.until.is_none_or(|t| r.timestamp < t)
            && self.mode.is_none_or(|m| r.mode == m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelpfulCounts {
    pub yes: usize,
    pub no: usize,
}

impl fmt::Display for HelpfulCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.yes, self.no)
    }
}

/// Per-dimension means over matching feedback. `empty` is set when nothing
/// matched; dimensions without any rating are absent rather than NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackSummary {
    pub empty: bool,
    pub records: usize,
    pub means: BTreeMap<RatingDimension, DimensionStats>,
    pub helpful: HelpfulCounts,
    pub preference: String,
    pub flagged_inaccurate: usize,
}

pub fn aggregate_feedback<'a>(
    records: impl IntoIterator<Item = &'a FeedbackRecord>,
    filter: &FeedbackFilter,
) -> FeedbackSummary {
    let mut sums: BTreeMap<RatingDimension, (u64, usize)> = BTreeMap::new();
    let mut helpful = HelpfulCounts::default();
    let mut count = 0;
    let mut flagged = 0;
    for r in records.into_iter().filter(|r| filter.matches(r)) {
        count += 1;
        flagged += usize::from(r.flagged_inaccurate);
        match r.helpful {
            Some(true) => helpful.yes += 1,
            Some(false) => helpful.no += 1,
            None => {}
        }
        for (&dim, &v) in &r.ratings {
            let e = sums.entry(dim).or_default();
            e.0 += u64::from(v);
            e.1 += 1;
        }
    }
    FeedbackSummary {
        empty: count == 0,
        records: count,
        means: sums
            .into_iter()
            .map(|(d, (sum, n))| {
                (
                    d,
                    DimensionStats {
                        mean: sum as f64 / n as f64,
                        count: n,
                    },
                )
            })
            .collect(),
        preference: helpful.to_string(),
        helpful,
        flagged_inaccurate: flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fb(helpful: Option<bool>, satisfaction: Option<u8>, mode: Mode) -> FeedbackRecord {
        FeedbackRecord {
            feedback_id: new_id(),
            inference_id: "x".into(),
            helpful,
            ratings: satisfaction
                .map(|v| BTreeMap::from([(RatingDimension::Satisfaction, v)]))
                .unwrap_or_default(),
            free_text: None,
            flagged_inaccurate: false,
            mode,
            timestamp: Utc::now(),
        }
    }

    #[test]
    fn ids_are_128_bit_hex() {
        let a = new_id();
        assert_eq!(a.len(), 32);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert_ne!(a, new_id());
    }

    #[test]
    fn mean_of_ratings() {
        let rs: Vec<_> = [4, 3, 4, 3, 4]
            .iter()
            .map(|&v| fb(None, Some(v), Mode::Support))
            .collect();
        let s = aggregate_feedback(&rs, &FeedbackFilter::default());
        assert!(!s.empty);
        assert!((s.means[&RatingDimension::Satisfaction].mean - 3.6).abs() < 1e-12);
        assert!(!s.means.contains_key(&RatingDimension::Completeness));
    }

    #[test]
    fn empty_marker() {
        let s = aggregate_feedback(&[], &FeedbackFilter::default());
        assert!(s.empty);
        assert!(s.means.is_empty());
        let json = serde_json::to_string(&s).unwrap();
        assert!(!json.contains("NaN") && !json.contains("null"));
    }

    #[test]
    fn helpful_preference_and_mode_filter() {
        let mut rs: Vec<_> = (0..9)
            .map(|_| fb(Some(true), None, Mode::Support))
            .collect();
        rs.push(fb(Some(false), None, Mode::InteractiveControl));
        let s = aggregate_feedback(&rs, &FeedbackFilter::default());
        assert_eq!(s.preference, "9:1");
        let only = aggregate_feedback(
            &rs,
            &FeedbackFilter {
                mode: Some(Mode::InteractiveControl),
                ..Default::default()
            },
        );
        assert_eq!((only.records, only.helpful.no), (1, 1));
    }

    #[test]
    fn rating_range() {
        let mut sub = FeedbackSubmission {
            inference_id: "x".into(),
            helpful: None,
            ratings: BTreeMap::from([(RatingDimension::Satisfaction, 5)]),
            free_text: None,
            flagged_inaccurate: false,
        };
        assert!(sub.check_ratings().is_ok());
        sub.ratings.insert(RatingDimension::Naturalness, 6);
        assert_eq!(
            sub.check_ratings(),
            Err(FeedbackError::RatingOutOfRange {
                dimension: RatingDimension::Naturalness,
                value: 6
            })
        );
        sub.ratings.insert(RatingDimension::Naturalness, 0);
        assert!(sub.check_ratings().is_err());
    }
}
