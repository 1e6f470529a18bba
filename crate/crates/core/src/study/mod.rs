//! Subjective-study bookkeeping.
//!
//! Pairs are described by a JSON-lines manifest of [`PairRecord`]s. Human
//! judgments arrive as [`AnnotationEvent`]s through the append-only
//! [`StudyStore`]. Trap pairs carry a known answer and are used to exclude
//! inattentive annotators before per-pair scores are averaged.

mod aggregate;
mod select;
mod split;
mod store;

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use aggregate::{
    aggregate_scores, annotator_statuses, distribution_report, DistributionReport, Histogram,
};
pub use select::{bin_index, stratified_select, DEFAULT_BINS};
pub use split::{split_dataset, test_count};
pub use store::{StudySnapshot, StudyStore};

/// Minimum retained annotations for a score to be final.
pub const MIN_ANNOTATIONS: usize = 12;
/// Annotators are judged on traps only once they have seen this many.
pub const TRAP_MIN_SEEN: usize = 5;
/// Trap accuracy below this excludes an annotator.
pub const TRAP_MIN_ACCURACY: f64 = 0.8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrapAnswer {
    Yes,
    No,
}

impl TrapAnswer {
    pub fn as_bool(self) -> bool {
        matches!(self, TrapAnswer::Yes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub gt_path: PathBuf,
    pub sr_path: PathBuf,
    pub model_name: String,
    #[serde(default)]
    pub recipe_ref: Option<PathBuf>,
    /// Cosine similarity from the selection backbone.
    #[serde(default)]
    pub similarity: f64,
    /// Similarity stratum; `null` until selection assigns one.
    #[serde(default)]
    pub bin: Option<usize>,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub is_trap: bool,
    #[serde(default)]
    pub trap_expected: Option<TrapAnswer>,
}

impl PairRecord {
    /// A regular (non-trap) pair with default bookkeeping fields.
    pub fn new(pair_id: impl Into<String>, gt: impl Into<PathBuf>, sr: impl Into<PathBuf>, model: impl Into<String>) -> Self {
        Self {
            pair_id: pair_id.into(),
            gt_path: gt.into(),
            sr_path: sr.into(),
            model_name: model.into(),
            recipe_ref: None,
            similarity: 0.0,
            bin: None,
            split: Split::Unassigned,
            is_trap: false,
            trap_expected: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pair_id.is_empty() {
            return Err(Error::arg("pair_id must not be empty"));
        }
        if self.is_trap != self.trap_expected.is_some() {
            return Err(Error::arg(format!(
                "pair {}: is_trap and trap_expected disagree",
                self.pair_id
            )));
        }
        if !(-1.0..=1.0).contains(&self.similarity) {
            return Err(Error::arg(format!(
                "pair {}: similarity {} outside [-1, 1]",
                self.pair_id, self.similarity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub event_id: String,
    pub annotator_id: String,
    pub pair_id: String,
    /// `true` means "yes, fidelity changed".
    pub answer: bool,
    pub presented_at: DateTime<Utc>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityScore {
    pub pair_id: String,
    pub n_valid: usize,
    /// Share of "yes" among retained answers; `null` with no retained answers.
    pub score: Option<f64>,
    #[serde(rename = "final")]
    pub is_final: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorStatus {
    pub annotator_id: String,
    pub traps_seen: usize,
    pub traps_correct: usize,
    pub excluded: bool,
}

impl AnnotatorStatus {
    pub fn new(annotator_id: impl Into<String>, traps_seen: usize, traps_correct: usize) -> Self {
        let excluded =
            traps_seen >= TRAP_MIN_SEEN && (traps_correct as f64) < TRAP_MIN_ACCURACY * traps_seen as f64;
        Self {
            annotator_id: annotator_id.into(),
            traps_seen,
            traps_correct,
            excluded,
        }
    }
}

/// Validates a manifest and rejects duplicate pair ids.
pub fn validate_manifest(pairs: &[PairRecord]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for p in pairs {
        p.validate()?;
        if !seen.insert(p.pair_id.as_str()) {
            return Err(Error::Conflict(format!("duplicate pair_id {}", p.pair_id)));
        }
    }
    Ok(())
}
