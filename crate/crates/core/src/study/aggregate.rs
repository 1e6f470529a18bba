use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{AnnotationEvent, AnnotatorStatus, FidelityScore, PairRecord, MIN_ANNOTATIONS};

/// Trap statistics for every known annotator, sorted by id.
pub fn annotator_statuses(
    pairs: &[PairRecord],
    annotators: &[String],
    events: &[AnnotationEvent],
) -> Vec<AnnotatorStatus> {
    let traps: HashMap<&str, bool> = pairs
        .iter()
        .filter(|p| p.is_trap)
        .filter_map(|p| p.trap_expected.map(|t| (p.pair_id.as_str(), t.as_bool())))
        .collect();
    let mut counts: BTreeMap<&str, (usize, usize)> = annotators.iter().map(|a| (a.as_str(), (0, 0))).collect();
    for ev in events {
        let c = counts.entry(ev.annotator_id.as_str()).or_default();
        if let Some(&expected) = traps.get(ev.pair_id.as_str()) {
            c.0 += 1;
            if ev.answer == expected {
                c.1 += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(id, (seen, correct))| AnnotatorStatus::new(id, seen, correct))
        .collect()
}

/// Mean "yes" rate per non-trap pair, in manifest order, after dropping
/// excluded annotators.
pub fn aggregate_scores(pairs: &[PairRecord], annotators: &[String], events: &[AnnotationEvent]) -> Vec<FidelityScore> {
    let excluded: HashSet<String> = annotator_statuses(pairs, annotators, events)
        .into_iter()
        .filter(|s| s.excluded)
        .map(|s| s.annotator_id)
        .collect();
    let mut tallies: HashMap<&str, (usize, usize)> = HashMap::new();
    for ev in events.iter().filter(|e| !excluded.contains(&e.annotator_id)) {
        let t = tallies.entry(ev.pair_id.as_str()).or_default();
        t.0 += 1;
        if ev.answer {
            t.1 += 1;
        }
    }
    pairs
        .iter()
        .filter(|p| !p.is_trap)
        .map(|p| {
            let (n, yes) = tallies.get(p.pair_id.as_str()).copied().unwrap_or((0, 0));
            FidelityScore {
                pair_id: p.pair_id.clone(),
                n_valid: n,
                score: (n > 0).then(|| yes as f64 / n as f64),
                is_final: n >= MIN_ANNOTATIONS,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub n: usize,
    pub mean: Option<f64>,
    /// Share of scores in the first or last bucket.
    pub extreme_share: Option<f64>,
}

impl Histogram {
    fn new(n_buckets: usize) -> Self {
        Self {
            counts: vec![0; n_buckets],
            n: 0,
            mean: None,
            extreme_share: None,
        }
    }

    fn add(&mut self, score: f64) {
        let n = self.counts.len();
        // Half-open buckets [k/n, (k+1)/n); 1.0 lands in the last one.
        let idx = ((score * n as f64 + 1e-9).floor() as usize).min(n - 1);
        self.counts[idx] += 1;
        self.n += 1;
        self.mean = Some(self.mean.unwrap_or(0.0) + score);
    }

    fn finish(&mut self) {
        if self.n > 0 {
            self.mean = self.mean.map(|s| s / self.n as f64);
            let ends = self.counts[0] + if self.counts.len() > 1 { self.counts[self.counts.len() - 1] } else { 0 };
            self.extreme_share = Some(ends as f64 / self.n as f64);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub n_buckets: usize,
    pub overall: Histogram,
    pub per_model: BTreeMap<String, Histogram>,
}

/// Per-model score histograms over equal-width buckets on `[0, 1]`.
///
/// Every model present in `pairs` gets a histogram, even if none of its
/// pairs has a score yet. Scores for pairs missing from `pairs` count under
/// `"unknown"`.
pub fn distribution_report(scores: &[FidelityScore], pairs: &[PairRecord], n_buckets: usize) -> crate::Result<DistributionReport> {
    if n_buckets < 2 {
        return Err(crate::Error::arg("at least two buckets are required"));
    }
    let model_of: HashMap<&str, &str> = pairs
        .iter()
        .map(|p| (p.pair_id.as_str(), p.model_name.as_str()))
        .collect();
    let models: BTreeSet<&str> = pairs.iter().filter(|p| !p.is_trap).map(|p| p.model_name.as_str()).collect();
    let mut per_model: BTreeMap<String, Histogram> =
        models.into_iter().map(|m| (m.to_string(), Histogram::new(n_buckets))).collect();
    let mut overall = Histogram::new(n_buckets);
    for s in scores {
        let Some(v) = s.score else { continue };
        let model = model_of.get(s.pair_id.as_str()).copied().unwrap_or("unknown");
        per_model
            .entry(model.to_string())
            .or_insert_with(|| Histogram::new(n_buckets))
            .add(v);
        overall.add(v);
    }
    overall.finish();
    per_model.values_mut().for_each(Histogram::finish);
    Ok(DistributionReport {
        n_buckets,
        overall,
        per_model,
    })
}
