//! Rank and linear correlation of scorer outputs against human fidelity scores.
//!
//! Sign convention: fidelity scores grow with perceived change. Scorers whose
//! orientation is `higher_is_better` (PSNR, SSIM, VIF, raw similarities) are
//! negated before correlating, so a scorer that agrees with humans reports
//! positive SRCC and PLCC regardless of its native direction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::hlf::HlfRecord;
use crate::metrics::{MetricRecord, Orientation};
use crate::study::{FidelityScore, PairRecord, Split};
use crate::{Error, Result};

pub const MIN_POINTS: usize = 3;

pub const SIGN_CONVENTION: &str = "fidelity scores rise with perceived change; higher_is_better scorers are negated \
before correlation so agreement with human judgments is reported as a positive coefficient";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScorerKind {
    #[default]
    FR,
    NR,
    HLF,
}

/// One scorer's values keyed by pair id. `+∞`/`-∞` are allowed (infinite PSNR).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub scorer_name: String,
    pub orientation: Orientation,
    pub kind: ScorerKind,
    pub entries: BTreeMap<String, f64>,
}

impl ScoreSeries {
    pub fn new(scorer_name: impl Into<String>, orientation: Orientation, kind: ScorerKind) -> Self {
        Self {
            scorer_name: scorer_name.into(),
            orientation,
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Adds an entry; a repeated pair id is a conflict.
    pub fn insert(&mut self, pair_id: impl Into<String>, value: f64) -> Result<()> {
        let pair_id = pair_id.into();
        if value.is_nan() {
            return Err(Error::arg(format!("NaN value for pair {pair_id}")));
        }
        if self.entries.contains_key(&pair_id) {
            return Err(Error::Conflict(format!(
                "duplicate pair_id {pair_id} in series {}",
                self.scorer_name
            )));
        }
        self.entries.insert(pair_id, value);
        Ok(())
    }
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::arg(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < MIN_POINTS {
        return Err(Error::arg(format!("need at least {MIN_POINTS} points, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::arg("series contain NaN"));
    }
    Ok(())
}

/// 1-based fractional ranks; tied values share the mean of their positions.
/// Infinities order naturally, so `+∞` ties above every finite value.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation accumulated with single-pass co-moment updates.
fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (k + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    // Written so that NaN also counts as degenerate.
    if sxx.is_nan() || syy.is_nan() || sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::Degenerate("zero variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Pearson linear correlation on raw values. Infinite values are rejected.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    if x.iter().chain(y).any(|v| v.is_infinite()) {
        return Err(Error::arg("PLCC is undefined for infinite values"));
    }
    pearson(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSplit {
    Train,
    Test,
    All,
}

impl std::str::FromStr for DatasetSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(Error::arg(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scorer_name: String,
    pub srcc: Option<f64>,
    pub plcc: Option<f64>,
    /// Pairs shared with the human scores on the split (SRCC sample size).
    pub n: usize,
    /// Pairs left for PLCC after dropping infinite values.
    pub n_plcc: usize,
    #[serde(rename = "type")]
    pub kind: ScorerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    pub generated_at: DateTime<Utc>,
    pub dataset_split: DatasetSplit,
    pub sign_convention: String,
}

impl MetricReport {
    /// Aligned plain-text table with Metric, SRCC, PLCC and Type columns.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.scorer_name.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>7}  {:<4}  {:>5}", "Metric", "SRCC", "PLCC", "Type", "n");
        let _ = writeln!(out, "{}", "-".repeat(width + 32));
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:<4}  {:>5}",
                r.scorer_name,
                fmt(r.srcc),
                fmt(r.plcc),
                format!("{:?}", r.kind),
                r.n
            );
            if let Some(e) = &r.error {
                let _ = write!(out, "  ({e})");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\nsplit: {:?}; generated {}", self.dataset_split, self.generated_at.to_rfc3339());
        let _ = writeln!(out, "sign convention: {}", self.sign_convention);
        out
    }
}

/// Correlates every series against the human scores on `split`.
///
/// `pairs` supplies split membership and is only consulted for `train`/`test`.
/// A series with too little overlap yields a row with `error` set.
pub fn benchmark(
    scores: &[FidelityScore],
    pairs: &[PairRecord],
    series: &[ScoreSeries],
    split: DatasetSplit,
) -> MetricReport {
    benchmark_at(scores, pairs, series, split, Utc::now())
}

pub fn benchmark_at(
    scores: &[FidelityScore],
    pairs: &[PairRecord],
    series: &[ScoreSeries],
    split: DatasetSplit,
    generated_at: DateTime<Utc>,
) -> MetricReport {
    let wanted: Option<HashSet<&str>> = match split {
        DatasetSplit::All => None,
        DatasetSplit::Train | DatasetSplit::Test => {
            let s = if split == DatasetSplit::Train { Split::Train } else { Split::Test };
            Some(pairs.iter().filter(|p| p.split == s).map(|p| p.pair_id.as_str()).collect())
        }
    };
    let human: BTreeMap<&str, f64> = scores
        .iter()
        .filter(|s| wanted.as_ref().is_none_or(|w| w.contains(s.pair_id.as_str())))
        .filter_map(|s| s.score.map(|v| (s.pair_id.as_str(), v)))
        .collect();

    let rows = series.iter().map(|s| correlate_series(&human, s)).collect();
    MetricReport {
        rows,
        generated_at,
        dataset_split: split,
        sign_convention: SIGN_CONVENTION.to_string(),
    }
}

fn correlate_series(human: &BTreeMap<&str, f64>, series: &ScoreSeries) -> ReportRow {
    let sign = match series.orientation {
        Orientation::HigherIsBetter => -1.0,
        Orientation::LowerIsBetter => 1.0,
    };
    let (mut h, mut v) = (Vec::new(), Vec::new());
    for (id, &target) in human {
        if let Some(&x) = series.entries.get(*id) {
            h.push(target);
            v.push(sign * x);
        }
    }
    let (hp, vp): (Vec<f64>, Vec<f64>) = h
        .iter()
        .zip(&v)
        .filter(|(_, x)| x.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip();
    let mut row = ReportRow {
        scorer_name: series.scorer_name.clone(),
        srcc: None,
        plcc: None,
        n: h.len(),
        n_plcc: hp.len(),
        kind: series.kind,
        error: None,
    };
    let mut errors = Vec::new();
    match srcc(&v, &h) {
        Ok(r) => row.srcc = Some(r),
        Err(e) => errors.push(format!("srcc: {e}")),
    }
    match plcc(&vp, &hp) {
        Ok(r) => row.plcc = Some(r),
        Err(e) => errors.push(format!("plcc: {e}")),
    }
    if !errors.is_empty() {
        row.error = Some(errors.join("; "));
    }
    row
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesHeader {
    scorer_name: String,
    orientation: Orientation,
    #[serde(default, rename = "type")]
    kind: ScorerKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesEntry {
    pair_id: String,
    value: Option<f64>,
    #[serde(default)]
    infinite: bool,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses the external score format: a header line
/// `{"scorer_name", "orientation", "type"?}` then `{"pair_id", "value"}` lines.
/// `{"pair_id", "value": null, "infinite": true}` encodes `+∞`.
pub fn parse_external_scores(text: &str) -> Result<ScoreSeries> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty file; header line expected"))?;
    let header: SeriesHeader = serde_json::from_str(header)
        .map_err(|e| parse_err(hline + 1, format!("missing or malformed header: {e}")))?;
    let mut series = ScoreSeries::new(header.scorer_name, header.orientation, header.kind);
    for (i, line) in lines {
        let entry: SeriesEntry = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        let value = match (entry.value, entry.infinite) {
            (_, true) => f64::INFINITY,
            (Some(v), false) if v.is_finite() => v,
            _ => return Err(parse_err(i + 1, format!("pair {} has no finite value", entry.pair_id))),
        };
        series.insert(entry.pair_id, value)?;
    }
    Ok(series)
}

pub fn import_external_scores(path: impl AsRef<Path>) -> Result<ScoreSeries> {
    let path = path.as_ref();
    parse_external_scores(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Loads any series-bearing JSON-lines file: the external score format,
/// batch metric output (one series per metric) or batch HLF output (one
/// series per model, using the change score).
pub fn load_series_file(path: impl AsRef<Path>) -> Result<Vec<ScoreSeries>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series_text(&text)
}

pub fn parse_series_text(text: &str) -> Result<Vec<ScoreSeries>> {
    let Some((i, first)) = text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) else {
        return Err(parse_err(1, "empty series file"));
    };
    let probe: serde_json::Value = serde_json::from_str(first).map_err(|e| parse_err(i + 1, e.to_string()))?;
    if probe.get("scorer_name").is_some() {
        return Ok(vec![parse_external_scores(text)?]);
    }
    let mut out: Vec<ScoreSeries> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut slot = |name: &str, orientation, kind, out: &mut Vec<ScoreSeries>| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            out.push(ScoreSeries::new(name, orientation, kind));
            out.len() - 1
        })
    };
    if probe.get("metric").is_some() {
        for (line, rec) in numbered::<MetricRecord>(text)? {
            if rec.error.is_some() {
                continue;
            }
            let value = match (rec.value, rec.infinite) {
                (_, true) => f64::INFINITY,
                (Some(v), false) => v,
                (None, false) => return Err(parse_err(line, "metric record without value")),
            };
            let k = slot(&rec.metric, Orientation::HigherIsBetter, ScorerKind::FR, &mut out);
            out[k].insert(rec.pair_id, value)?;
        }
        return Ok(out);
    }
    if probe.get("change_score").is_some() {
        for (_, rec) in numbered::<HlfRecord>(text)? {
            let k = slot(&rec.model_name, Orientation::LowerIsBetter, ScorerKind::HLF, &mut out);
            out[k].insert(rec.pair_id, rec.change_score)?;
        }
        return Ok(out);
    }
    Err(parse_err(i + 1, "unrecognised series format: expected a scorer header, metric records or HLF records"))
}

fn numbered<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<(usize, T)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| parse_err(i + 1, e.to_string()))
        })
        .collect()
}
