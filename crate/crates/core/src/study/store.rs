use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use super::{
    aggregate_scores, annotator_statuses, validate_manifest, AnnotationEvent, AnnotatorStatus, FidelityScore,
    PairRecord,
};
use crate::{Error, Result};

/// Consistent copy of the store's contents at one instant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudySnapshot {
    pub pairs: Vec<PairRecord>,
    pub annotators: Vec<String>,
    pub events: Vec<AnnotationEvent>,
}

impl StudySnapshot {
    pub fn annotator_filter(&self) -> Vec<AnnotatorStatus> {
        annotator_statuses(&self.pairs, &self.annotators, &self.events)
    }

    pub fn aggregate_scores(&self) -> Vec<FidelityScore> {
        aggregate_scores(&self.pairs, &self.annotators, &self.events)
    }
}

struct Inner {
    pairs: Vec<PairRecord>,
    pair_index: HashMap<String, usize>,
    annotators: BTreeSet<String>,
    events: Vec<AnnotationEvent>,
    answered: HashSet<(String, String)>,
    trap_counts: HashMap<String, (usize, usize)>,
    log: Option<(PathBuf, File)>,
}

/// Annotation store backed by an append-only JSON-lines log.
///
/// All writes go through one lock, so appends are serialised and readers
/// always see a complete prefix of the log. An event is on disk (fsynced)
/// before [`StudyStore::record_annotation`] returns.
pub struct StudyStore {
    inner: Mutex<Inner>,
}

impl StudyStore {
    /// Store with no backing file.
    pub fn in_memory(pairs: Vec<PairRecord>) -> Result<Self> {
        Ok(Self {
            inner: Mutex::new(Inner::new(pairs, None)?),
        })
    }

    /// Opens (or creates) the log at `log_path` and replays it.
    ///
    /// A final line without a trailing newline is the remnant of an
    /// interrupted append that was never acknowledged; it is dropped and the
    /// file truncated back to the last complete record.
    pub fn open(log_path: impl AsRef<Path>, pairs: Vec<PairRecord>) -> Result<Self> {
        let path = log_path.as_ref().to_path_buf();
        let io = |e| Error::io(&path, e);
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(io)?;
        let mut text = String::new();
        file.read_to_string(&mut text).map_err(io)?;

        let complete = match text.rfind('\n') {
            Some(i) => i + 1,
            None => 0,
        };
        if complete < text.len() {
            file.set_len(complete as u64).map_err(io)?;
            file.seek(SeekFrom::End(0)).map_err(io)?;
        }
        let events: Vec<AnnotationEvent> = crate::jsonl::parse_lines(&text[..complete])?;

        let mut inner = Inner::new(pairs, None)?;
        for ev in events {
            inner.annotators.insert(ev.annotator_id.clone());
            inner.apply(ev)?;
        }
        inner.log = Some((path, file));
        Ok(Self {
            inner: Mutex::new(inner),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Idempotent. Returns `true` if the annotator was new.
    pub fn register_annotator(&self, annotator_id: &str) -> Result<bool> {
        let id = annotator_id.trim();
        if id.is_empty() {
            return Err(Error::arg("annotator id must not be empty"));
        }
        Ok(self.lock().annotators.insert(id.to_string()))
    }

    pub fn record_annotation(&self, event: AnnotationEvent) -> Result<()> {
        let mut inner = self.lock();
        inner.check(&event)?;
        if let Some((path, file)) = inner.log.as_mut() {
            let mut line = serde_json::to_vec(&event).expect("event serializes");
            line.push(b'\n');
            file.write_all(&line).map_err(|e| Error::io(&*path, e))?;
            file.sync_data().map_err(|e| Error::io(&*path, e))?;
        }
        inner.apply(event)
    }

    pub fn snapshot(&self) -> StudySnapshot {
        let inner = self.lock();
        StudySnapshot {
            pairs: inner.pairs.clone(),
            annotators: inner.annotators.iter().cloned().collect(),
            events: inner.events.clone(),
        }
    }

    pub fn annotator_filter(&self) -> Vec<AnnotatorStatus> {
        self.snapshot().annotator_filter()
    }

    pub fn aggregate_scores(&self) -> Vec<FidelityScore> {
        self.snapshot().aggregate_scores()
    }

    pub fn pair(&self, pair_id: &str) -> Option<PairRecord> {
        let inner = self.lock();
        inner.pair_index.get(pair_id).map(|&i| inner.pairs[i].clone())
    }

    pub fn has_annotator(&self, annotator_id: &str) -> bool {
        self.lock().annotators.contains(annotator_id)
    }

    /// Pair ids this annotator has answered.
    pub fn answered_by(&self, annotator_id: &str) -> HashSet<String> {
        self.lock()
            .events
            .iter()
            .filter(|e| e.annotator_id == annotator_id)
            .map(|e| e.pair_id.clone())
            .collect()
    }

    /// Running trap counters `(seen, correct)` maintained on every append.
    pub fn trap_counters(&self, annotator_id: &str) -> (usize, usize) {
        self.lock().trap_counts.get(annotator_id).copied().unwrap_or((0, 0))
    }

    pub fn event_count(&self) -> usize {
        self.lock().events.len()
    }

    pub fn log_path(&self) -> Option<PathBuf> {
        self.lock().log.as_ref().map(|(p, _)| p.clone())
    }
}

impl Inner {
    fn new(pairs: Vec<PairRecord>, log: Option<(PathBuf, File)>) -> Result<Self> {
        validate_manifest(&pairs)?;
        let pair_index = pairs.iter().enumerate().map(|(i, p)| (p.pair_id.clone(), i)).collect();
        Ok(Self {
            pairs,
            pair_index,
            annotators: BTreeSet::new(),
            events: Vec::new(),
            answered: HashSet::new(),
            trap_counts: HashMap::new(),
            log,
        })
    }

    fn check(&self, ev: &AnnotationEvent) -> Result<()> {
        if !self.pair_index.contains_key(&ev.pair_id) {
            return Err(Error::NotFound(format!("pair {}", ev.pair_id)));
        }
        if !self.annotators.contains(&ev.annotator_id) {
            return Err(Error::NotFound(format!("annotator {}", ev.annotator_id)));
        }
        if self.answered.contains(&(ev.annotator_id.clone(), ev.pair_id.clone())) {
            return Err(Error::Conflict(format!(
                "annotator {} already answered pair {}",
                ev.annotator_id, ev.pair_id
            )));
        }
        Ok(())
    }

    fn apply(&mut self, ev: AnnotationEvent) -> Result<()> {
        self.check(&ev)?;
        let pair = &self.pairs[self.pair_index[&ev.pair_id]];
        if let Some(expected) = pair.trap_expected.filter(|_| pair.is_trap) {
            let c = self.trap_counts.entry(ev.annotator_id.clone()).or_default();
            c.0 += 1;
            if ev.answer == expected.as_bool() {
                c.1 += 1;
            }
        }
        self.answered.insert((ev.annotator_id.clone(), ev.pair_id.clone()));
        self.events.push(ev);
        Ok(())
    }
}
