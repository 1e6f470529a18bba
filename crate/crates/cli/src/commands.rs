use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fidbench_core::correlate::{self, DatasetSplit};
use fidbench_core::degrade::recipe_sidecar;
use fidbench_core::hlf::{hlf_score, HlfRecord};
use fidbench_core::image::{load_image, save_image, to_luma, SaveFormat};
use fidbench_core::metrics::{Metric, MetricRecord};
use fidbench_core::study::{
    aggregate_scores, annotator_statuses, distribution_report, split_dataset, stratified_select, validate_manifest,
};
use fidbench_core::{
    apply_degradation, jsonl, prepare_gt, sample_recipe, AnnotationEvent, EmbeddingBackend, FidelityScore,
    PairRecord, SeverityLevel,
};
use rayon::prelude::*;

use crate::{Command, Global};

pub enum Outcome {
    Clean,
    /// Number of records that failed.
    Partial(usize),
}

impl Outcome {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Self::Clean
        } else {
            Self::Partial(n)
        }
    }
}

pub fn run(g: &Global, command: Command) -> Result<Outcome> {
    match command {
        Command::Degrade { gt_dir, out_dir, severity } => degrade(g, &gt_dir, &out_dir, severity),
        Command::Score { manifest, metrics, out } => score(g, &manifest, &metrics, out.as_deref()),
        Command::Hlf { manifest, model, out } => hlf(g, &manifest, &model, out.as_deref()),
        Command::Select { candidates, total, bins, out } => {
            let candidates: Vec<PairRecord> = jsonl::read(g.resolve(&candidates))?;
            let selected = stratified_select(&candidates, total, bins)?;
            emit(g, out.as_deref(), &jsonl::to_string(&selected))?;
            Ok(Outcome::Clean)
        }
        Command::Aggregate { events, manifest, out, statuses } => {
            let pairs = read_manifest(g, manifest.as_deref())?;
            let events: Vec<AnnotationEvent> = jsonl::read(g.resolve(&events))?;
            let mut annotators: Vec<String> = events.iter().map(|e| e.annotator_id.clone()).collect();
            annotators.sort_unstable();
            annotators.dedup();
            emit(g, out.as_deref(), &jsonl::to_string(&aggregate_scores(&pairs, &annotators, &events)))?;
            if let Some(path) = statuses {
                let s = annotator_statuses(&pairs, &annotators, &events);
                jsonl::write(g.resolve(&path), &s)?;
            }
            Ok(Outcome::Clean)
        }
        Command::Split { scores, fraction, manifest, out } => {
            let pairs = read_manifest(g, manifest.as_deref())?;
            let scores: Vec<FidelityScore> = jsonl::read(g.resolve(&scores))?;
            let split = split_dataset(&pairs, &scores, fraction, g.seed)?;
            emit(g, out.as_deref(), &jsonl::to_string(&split))?;
            Ok(Outcome::Clean)
        }
        Command::Correlate { scores, series, split, manifest, out } => {
            let scores: Vec<FidelityScore> = jsonl::read(g.resolve(&scores))?;
            let pairs = match split {
                DatasetSplit::All => Vec::new(),
                _ => read_manifest(g, manifest.as_deref())?,
            };
            let mut all = Vec::new();
            for path in &series {
                let path = g.resolve(path);
                all.extend(correlate::load_series_file(&path).with_context(|| path.display().to_string())?);
            }
            let report = correlate::benchmark(&scores, &pairs, &all, split);
            if let Some(out) = out {
                write_file(&g.resolve(&out), &serde_json::to_string_pretty(&report)?)?;
            }
            print!("{}", report.to_table());
            Ok(Outcome::from_failures(report.rows.iter().filter(|r| r.error.is_some()).count()))
        }
        Command::Report { scores, buckets, manifest, out } => {
            let scores: Vec<FidelityScore> = jsonl::read(g.resolve(&scores))?;
            let path = g.manifest(manifest.as_deref());
            // The manifest only adds per-model grouping here.
            let pairs = if manifest.is_some() || path.is_file() { read_manifest(g, manifest.as_deref())? } else { Vec::new() };
            let report = distribution_report(&scores, &pairs, buckets)?;
            emit(g, out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
            Ok(Outcome::Clean)
        }
        Command::Serve { config } => serve(&g.resolve(&config)),
    }
}

fn read_manifest(g: &Global, explicit: Option<&Path>) -> Result<Vec<PairRecord>> {
    let path = g.manifest(explicit);
    let pairs: Vec<PairRecord> = jsonl::read(&path).with_context(|| format!("manifest {}", path.display()))?;
    validate_manifest(&pairs)?;
    Ok(pairs)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, text).with_context(|| path.display().to_string())
}

/// Writes to `out` if given, else stdout.
fn emit(g: &Global, out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_file(&g.resolve(p), text),
        None => {
            std::io::stdout().lock().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// FNV-1a over the file name, so each image's recipe is independent of directory order.
fn name_seed(seed: u64, name: &str) -> u64 {
    let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    seed ^ h
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

fn degrade(g: &Global, gt_dir: &Path, out_dir: &Path, severity: SeverityLevel) -> Result<Outcome> {
    let gt_dir = g.resolve(gt_dir);
    let out_dir = g.resolve(out_dir);
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(&gt_dir)
        .with_context(|| format!("cannot read {}", gt_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        tracing::warn!(dir = %gt_dir.display(), "no GT images found");
        return Ok(Outcome::Clean);
    }
    std::fs::create_dir_all(&out_dir).with_context(|| out_dir.display().to_string())?;

    let failures: Vec<String> = inputs
        .par_iter()
        .map(|path| {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let lr_path = out_dir.join(Path::new(name).with_extension("png"));
            let run = || -> fidbench_core::Result<()> {
                let gt = prepare_gt(&load_image(path)?)?;
                let recipe = sample_recipe(name_seed(g.seed, name), severity);
                let lr = apply_degradation(&gt, &recipe)?;
                save_image(&lr, &lr_path, SaveFormat::Png)?;
                recipe.save(recipe_sidecar(&lr_path))
            };
            run().err().map(|e| format!("{}: {e}", path.display()))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    for f in &failures {
        tracing::error!("{f}");
    }
    tracing::info!(written = inputs.len() - failures.len(), out = %out_dir.display(), "degradation done");
    Ok(Outcome::from_failures(failures.len()))
}

fn score(g: &Global, manifest: &Path, metrics: &[String], out: Option<&Path>) -> Result<Outcome> {
    let metrics: Vec<Metric> = metrics.iter().map(|m| m.parse()).collect::<fidbench_core::Result<_>>()?;
    if metrics.is_empty() {
        bail!("no metrics requested");
    }
    let pairs = read_manifest(g, Some(manifest))?;
    let records: Vec<MetricRecord> = pairs
        .par_iter()
        .flat_map_iter(|p| {
            let loaded = load_image(g.resolve(&p.gt_path))
                .and_then(|gt| Ok((to_luma(&gt), to_luma(&load_image(g.resolve(&p.sr_path))?))));
            metrics
                .iter()
                .map(|&m| match &loaded {
                    Ok((gt, sr)) => match m.compute(gt, sr) {
                        Ok(v) => MetricRecord::from_value(&p.pair_id, &v),
                        Err(e) => MetricRecord::from_error(&p.pair_id, m, &e),
                    },
                    Err(e) => MetricRecord::from_error(&p.pair_id, m, e),
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    emit(g, out, &jsonl::to_string(&records))?;
    Ok(Outcome::from_failures(failures))
}

fn hlf(g: &Global, manifest: &Path, model: &Path, out: Option<&Path>) -> Result<Outcome> {
    let backend = EmbeddingBackend::from_spec_file(g.resolve(model)).context("loading embedding model")?;
    let model_name = backend.spec().model_name();
    let pairs = read_manifest(g, Some(manifest))?;
    // A backend is not shareable across threads, so pairs run sequentially.
    let mut records = Vec::with_capacity(pairs.len());
    let mut failures = 0;
    for p in &pairs {
        let result = load_image(g.resolve(&p.gt_path))
            .and_then(|gt| Ok((gt, load_image(g.resolve(&p.sr_path))?)))
            .and_then(|(gt, sr)| hlf_score(&backend, &gt, &sr, &p.pair_id));
        match result {
            Ok(s) => records.push(HlfRecord {
                pair_id: s.pair_id,
                cosine: s.cosine,
                change_score: s.change_score,
                model_name: model_name.clone(),
            }),
            Err(e) => {
                failures += 1;
                tracing::error!(pair = %p.pair_id, "{e}");
            }
        }
    }
    emit(g, out, &jsonl::to_string(&records))?;
    Ok(Outcome::from_failures(failures))
}

fn serve(config: &Path) -> Result<Outcome> {
    let config = fidbench_service::ServiceConfig::load(config)?;
    let addr = config.bind_address.clone();
    let state = fidbench_service::AppState::open(config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        fidbench_service::serve(state, listener, shutdown_signal()).await?;
        Ok(Outcome::Clean)
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}
