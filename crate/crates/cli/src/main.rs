//! `fidbench`: one binary for every stage of the fidelity benchmark.
//!
//! Exit codes: 0 success, 1 some records failed (the rest were written),
//! 2 usage or environment errors.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fidbench_core::correlate::DatasetSplit;
use fidbench_core::SeverityLevel;

#[derive(Parser, Debug)]
#[command(name = "fidbench", version, about = "High-level fidelity benchmark for super-resolution outputs")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Base directory for relative paths.
    #[arg(long, global = true, default_value = ".")]
    data_dir: PathBuf,

    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads for batch work (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log filter, e.g. `info` or `fidbench=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
}

impl Global {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }

    /// The default manifest location inside the data directory.
    pub fn manifest(&self, explicit: Option<&Path>) -> PathBuf {
        self.resolve(explicit.unwrap_or(Path::new("manifest.jsonl")))
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize x4 low-resolution inputs with recipe sidecars.
    Degrade {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "severe")]
        severity: SeverityLevel,
    },
    /// Compute full-reference metrics for every manifest pair.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "psnr,ssim,vif")]
        metrics: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding-based change scores through an ONNX backbone.
    Hlf {
        #[arg(long)]
        manifest: PathBuf,
        /// Model spec sidecar (JSON).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified selection of study pairs by similarity.
    Select {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        total: usize,
        #[arg(long, default_value_t = fidbench_core::study::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fidelity scores from an annotation log.
    Aggregate {
        #[arg(long)]
        events: PathBuf,
        /// Defaults to `manifest.jsonl` in the data directory.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-annotator trap statistics here.
        #[arg(long)]
        statuses: Option<PathBuf>,
    },
    /// Assign final-scored pairs to train/test, stratified by model.
    Split {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Updated manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate scorer series against human fidelity scores.
    Correlate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        series: Vec<PathBuf>,
        #[arg(long, default_value = "test")]
        split: DatasetSplit,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// JSON report; the text table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fidelity score histograms, overall and per model.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 10)]
        buckets: usize,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the annotation service until interrupted.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.global.log_level)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();

    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    match commands::run(&cli.global, cli.command) {
        Ok(commands::Outcome::Clean) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial(n)) => {
            eprintln!("warning: {n} record(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
