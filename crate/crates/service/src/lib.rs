//! HTTP backend for the binary fidelity study.
//!
//! Annotators log in by name and receive a queue of pairs; every accepted
//! answer is appended to the study log before the response is sent. Trap
//! pairs are scheduled like any other pair and nothing in an annotator-facing
//! payload marks them.

mod config;
mod routes;
pub mod scheduler;

use std::collections::{HashMap, VecDeque};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use fidbench_core::{jsonl, PairRecord, StudyStore};

pub use config::{ServiceConfig, DEFAULT_TRAP_RATE};
pub use routes::router;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Study(#[from] fidbench_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub(crate) struct Session {
    pub annotator_id: String,
    pub created_at: DateTime<Utc>,
    pub queue: VecDeque<String>,
    /// When the current head was last handed out by `next`.
    pub presented_at: Option<DateTime<Utc>>,
}

/// Shared state behind every handler.
pub struct AppState {
    pub(crate) config: ServiceConfig,
    pub(crate) store: StudyStore,
    pub(crate) sessions: Mutex<HashMap<String, Session>>,
}

impl AppState {
    /// Loads the manifest from the data directory and replays the event log.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let pairs: Vec<PairRecord> = jsonl::read(config.manifest_path())?;
        std::fs::create_dir_all(&config.data_dir)?;
        let store = StudyStore::open(config.log_path(), pairs)?;
        Ok(Arc::new(Self {
            config,
            store,
            sessions: Mutex::new(HashMap::new()),
        }))
    }

    pub fn store(&self) -> &StudyStore {
        &self.store
    }

    pub(crate) fn image_path(&self, path: &std::path::Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.config.images_dir.join(path)
        }
    }
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    tracing::info!("annotation service stopped");
    Ok(())
}
