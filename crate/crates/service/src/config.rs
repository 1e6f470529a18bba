use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// One trap per this many regular pairs unless configured otherwise.
pub const DEFAULT_TRAP_RATE: f64 = 1.0 / 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind_address: String,
    /// Holds `manifest.jsonl` (input) and `events.jsonl` (the annotation log).
    pub data_dir: PathBuf,
    pub admin_token: String,
    /// Traps injected per regular pair in a session queue.
    #[serde(default = "default_trap_rate")]
    pub trap_rate: f64,
    /// Base for relative image paths in the manifest.
    pub images_dir: PathBuf,
    /// Static front-end assets served under `/`, if any.
    #[serde(default)]
    pub ui_dir: Option<PathBuf>,
}

fn default_trap_rate() -> f64 {
    DEFAULT_TRAP_RATE
}

impl ServiceConfig {
    /// Reads a config file. Relative directories are resolved against the
    /// directory containing the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for dir in [&mut cfg.data_dir, &mut cfg.images_dir] {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        if let Some(ui) = cfg.ui_dir.as_mut().filter(|d| d.is_relative()) {
            *ui = base.join(&*ui);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.admin_token.is_empty() {
            return Err(ServiceError::Config("admin_token must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.trap_rate) {
            return Err(ServiceError::Config(format!("trap_rate {} outside [0, 1]", self.trap_rate)));
        }
        if self.bind_address.parse::<std::net::SocketAddr>().is_err() {
            return Err(ServiceError::Config(format!("bad bind_address {:?}", self.bind_address)));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.data_dir.join("manifest.jsonl")
    }

    pub fn log_path(&self) -> PathBuf {
        self.data_dir.join("events.jsonl")
    }
}
