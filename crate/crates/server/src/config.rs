//! Server configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bigthick_core::service::ServiceConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub experiment_id: String,
    /// Seconds between background ticks (expiry sweeps and avoid-window refresh).
    pub tick_seconds: u64,
    /// Directory served under `/ui`; a placeholder page when absent.
    pub ui_dir: Option<PathBuf>,
    pub service: ServiceConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("data"),
            experiment_id: "experiment".into(),
            tick_seconds: 60,
            ui_dir: None,
            service: ServiceConfig { client_clock: false, ..ServiceConfig::default() },
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.data_dir.is_relative() {
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        if let Some(ui) = cfg.ui_dir.as_mut().filter(|u| u.is_relative()) {
            *ui = base.join(&*ui);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.tick_seconds < 1 {
            bail!("tick_seconds must be at least 1");
        }
        let s = &self.service;
        if s.researcher_token.is_empty() || s.token_secret.is_empty() {
            bail!("researcher_token and token_secret must be non-empty");
        }
        // participant tokens live in the `pt-` namespace
        if s.researcher_token.starts_with("pt-") {
            bail!("researcher_token must not start with `pt-`");
        }
        Ok(())
    }
}
