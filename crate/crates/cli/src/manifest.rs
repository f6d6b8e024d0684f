//! Run manifests: the resolved configuration written before a run starts,
//! sufficient to reproduce it exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub created_utc: String,
}

impl Meta {
    pub fn now() -> Self {
        Self {
            tool: "dirl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_utc: chrono::Utc::now().to_rfc3339(),
        }
    }
}

/// Fully resolved settings of one session arm.
#[derive(Debug, Clone, Serialize)]
pub struct SessionSpec {
    pub label: String,
    pub stations: u32,
    pub episodes: u64,
    pub master_seed: u64,
    pub deposit_interval: u64,
    pub transfer_enabled: bool,
    pub trust: f64,
    pub initial_knowledge: Option<PathBuf>,
    pub initial_stock: i64,
    pub threshold: f64,
    pub flow_bound: i64,
    pub flow_mode: String,
    pub flow_file: Option<PathBuf>,
    pub actions: Vec<i64>,
    pub learning_rate: String,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_fraction: f64,
    pub workers: usize,
}

#[derive(Debug, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum RunManifest {
    Train {
        #[serde(flatten)]
        meta: Meta,
        session: Box<SessionSpec>,
        artifacts: TrainArtifacts,
    },
    Benchmark {
        #[serde(flatten)]
        meta: Meta,
        first_n: u64,
        naive: Box<SessionSpec>,
        experienced: Box<SessionSpec>,
        artifacts: BenchmarkArtifacts,
    },
}

#[derive(Debug, Serialize)]
pub struct TrainArtifacts {
    pub episodes_csv: PathBuf,
    pub summary_txt: PathBuf,
    pub knowledge_file: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct BenchmarkArtifacts {
    pub naive_episodes_csv: PathBuf,
    pub experienced_episodes_csv: PathBuf,
    pub transfer_txt: PathBuf,
}

pub fn write(manifest: &RunManifest, path: &Path) -> Result<(), CliError> {
    let mut json = serde_json::to_string_pretty(manifest)
        .map_err(|e| CliError::runtime(format!("serializing manifest: {e}")))?;
    json.push('\n');
    fs::write(path, json).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}
