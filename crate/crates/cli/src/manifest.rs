//! Run artifacts: `rounds.csv`, `log.json` and `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use fedoui_core::config::ExperimentConfig;
use fedoui_core::harness::{ExperimentLog, FitRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const LOG_JSON: &str = "log.json";
pub const MANIFEST_JSON: &str = "manifest.json";

pub const ROUNDS_HEADER: &str = "round,test_accuracy,mean_train_loss,selected_ids,oui_values,\
scores,weights,alpha,beta,degenerate_fit,sample_counts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    /// SHA-256 hex digest per artifact file name.
    pub checksums: BTreeMap<String, String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

/// One line per round; per-client lists are `;`-joined in selection order.
pub fn rounds_csv(log: &ExperimentLog) -> String {
    let mut out = String::from(ROUNDS_HEADER);
    out.push('\n');
    for r in &log.records {
        let (alpha, beta, degenerate) = match r.fit {
            FitRecord::Fitted { alpha, beta } => (alpha.to_string(), beta.to_string(), 0),
            FitRecord::Degenerate => (String::new(), String::new(), 1),
            FitRecord::Unused => (String::new(), String::new(), 0),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.test_accuracy,
            r.mean_train_loss,
            join(&r.selected),
            join(&r.oui_values),
            join(&r.scores),
            join(&r.weights),
            alpha,
            beta,
            degenerate,
            join(&r.sample_counts),
        )
        .expect("writing to a String");
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Writes the three artifacts and returns the manifest.
pub fn write_run(
    dir: &Path,
    log: &ExperimentLog,
    config_path: Option<&Path>,
    started_at: u64,
) -> Result<RunManifest, CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = rounds_csv(log);
    let json = serde_json::to_string_pretty(log).context("serializing log")?;
    let mut checksums = BTreeMap::new();
    for (name, body) in [(ROUNDS_CSV, csv.as_bytes()), (LOG_JSON, json.as_bytes())] {
        let path = dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        checksums.insert(name.to_string(), sha256_hex(body));
    }
    let manifest = RunManifest {
        config_path: config_path.map(Path::to_path_buf),
        config: log.config.clone(),
        output_dir: dir.to_path_buf(),
        started_at,
        finished_at: unix_now(),
        checksums,
    };
    let path = dir.join(MANIFEST_JSON);
    let body = serde_json::to_string_pretty(&manifest).context("serializing manifest")?;
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

pub fn read_log(path: &Path) -> anyhow::Result<ExperimentLog> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// True when `dir` holds a manifest whose recorded checksums match the
/// artifacts on disk.
pub fn run_is_complete(dir: &Path) -> bool {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST_JSON)) else {
        return false;
    };
    let Ok(manifest) = serde_json::from_str::<RunManifest>(&text) else {
        return false;
    };
    [ROUNDS_CSV, LOG_JSON].iter().all(|name| {
        let Some(expected) = manifest.checksums.get(*name) else {
            return false;
        };
        fs::read(dir.join(name)).is_ok_and(|b| &sha256_hex(&b) == expected)
    })
}
