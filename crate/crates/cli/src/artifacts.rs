//! Output directory layout, artifact writers and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use enrichkit::gateway::{content_hash, GatewayStats, TranscriptMode};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const LAYOUT: [&str; 4] = ["runs", "reports", "transcripts", "manifests"];

#[derive(Clone, Debug, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Writes files under the output directory and remembers what was written.
pub struct Artifacts {
    root: PathBuf,
    written: Vec<ArtifactRecord>,
}

impl Artifacts {
    pub fn create(root: &Path) -> Result<Self> {
        for d in LAYOUT {
            let dir = root.join(d);
            std::fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
        }
        Ok(Artifacts {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[ArtifactRecord] {
        &self.written
    }

    /// `rel` is relative to the output directory, e.g. `reports/adhoc.csv`.
    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(path.display(), e))?;
        self.written.push(ArtifactRecord {
            path: rel.to_string(),
            sha256: content_hash(&[&String::from_utf8_lossy(bytes)]),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::io(rel, e))?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, items: impl IntoIterator<Item = T>) -> Result<()> {
        let mut bytes = Vec::new();
        for item in items {
            serde_json::to_writer(&mut bytes, &item).map_err(|e| CliError::io(rel, e))?;
            bytes.push(b'\n');
        }
        self.write_bytes(rel, &bytes)
    }

    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::io(rel, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::io(rel, e))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::io(rel, e))?;
        self.write_bytes(rel, &bytes)
    }

    /// Writes `manifests/<command>.json`. This is the only artifact holding a
    /// timestamp.
    pub fn write_manifest(
        &mut self,
        command: &str,
        cfg: &RunConfig,
        gateway: Option<(GatewayStats, TranscriptMode, PathBuf)>,
        extra: Value,
    ) -> Result<()> {
        let config_json = serde_json::to_string(cfg).map_err(|e| CliError::io("config", e))?;
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let manifest = json!({
            "command": command,
            "config_hash": content_hash(&[&config_json]),
            "seed": cfg.seed,
            "versions": {
                "enrichkit-core": enrichkit::VERSION,
                "enrichkit-cli": env!("CARGO_PKG_VERSION"),
            },
            "created_unix": created,
            "config": serde_json::from_str::<Value>(&config_json).unwrap_or(Value::Null),
            "gateway": gateway.map(|(stats, mode, path)| json!({
                "stats": stats,
                "transcript_mode": mode,
                "transcript": (mode != TranscriptMode::Off).then(|| path.display().to_string()),
            })),
            "artifacts": self.written,
            "summary": extra,
        });
        let rel = format!("manifests/{command}.json");
        let path = self.root.join(&rel);
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::io(&rel, e))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes).map_err(|e| CliError::io(path.display(), e))
    }
}

/// Fixed-precision float for report tables.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.4}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v}")).unwrap_or_default()
}
