use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{content_hash, GatewayError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriptMode {
    #[default]
    Off,
    Record,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    key: String,
    endpoint: String,
    request: Value,
    response: Value,
}

/// Request/response log keyed by a hash of (endpoint, request body), so that
/// replays are independent of call order. Saved as JSONL sorted by key.
pub struct Transcript {
    path: PathBuf,
    mode: TranscriptMode,
    entries: Mutex<BTreeMap<String, Entry>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::InvalidRequest(format!("transcript {}: {e}", path.display()))
}

impl Transcript {
    /// Loads an existing transcript. Replay requires the file; record starts
    /// from its contents when present.
    pub fn open(path: &Path, mode: TranscriptMode) -> Result<Self, GatewayError> {
        let mut entries = BTreeMap::new();
        match File::open(path) {
            Ok(f) => {
                for line in BufReader::new(f).lines() {
                    let line = line.map_err(|e| io_err(path, e))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: Entry = serde_json::from_str(&line).map_err(|e| io_err(path, e))?;
                    entries.insert(entry.key.clone(), entry);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode == TranscriptMode::Record => {}
            Err(e) => return Err(io_err(path, e)),
        }
        Ok(Transcript {
            path: path.to_path_buf(),
            mode,
            entries: Mutex::new(entries),
        })
    }

    pub fn mode(&self) -> TranscriptMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key(endpoint: &str, req: &impl Serialize) -> String {
        let body = serde_json::to_string(req).expect("request serializes");
        content_hash(&[endpoint, &body])
    }

    pub fn replay<Resp: DeserializeOwned>(&self, endpoint: &str, key: &str) -> Result<Resp, GatewayError> {
        let entries = self.entries.lock().expect("transcript lock");
        let entry = entries.get(key).ok_or_else(|| GatewayError::ProtocolError {
            status: 0,
            body: format!("replay: no transcript entry for {endpoint} request {key}"),
        })?;
        serde_json::from_value(entry.response.clone()).map_err(|e| GatewayError::ProtocolError {
            status: 0,
            body: format!("replay: bad response for {key}: {e}"),
        })
    }

    /// Stores a response. A second, different response for the same request
    /// means the backend is not deterministic and is reported as an error.
    pub fn record(
        &self,
        endpoint: &str,
        key: String,
        req: &impl Serialize,
        resp: &impl Serialize,
    ) -> Result<(), GatewayError> {
        let response = serde_json::to_value(resp).expect("response serializes");
        let mut entries = self.entries.lock().expect("transcript lock");
        if let Some(existing) = entries.get(&key) {
            if existing.response != response {
                return Err(GatewayError::ProtocolError {
                    status: 0,
                    body: format!("replay mismatch: {endpoint} request {key} returned a different response"),
                });
            }
            return Ok(());
        }
        entries.insert(
            key.clone(),
            Entry {
                key,
                endpoint: endpoint.to_string(),
                request: serde_json::to_value(req).expect("request serializes"),
                response,
            },
        );
        Ok(())
    }

    pub fn save(&self) -> Result<(), GatewayError> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(&self.path, e))?;
        }
        let file = File::create(&self.path).map_err(|e| io_err(&self.path, e))?;
        let mut out = BufWriter::new(file);
        let entries = self.entries.lock().expect("transcript lock");
        for entry in entries.values() {
            serde_json::to_writer(&mut out, entry).map_err(|e| io_err(&self.path, e))?;
            out.write_all(b"\n").map_err(|e| io_err(&self.path, e))?;
        }
        out.flush().map_err(|e| io_err(&self.path, e))
    }
}
