//! Cosine re-ranking of lexical candidate lists.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::gateway::{content_hash, Embedder, GatewayError};
use crate::run::{RankedList, ScoredDoc};

#[derive(Debug, thiserror::Error)]
pub enum DenseError {
    #[error("no embedding for document {0}")]
    MissingEmbedding(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got} for {doc_id}")]
    DimensionMismatch { doc_id: String, expected: usize, got: usize },
    #[error("non-finite embedding entry for {0}")]
    NonFinite(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("embedding cache {path}: {reason}")]
    Cache { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub model_tag: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>, model_tag: impl Into<String>) -> Self {
        EmbeddingVector {
            values,
            model_tag: model_tag.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Cosine similarity in f64; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn check(doc_id: &str, v: &EmbeddingVector, expected: usize) -> Result<(), DenseError> {
    if v.dim() != expected {
        return Err(DenseError::DimensionMismatch {
            doc_id: doc_id.to_string(),
            expected,
            got: v.dim(),
        });
    }
    if v.values.iter().any(|x| !x.is_finite()) {
        return Err(DenseError::NonFinite(doc_id.to_string()));
    }
    Ok(())
}

/// Reorders all candidates by cosine to the query, ties by doc id.
pub fn rerank(
    candidates: &RankedList,
    query_embedding: &EmbeddingVector,
    doc_embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<RankedList, DenseError> {
    rerank_top_m(candidates, candidates.len(), query_embedding, doc_embeddings)
}

/// Re-ranks the first `m` candidates (clamped to the list length). The rest
/// keep their lexical order and get scores below every re-ranked entry.
pub fn rerank_top_m(
    candidates: &RankedList,
    m: usize,
    query_embedding: &EmbeddingVector,
    doc_embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<RankedList, DenseError> {
    let m = m.min(candidates.len());
    if m == 0 {
        return Ok(candidates.clone());
    }
    let dim = query_embedding.dim();
    check(&candidates.query_id, query_embedding, dim)?;
    let mut head = Vec::with_capacity(m);
    for entry in &candidates.entries[..m] {
        let emb = doc_embeddings
            .get(&entry.doc_id)
            .ok_or_else(|| DenseError::MissingEmbedding(entry.doc_id.clone()))?;
        check(&entry.doc_id, emb, dim)?;
        head.push(ScoredDoc {
            doc_id: entry.doc_id.clone(),
            score: cosine(&query_embedding.values, &emb.values),
        });
    }
    head.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    let tail = candidates.entries[m..].iter().enumerate().map(|(i, e)| ScoredDoc {
        doc_id: e.doc_id.clone(),
        score: -2.0 - i as f64,
    });
    head.extend(tail);
    Ok(RankedList::new(candidates.query_id.clone(), head))
}

const CACHE_FORMAT: &str = "enrichkit-embedding-cache";
const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    format: String,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    model_tag: String,
    content_hash: String,
    values: Vec<f32>,
}

/// Embeddings keyed by (model tag, content hash of the text). Safe for
/// concurrent use; values are deterministic so concurrent writers agree.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<BTreeMap<(String, String), Vec<f32>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, model_tag: &str, text: &str) -> Option<EmbeddingVector> {
        let key = (model_tag.to_string(), content_hash(&[text]));
        self.entries
            .read()
            .expect("cache lock")
            .get(&key)
            .map(|v| EmbeddingVector::new(v.clone(), model_tag))
    }

    pub fn insert(&self, model_tag: &str, text: &str, values: Vec<f32>) {
        let key = (model_tag.to_string(), content_hash(&[text]));
        self.entries.write().expect("cache lock").insert(key, values);
    }

    /// Embeds `texts`, sending only cache misses to the backend in batches.
    pub fn embed_cached(
        &self,
        embedder: &dyn Embedder,
        model_tag: &str,
        texts: &[String],
        batch_size: usize,
    ) -> Result<Vec<EmbeddingVector>, DenseError> {
        let mut misses: Vec<String> = texts
            .iter()
            .filter(|t| self.get(model_tag, t).is_none())
            .cloned()
            .collect();
        misses.sort();
        misses.dedup();
        for batch in misses.chunks(batch_size.max(1)) {
            let vectors = embedder.embed(batch, model_tag)?;
            for (text, v) in batch.iter().zip(vectors) {
                self.insert(model_tag, text, v);
            }
        }
        Ok(texts
            .iter()
            .map(|t| self.get(model_tag, t).expect("filled above"))
            .collect())
    }

    pub fn load(path: &Path) -> Result<Self, DenseError> {
        let err = |reason: String| DenseError::Cache {
            path: path.display().to_string(),
            reason,
        };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let header: CacheHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line.map_err(|e| err(e.to_string()))?)
                .map_err(|e| err(format!("bad header: {e}")))?,
            None => return Ok(Self::new()),
        };
        if header.format != CACHE_FORMAT || header.version != CACHE_VERSION {
            return Err(err(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let mut map = BTreeMap::new();
        for line in lines {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: CacheLine = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            map.insert((l.model_tag, l.content_hash), l.values);
        }
        Ok(EmbeddingCache {
            entries: RwLock::new(map),
        })
    }

    pub fn load_or_default(path: &Path) -> Result<Self, DenseError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DenseError> {
        let err = |e: std::io::Error| DenseError::Cache {
            path: path.display().to_string(),
            reason: e.to_string(),
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(err)?;
        }
        let mut out = BufWriter::new(File::create(path).map_err(err)?);
        let header = CacheHeader {
            format: CACHE_FORMAT.to_string(),
            version: CACHE_VERSION,
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from).map_err(err)?;
        out.write_all(b"\n").map_err(err)?;
        for ((model_tag, hash), values) in self.entries.read().expect("cache lock").iter() {
            let line = CacheLine {
                model_tag: model_tag.clone(),
                content_hash: hash.clone(),
                values: values.clone(),
            };
            serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from).map_err(err)?;
            out.write_all(b"\n").map_err(err)?;
        }
        out.flush().map_err(err)
    }
}
