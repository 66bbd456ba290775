//! Generated-document production: source selection, prompt assembly,
//! length policy and batch orchestration.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Method, Provenance, QueryRecord, RELEVANCE_THRESHOLD};
use crate::gateway::{content_hash, GatewayError, TextGenerator};
use crate::metrics::Judgments;
use crate::prompts::{self, Prompt};
use crate::rag::{contains_answer, MatchMode};
use crate::run::RankedList;
use crate::text;

/// Candidate depth for source selection and random partners.
pub const SELECTION_DEPTH: usize = 1000;
pub const GROUP_SIZE: usize = 10;
/// Ranks 1-5 feed the RAG context, so sources come from rank 6 on.
pub const RAG_WINDOW: Range<usize> = 5..SELECTION_DEPTH;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, thiserror::Error)]
pub enum EnrichError {
    #[error("method {method} takes {expected} source documents, got {got}")]
    ArityMismatch { method: Method, expected: usize, got: usize },
    #[error("query {query_id:?} has {available} relevant documents, {need} needed")]
    InsufficientRelevant { query_id: String, need: usize, available: usize },
    #[error("query {0:?} has no eligible random partner")]
    NoEligiblePartner(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("invalid length policy: min_words {min} > max_words {max}")]
    InvalidPolicy { min: usize, max: usize },
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
}

/// A per-query seed, so selections do not depend on processing order.
pub fn query_seed(seed: u64, query_id: &str) -> u64 {
    let h = content_hash(&[&seed.to_string(), query_id]);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

fn query_rng(seed: u64, query_id: &str, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(query_seed(seed, &format!("{query_id}\u{1f}{purpose}")))
}

/// Up to `need` relevant doc ids: one random relevant doc from each group of
/// ten ranks (in rank order), then a uniform sample of the remaining relevant
/// docs. Returns fewer than `need` only when the judgments run out.
pub fn select_relevant_groupwise(
    ranked: &RankedList,
    judgments: &Judgments,
    need: usize,
    seed: u64,
) -> Vec<String> {
    let mut rng = query_rng(seed, &ranked.query_id, "sources");
    let relevant = |d: &str| judgments.get(d).is_some_and(|&g| g >= RELEVANCE_THRESHOLD);
    let top = &ranked.entries[..ranked.len().min(SELECTION_DEPTH)];
    let mut chosen: Vec<String> = Vec::with_capacity(need);
    for group in top.chunks(GROUP_SIZE) {
        if chosen.len() >= need {
            break;
        }
        let rel: Vec<&str> = group
            .iter()
            .map(|e| e.doc_id.as_str())
            .filter(|d| relevant(d))
            .collect();
        if !rel.is_empty() {
            chosen.push(rel[rng.gen_range(0..rel.len())].to_string());
        }
    }
    if chosen.len() < need {
        let taken: BTreeSet<&str> = chosen.iter().map(String::as_str).collect();
        let rest: Vec<&String> = judgments
            .iter()
            .filter(|(d, &g)| g >= RELEVANCE_THRESHOLD && !taken.contains(d.as_str()))
            .map(|(d, _)| d)
            .collect();
        let extra: Vec<String> = rest
            .choose_multiple(&mut rng, need - chosen.len())
            .map(|d| (*d).clone())
            .collect();
        chosen.extend(extra);
    }
    chosen
}

pub fn select_source_docs_adhoc(
    ranked: &RankedList,
    judgments: &Judgments,
    need: usize,
    seed: u64,
) -> Result<Vec<String>, EnrichError> {
    let available = judgments.values().filter(|&&g| g >= RELEVANCE_THRESHOLD).count();
    if available < need {
        return Err(EnrichError::InsufficientRelevant {
            query_id: ranked.query_id.clone(),
            need,
            available,
        });
    }
    Ok(select_relevant_groupwise(ranked, judgments, need, seed))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RagSelection {
    Selected { doc_ids: Vec<String> },
    Insufficient { found: Vec<String> },
}

/// Scans ranks 6..=1000 in order for documents containing a gold answer.
pub fn select_source_docs_rag(
    ranked: &RankedList,
    answers: &[String],
    corpus: &Corpus,
    need: usize,
    mode: MatchMode,
) -> Result<RagSelection, EnrichError> {
    let mut found = Vec::new();
    let end = ranked.len().min(RAG_WINDOW.end);
    for entry in ranked.entries.get(RAG_WINDOW.start..end).unwrap_or(&[]) {
        if found.len() == need {
            break;
        }
        let doc = corpus
            .get(&entry.doc_id)
            .ok_or_else(|| EnrichError::UnknownDocument(entry.doc_id.clone()))?;
        if contains_answer(&doc.text, answers, mode) {
            found.push(entry.doc_id.clone());
        }
    }
    Ok(if found.len() == need {
        RagSelection::Selected { doc_ids: found }
    } else {
        RagSelection::Insufficient { found }
    })
}

/// Uniform choice among the docs at 0-based positions `window` that are not
/// in `excluded`. One draw per (query, seed).
pub fn select_random_partner(
    ranked: &RankedList,
    window: Range<usize>,
    excluded: &BTreeSet<String>,
    seed: u64,
) -> Result<String, EnrichError> {
    let end = window.end.min(ranked.len());
    let eligible: Vec<&str> = ranked
        .entries
        .get(window.start.min(end)..end)
        .unwrap_or(&[])
        .iter()
        .map(|e| e.doc_id.as_str())
        .filter(|d| !excluded.contains(*d))
        .collect();
    if eligible.is_empty() {
        return Err(EnrichError::NoEligiblePartner(ranked.query_id.clone()));
    }
    let mut rng = query_rng(seed, &ranked.query_id, "partner");
    Ok(eligible[rng.gen_range(0..eligible.len())].to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    method: Method,
    query: QueryRecord,
    source_docs: Vec<Document>,
    model_tag: String,
    temperature: f64,
}

impl GenerationRequest {
    pub fn new(
        method: Method,
        query: QueryRecord,
        source_docs: Vec<Document>,
        model_tag: impl Into<String>,
    ) -> Result<Self, EnrichError> {
        if source_docs.len() != method.arity() {
            return Err(EnrichError::ArityMismatch {
                method,
                expected: method.arity(),
                got: source_docs.len(),
            });
        }
        Ok(GenerationRequest {
            method,
            query,
            source_docs,
            model_tag: model_tag.into(),
            temperature: 0.0,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn query(&self) -> &QueryRecord {
        &self.query
    }

    pub fn source_docs(&self) -> &[Document] {
        &self.source_docs
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn generated_doc_id(&self) -> String {
        generated_doc_id(self.method, &self.model_tag, &self.query.query_id)
    }
}

pub fn generated_doc_id(method: Method, model_tag: &str, query_id: &str) -> String {
    format!("gen-{method}-{model_tag}-{query_id}")
}

pub fn build_prompt(request: &GenerationRequest) -> Prompt {
    let q = request.query.text.as_str();
    let docs: Vec<&str> = request.source_docs.iter().map(|d| d.text.as_str()).collect();
    match request.method {
        Method::ZeroShot => prompts::zero_shot(q),
        Method::DocModification => prompts::modification(q, docs[0]),
        _ => prompts::summary(q, &docs),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthMode {
    TruncateAndDiscard,
    #[default]
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthPolicy {
    pub max_words: usize,
    pub min_words: usize,
    pub mode: LengthMode,
}

impl Default for LengthPolicy {
    fn default() -> Self {
        LengthPolicy {
            max_words: 100,
            min_words: 80,
            mode: LengthMode::Off,
        }
    }
}

impl LengthPolicy {
    pub fn enforced() -> Self {
        LengthPolicy {
            mode: LengthMode::TruncateAndDiscard,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnrichError> {
        if self.min_words > self.max_words {
            return Err(EnrichError::InvalidPolicy {
                min: self.min_words,
                max: self.max_words,
            });
        }
        Ok(())
    }

    /// `None` when the text is too short to keep.
    pub fn apply(&self, generated: &str) -> Option<String> {
        match self.mode {
            LengthMode::Off => Some(generated.to_string()),
            LengthMode::TruncateAndDiscard => {
                let n = text::word_count(generated);
                if n < self.min_words {
                    None
                } else if n > self.max_words {
                    Some(text::truncate_words(generated, self.max_words))
                } else {
                    Some(generated.to_string())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenerationOutcome {
    Generated(Document),
    Discarded { word_count: usize },
}

pub fn generate_document(
    request: &GenerationRequest,
    policy: &LengthPolicy,
    generator: &dyn TextGenerator,
    max_tokens: u32,
) -> Result<GenerationOutcome, EnrichError> {
    let prompt = build_prompt(request);
    let raw = generator.generate(&prompt, request.temperature, max_tokens)?;
    let Some(text) = policy.apply(&raw) else {
        return Ok(GenerationOutcome::Discarded {
            word_count: text::word_count(&raw),
        });
    };
    if text::word_count(&text) == 0 {
        return Ok(GenerationOutcome::Discarded { word_count: 0 });
    }
    let provenance = Provenance::generated(
        request.method,
        request.model_tag.clone(),
        request.query.query_id.clone(),
        request.source_docs.iter().map(|d| d.doc_id.clone()).collect(),
    );
    Ok(GenerationOutcome::Generated(
        Document::new(request.generated_doc_id(), text).with_provenance(provenance),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Adhoc,
    Rag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Generated,
    Discarded,
    Insufficient,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub status: QueryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task: Task,
    pub method: Method,
    pub model_tag: String,
    pub seed: u64,
    pub policy: LengthPolicy,
    pub queries: BTreeMap<String, QueryOutcome>,
}

impl RunManifest {
    pub fn count(&self, status: QueryStatus) -> usize {
        self.queries.values().filter(|o| o.status == status).count()
    }
}

#[derive(Clone, Debug)]
pub struct EnrichConfig {
    pub task: Task,
    pub method: Method,
    pub model_tag: String,
    pub seed: u64,
    pub policy: LengthPolicy,
    pub max_tokens: u32,
    pub match_mode: MatchMode,
}

impl EnrichConfig {
    pub fn new(task: Task, method: Method, model_tag: impl Into<String>, seed: u64) -> Self {
        EnrichConfig {
            task,
            method,
            model_tag: model_tag.into(),
            seed,
            policy: match task {
                Task::Adhoc => LengthPolicy::default(),
                Task::Rag => LengthPolicy::enforced(),
            },
            max_tokens: DEFAULT_MAX_TOKENS,
            match_mode: MatchMode::default(),
        }
    }
}

pub struct EnrichOutput {
    pub documents: Vec<Document>,
    pub manifest: RunManifest,
}

enum Sources {
    Ready(Vec<String>),
    Insufficient(String),
}

fn choose_sources(
    config: &EnrichConfig,
    corpus: &Corpus,
    query: &QueryRecord,
    ranked: &RankedList,
) -> Result<Sources, EnrichError> {
    let method = config.method;
    if method == Method::ZeroShot {
        return Ok(Sources::Ready(Vec::new()));
    }
    match config.task {
        Task::Adhoc => {
            let need = method.relevant_sources();
            let mut ids = match select_source_docs_adhoc(ranked, &query.qrels, need, config.seed) {
                Ok(ids) => ids,
                Err(e @ EnrichError::InsufficientRelevant { .. }) => {
                    return Ok(Sources::Insufficient(e.to_string()))
                }
                Err(e) => return Err(e),
            };
            if method == Method::TwoDocSummaryRandom {
                let excluded: BTreeSet<String> =
                    query.relevant_ids().into_iter().map(String::from).collect();
                match select_random_partner(ranked, 0..SELECTION_DEPTH, &excluded, config.seed) {
                    Ok(p) => ids.push(p),
                    Err(e) => return Ok(Sources::Insufficient(e.to_string())),
                }
            }
            Ok(Sources::Ready(ids))
        }
        Task::Rag => {
            let need = method.relevant_sources();
            let sel = select_source_docs_rag(ranked, &query.gold_answers, corpus, need, config.match_mode)?;
            let mut ids = match sel {
                RagSelection::Selected { doc_ids } => doc_ids,
                RagSelection::Insufficient { found } => {
                    return Ok(Sources::Insufficient(format!(
                        "{} of {need} answer-bearing documents in ranks 6-1000",
                        found.len()
                    )))
                }
            };
            if method == Method::TwoDocSummaryRandom {
                let mut excluded = BTreeSet::new();
                for e in ranked.entries.iter().take(SELECTION_DEPTH) {
                    let doc = corpus
                        .get(&e.doc_id)
                        .ok_or_else(|| EnrichError::UnknownDocument(e.doc_id.clone()))?;
                    if contains_answer(&doc.text, &query.gold_answers, config.match_mode) {
                        excluded.insert(e.doc_id.clone());
                    }
                }
                match select_random_partner(ranked, RAG_WINDOW, &excluded, config.seed) {
                    Ok(p) => ids.push(p),
                    Err(e) => return Ok(Sources::Insufficient(e.to_string())),
                }
            }
            Ok(Sources::Ready(ids))
        }
    }
}

fn enrich_one(
    config: &EnrichConfig,
    corpus: &Corpus,
    query: &QueryRecord,
    ranked: Option<&RankedList>,
    generator: &dyn TextGenerator,
) -> Result<(QueryOutcome, Option<Document>), EnrichError> {
    let empty = RankedList::new(query.query_id.clone(), Vec::new());
    let sources = choose_sources(config, corpus, query, ranked.unwrap_or(&empty))?;
    let ids = match sources {
        Sources::Ready(ids) => ids,
        Sources::Insufficient(detail) => {
            return Ok((
                QueryOutcome {
                    status: QueryStatus::Insufficient,
                    doc_id: None,
                    source_doc_ids: Vec::new(),
                    detail: Some(detail),
                },
                None,
            ))
        }
    };
    let docs = ids
        .iter()
        .map(|d| {
            corpus
                .get(d)
                .cloned()
                .ok_or_else(|| EnrichError::UnknownDocument(d.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let request = GenerationRequest::new(config.method, query.clone(), docs, config.model_tag.clone())?;
    match generate_document(&request, &config.policy, generator, config.max_tokens) {
        Ok(GenerationOutcome::Generated(doc)) => Ok((
            QueryOutcome {
                status: QueryStatus::Generated,
                doc_id: Some(doc.doc_id.clone()),
                source_doc_ids: ids,
                detail: None,
            },
            Some(doc),
        )),
        Ok(GenerationOutcome::Discarded { word_count }) => Ok((
            QueryOutcome {
                status: QueryStatus::Discarded,
                doc_id: None,
                source_doc_ids: ids,
                detail: Some(format!("{word_count} words")),
            },
            None,
        )),
        Err(EnrichError::Backend(e)) => Ok((
            QueryOutcome {
                status: QueryStatus::Failed,
                doc_id: None,
                source_doc_ids: ids,
                detail: Some(e.to_string()),
            },
            None,
        )),
        Err(e) => Err(e),
    }
}

/// Generates one document per query. `rankings` holds the lexical top-1000
/// per query (unused for zero-shot). Per-query backend failures are
/// recorded in the manifest, not raised.
pub fn enrich(
    config: &EnrichConfig,
    corpus: &Corpus,
    queries: &[QueryRecord],
    rankings: &BTreeMap<String, RankedList>,
    generator: &dyn TextGenerator,
) -> Result<EnrichOutput, EnrichError> {
    config.policy.validate()?;
    let results = queries
        .par_iter()
        .map(|q| {
            enrich_one(config, corpus, q, rankings.get(&q.query_id), generator)
                .map(|r| (q.query_id.clone(), r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut documents = Vec::new();
    let mut outcomes = BTreeMap::new();
    for (qid, (outcome, doc)) in results {
        documents.extend(doc);
        outcomes.insert(qid, outcome);
    }
    documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(EnrichOutput {
        documents,
        manifest: RunManifest {
            task: config.task,
            method: config.method,
            model_tag: config.model_tag.clone(),
            seed: config.seed,
            policy: config.policy,
            queries: outcomes,
        },
    })
}
