//! Deterministic in-process backends for offline runs and tests.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::wire::*;
use super::{content_hash, Backend, GatewayError};
use crate::index::tokenize_and_stem;
use crate::prompts::Prompt;
use crate::segment::segment_sentences;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GenerateMock {
    /// Returns the content of the named slot, or of the last slot.
    Echo {
        #[serde(default)]
        slot: Option<String>,
    },
    /// Query-biased extractive summaries for generation prompts; the
    /// best-overlapping passage sentence for question prompts.
    Template,
    /// Looks the prompt up by content hash.
    ScriptedTable { table: BTreeMap<String, String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EmbedMock {
    /// Feature-hashed stemmed-token counts, L2-normalized.
    HashEmbedding { dim: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NliMock {
    /// `|tokens(premise) ∩ tokens(hypothesis)| / |tokens(hypothesis)|`.
    LexicalOverlap,
    /// Looks `(premise, hypothesis)` up by content hash.
    ScriptedTable { table: BTreeMap<String, f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockSpec {
    pub generate: GenerateMock,
    pub embed: EmbedMock,
    pub nli: NliMock,
}

impl Default for MockSpec {
    fn default() -> Self {
        MockSpec {
            generate: GenerateMock::Template,
            embed: EmbedMock::HashEmbedding { dim: 256 },
            nli: NliMock::LexicalOverlap,
        }
    }
}

/// Key under which scripted tables store an entry: the prompt text for
/// generation, `[premise, hypothesis]` for NLI.
pub fn scripted_key(parts: &[&str]) -> String {
    content_hash(parts)
}

pub struct MockBackend {
    spec: MockSpec,
}

impl MockBackend {
    pub fn new(spec: MockSpec) -> Self {
        MockBackend { spec }
    }
}

fn missing(what: &str) -> GatewayError {
    GatewayError::ProtocolError {
        status: 404,
        body: format!("scripted table has no entry for {what}"),
    }
}

impl Backend for MockBackend {
    fn generate(&self, req: &GenerateRequest, prompt: &Prompt) -> Result<GenerateResponse, GatewayError> {
        let text = match &self.spec.generate {
            GenerateMock::Echo { slot: Some(name) } => prompt
                .slot(name)
                .ok_or_else(|| GatewayError::ProtocolError {
                    status: 400,
                    body: format!("prompt has no slot {name:?}"),
                })?
                .to_string(),
            GenerateMock::Echo { slot: None } => prompt.last_slot().unwrap_or(&req.prompt).to_string(),
            GenerateMock::Template => template_response(prompt),
            GenerateMock::ScriptedTable { table } => table
                .get(&scripted_key(&[&req.prompt]))
                .cloned()
                .ok_or_else(|| missing("prompt"))?,
        };
        Ok(GenerateResponse { text })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        let EmbedMock::HashEmbedding { dim } = self.spec.embed;
        Ok(EmbedResponse {
            vectors: req.texts.iter().map(|t| hash_embedding(t, dim)).collect(),
            dim,
        })
    }

    fn nli(&self, req: &NliRequest) -> Result<NliResponse, GatewayError> {
        let score = match &self.spec.nli {
            NliMock::LexicalOverlap => lexical_overlap(&req.premise, &req.hypothesis),
            NliMock::ScriptedTable { table } => *table
                .get(&scripted_key(&[&req.premise, &req.hypothesis]))
                .ok_or_else(|| missing("premise/hypothesis pair"))?,
        };
        Ok(NliResponse { score })
    }
}

fn surface_tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn lexical_overlap(premise: &str, hypothesis: &str) -> f64 {
    let h = surface_tokens(hypothesis);
    if h.is_empty() {
        return 0.0;
    }
    let p = surface_tokens(premise);
    h.intersection(&p).count() as f64 / h.len() as f64
}

pub fn hash_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f64; dim.max(1)];
    for token in tokenize_and_stem(text) {
        let h = content_hash(&[&token]);
        let bucket = u64::from_str_radix(&h[..16], 16).expect("hex") % v.len() as u64;
        v[bucket as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter()
        .map(|x| if norm > 0.0 { (x / norm) as f32 } else { 0.0 })
        .collect()
}

fn overlap_count(sentence: &str, terms: &HashSet<String>) -> usize {
    tokenize_and_stem(sentence)
        .into_iter()
        .collect::<HashSet<_>>()
        .intersection(terms)
        .count()
}

fn template_response(prompt: &Prompt) -> String {
    if let Some(question) = prompt.slot("question") {
        let terms: HashSet<String> = tokenize_and_stem(question).into_iter().collect();
        let mut best: Option<(usize, String)> = None;
        for passage in prompt.slots_with_prefix("passage") {
            for s in segment_sentences(passage) {
                let n = overlap_count(&s.text, &terms);
                if best.as_ref().map_or(true, |(b, _)| n > *b) {
                    best = Some((n, s.text));
                }
            }
        }
        return best
            .map(|(_, s)| s)
            .unwrap_or_else(|| "I do not know.".to_string());
    }
    let query = prompt.slot("query").unwrap_or(prompt.text()).trim();
    let lead = format!("{}.", query.trim_end_matches(['.', '?', '!']));
    let documents: Vec<&str> = prompt.slots_with_prefix("document").collect();
    if documents.is_empty() {
        return format!("{lead} This paragraph explains {query} and the key facts about it.");
    }
    let terms: HashSet<String> = tokenize_and_stem(query).into_iter().collect();
    let mut parts = vec![lead];
    for doc in documents {
        let sentences = segment_sentences(doc);
        let chosen: Vec<String> = sentences
            .iter()
            .filter(|s| overlap_count(&s.text, &terms) > 0)
            .map(|s| s.text.clone())
            .collect();
        if chosen.is_empty() {
            parts.extend(sentences.first().map(|s| s.text.clone()));
        } else {
            parts.extend(chosen);
        }
    }
    parts.join(" ")
}
