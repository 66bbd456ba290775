//! Question answering with and without retrieved passages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QueryRecord};
use crate::index::{CorpusSearcher, IndexError};
use crate::prompts::{self, Prompt, MAX_PASSAGES};
use crate::run::RankedList;
use crate::text::normalize_for_match;
use crate::gateway::TextGenerator;

pub const DEFAULT_ANSWER_TOKENS: u32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("{0} passages given, at most {MAX_PASSAGES} allowed")]
    TooManyPassages(usize),
    #[error("query {0:?} has no gold answers")]
    NoGoldAnswers(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// How gold answers are matched against a text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Substring after lowercasing and collapsing whitespace.
    #[default]
    Normalized,
    /// Literal substring.
    Raw,
    /// Normalized, and the match may not touch a letter or digit on either side.
    WordBoundary,
}

fn bounded_match(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(i, m)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

pub fn contains_answer(text: &str, answers: &[String], mode: MatchMode) -> bool {
    match mode {
        MatchMode::Raw => answers.iter().any(|a| !a.is_empty() && text.contains(a.as_str())),
        MatchMode::Normalized | MatchMode::WordBoundary => {
            let hay = normalize_for_match(text);
            answers.iter().any(|a| {
                let needle = normalize_for_match(a);
                if needle.is_empty() {
                    return false;
                }
                match mode {
                    MatchMode::WordBoundary => bounded_match(&hay, &needle),
                    _ => hay.contains(&needle),
                }
            })
        }
    }
}

pub fn answer_is_correct(answer_text: &str, gold_answers: &[String]) -> bool {
    contains_answer(answer_text, gold_answers, MatchMode::Normalized)
}

/// The plain question prompt without context, the passage prompt otherwise.
pub fn build_qa_prompt(question: &str, context: &[&Document]) -> Result<Prompt, RagError> {
    if context.len() > MAX_PASSAGES {
        return Err(RagError::TooManyPassages(context.len()));
    }
    if context.is_empty() {
        return Ok(prompts::question(question));
    }
    let passages: Vec<String> = context.iter().map(|d| d.indexed_text().into_owned()).collect();
    let refs: Vec<&str> = passages.iter().map(String::as_str).collect();
    Ok(prompts::question_with_passages(question, &refs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RagRun {
    pub query_id: String,
    pub retrieved: Option<RankedList>,
    pub prompt: String,
    pub answer_text: String,
    pub correct: bool,
    pub answer_in_top5: bool,
    pub generated_in_top5: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RagReport {
    pub runs: Vec<RagRun>,
    pub acc: f64,
    pub ans5: Option<f64>,
    pub gen5: Option<f64>,
    pub failures: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct RagConfig {
    pub match_mode: MatchMode,
    pub max_tokens: u32,
    pub depth: usize,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            match_mode: MatchMode::Normalized,
            max_tokens: DEFAULT_ANSWER_TOKENS,
            depth: MAX_PASSAGES,
        }
    }
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

fn run_one(
    query: &QueryRecord,
    searcher: Option<&CorpusSearcher<'_>>,
    generator: &dyn TextGenerator,
    config: &RagConfig,
) -> Result<RagRun, RagError> {
    let (retrieved, context) = match searcher {
        Some(s) => {
            let ranked = s.search(query, config.depth.min(MAX_PASSAGES))?;
            let docs = ranked
                .doc_ids()
                .map(|d| s.corpus().get(d).ok_or_else(|| RagError::UnknownDocument(d.to_string())))
                .collect::<Result<Vec<&Document>, _>>()?;
            (Some(ranked), docs)
        }
        None => (None, Vec::new()),
    };
    let answer_in_top5 = context
        .iter()
        .any(|d| contains_answer(&d.indexed_text(), &query.gold_answers, config.match_mode));
    let generated_in_top5 = context
        .iter()
        .any(|d| d.is_generated() && d.provenance.query_id.as_deref() == Some(query.query_id.as_str()));
    let prompt = build_qa_prompt(&query.text, &context)?;
    let (answer_text, correct, error) = match generator.generate(&prompt, 0.0, config.max_tokens) {
        Ok(answer) => {
            let ok = contains_answer(&answer, &query.gold_answers, config.match_mode);
            (answer, ok, None)
        }
        Err(e) => (String::new(), false, Some(e.to_string())),
    };
    Ok(RagRun {
        query_id: query.query_id.clone(),
        retrieved,
        prompt: prompt.text().to_string(),
        answer_text,
        correct,
        answer_in_top5,
        generated_in_top5,
        error,
    })
}

/// Answers every query, retrieving the top five passages from `searcher`
/// when one is given. Backend failures count as incorrect answers.
pub fn run_rag(
    queries: &[QueryRecord],
    searcher: Option<&CorpusSearcher<'_>>,
    generator: &dyn TextGenerator,
    config: &RagConfig,
) -> Result<RagReport, RagError> {
    if let Some(q) = queries.iter().find(|q| q.gold_answers.is_empty()) {
        return Err(RagError::NoGoldAnswers(q.query_id.clone()));
    }
    let runs = queries
        .par_iter()
        .map(|q| run_one(q, searcher, generator, config))
        .collect::<Result<Vec<_>, _>>()?;
    let n = runs.len();
    let count = |f: fn(&RagRun) -> bool| runs.iter().filter(|r| f(r)).count();
    let with_retrieval = searcher.is_some();
    Ok(RagReport {
        acc: percent(count(|r| r.correct), n),
        ans5: with_retrieval.then(|| percent(count(|r| r.answer_in_top5), n)),
        gen5: with_retrieval.then(|| percent(count(|r| r.generated_in_top5), n)),
        failures: count(|r| r.error.is_some()),
        runs,
    })
}
