//! Faithfulness of a document to a document sample: each sentence is tested
//! for entailment by a greedily grown knowledge base of sample documents.

use std::collections::{BTreeSet, HashMap};
use std::sync::RwLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, RELEVANCE_THRESHOLD};
use crate::enrichment::select_relevant_groupwise;
use crate::gateway::{content_hash, GatewayError, NliScorer};
use crate::metrics::Judgments;
use crate::run::RankedList;
pub use crate::segment::{segment_sentences, SentenceSpan};

pub const ENTAILMENT_THRESHOLD: f64 = 0.5;
pub const SAMPLE_DEPTH: usize = 1000;
pub const RD_SAMPLE_SIZE: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum FaithfulnessError {
    #[error("k must be at least 1")]
    InvalidK,
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
    #[error("query {0:?} has no relevant documents")]
    NoRelevantDocs(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("NLI backend error: {0}")]
    Nli(#[from] GatewayError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SampleTag {
    Rel,
    Corpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub sentence: SentenceSpan,
    /// The entailing documents in order of addition; empty when not entailed.
    pub docs: Vec<String>,
    pub final_score: f64,
    pub entailed: bool,
    /// Documents added before giving up. Diagnostic only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub best_effort: Vec<String>,
}

/// NLI premise for a set of documents: their texts in order, one per line.
pub fn premise_text<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    docs.into_iter().map(|d| d.text.as_str()).collect::<Vec<_>>().join("\n")
}

/// Greedy hill climbing: at each of at most `k` steps add the sample document
/// that maximizes the score of the grown premise (ties to the smaller doc
/// id); stop once the score reaches 0.5.
pub fn build_kb(
    sentence: &SentenceSpan,
    k: usize,
    sample: &[&Document],
    nli: &dyn NliScorer,
) -> Result<KnowledgeBase, FaithfulnessError> {
    if k == 0 {
        return Err(FaithfulnessError::InvalidK);
    }
    let mut candidates: Vec<&Document> = sample.to_vec();
    candidates.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    candidates.dedup_by(|a, b| a.doc_id == b.doc_id);
    let mut kb: Vec<&Document> = Vec::new();
    let mut score = 0.0;
    for _ in 0..k {
        if candidates.is_empty() {
            break;
        }
        let premises: Vec<String> = candidates
            .iter()
            .map(|c| premise_text(kb.iter().copied().chain(std::iter::once(*c))))
            .collect();
        let scores = nli.nli_batch(&premises, &sentence.text)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        score = scores[best];
        kb.push(candidates.remove(best));
        if score >= ENTAILMENT_THRESHOLD {
            return Ok(KnowledgeBase {
                sentence: sentence.clone(),
                docs: kb.iter().map(|d| d.doc_id.clone()).collect(),
                final_score: score,
                entailed: true,
                best_effort: Vec::new(),
            });
        }
    }
    Ok(KnowledgeBase {
        sentence: sentence.clone(),
        docs: Vec::new(),
        final_score: score,
        entailed: false,
        best_effort: kb.iter().map(|d| d.doc_id.clone()).collect(),
    })
}

/// Memoizes an NLI scorer by (premise hash, hypothesis hash).
pub struct CachedNli<'a> {
    inner: &'a dyn NliScorer,
    cache: RwLock<HashMap<(String, String), f64>>,
}

impl<'a> CachedNli<'a> {
    pub fn new(inner: &'a dyn NliScorer) -> Self {
        CachedNli {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("nli cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(premise: &str, hypothesis: &str) -> (String, String) {
        (content_hash(&[premise]), content_hash(&[hypothesis]))
    }
}

impl NliScorer for CachedNli<'_> {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64, GatewayError> {
        let key = Self::key(premise, hypothesis);
        if let Some(s) = self.cache.read().expect("nli cache lock").get(&key) {
            return Ok(*s);
        }
        let s = self.inner.nli_score(premise, hypothesis)?;
        self.cache.write().expect("nli cache lock").insert(key, s);
        Ok(s)
    }

    fn nli_batch(&self, premises: &[String], hypothesis: &str) -> Result<Vec<f64>, GatewayError> {
        let keys: Vec<_> = premises.iter().map(|p| Self::key(p, hypothesis)).collect();
        let mut out: Vec<Option<f64>> = {
            let cache = self.cache.read().expect("nli cache lock");
            keys.iter().map(|k| cache.get(k).copied()).collect()
        };
        let missing: Vec<usize> = (0..premises.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| premises[i].clone()).collect();
            let scores = self.inner.nli_batch(&batch, hypothesis)?;
            let mut cache = self.cache.write().expect("nli cache lock");
            for (&i, s) in missing.iter().zip(scores) {
                cache.insert(keys[i].clone(), s);
                out[i] = Some(s);
            }
        }
        Ok(out.into_iter().map(|s| s.expect("filled")).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub doc_id: String,
    pub k: usize,
    pub sample_tag: SampleTag,
    pub per_sentence: Vec<KnowledgeBase>,
    pub score: f64,
}

impl FaithfulnessReport {
    pub fn entailed_count(&self) -> usize {
        self.per_sentence.iter().filter(|kb| kb.entailed).count()
    }
}

/// Percentage of the document's sentences entailed by some knowledge base of
/// at most `k` sample documents. The document itself is never in the sample.
pub fn faithfulness_score(
    doc: &Document,
    k: usize,
    sample: &[&Document],
    sample_tag: SampleTag,
    nli: &dyn NliScorer,
) -> Result<FaithfulnessReport, FaithfulnessError> {
    let sentences = segment_sentences(&doc.text);
    if sentences.is_empty() {
        return Err(FaithfulnessError::EmptyDocument(doc.doc_id.clone()));
    }
    let sample: Vec<&Document> = sample.iter().copied().filter(|d| d.doc_id != doc.doc_id).collect();
    let per_sentence = sentences
        .par_iter()
        .map(|s| build_kb(s, k, &sample, nli))
        .collect::<Result<Vec<_>, _>>()?;
    let entailed = per_sentence.iter().filter(|kb| kb.entailed).count();
    Ok(FaithfulnessReport {
        doc_id: doc.doc_id.clone(),
        k,
        sample_tag,
        score: 100.0 * entailed as f64 / per_sentence.len() as f64,
        per_sentence,
    })
}

/// Document ids of the two samples, sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Samples {
    pub rel: Vec<String>,
    pub corpus: Vec<String>,
}

impl Samples {
    pub fn get(&self, tag: SampleTag) -> &[String] {
        match tag {
            SampleTag::Rel => &self.rel,
            SampleTag::Corpus => &self.corpus,
        }
    }
}

/// Rel: the relevant documents. Corpus: Rel plus the lexical top 1000.
/// Documents in `exclude` are left out of both.
pub fn build_samples(
    query_id: &str,
    judgments: &Judgments,
    ranked: &RankedList,
    exclude: &BTreeSet<String>,
) -> Result<Samples, FaithfulnessError> {
    let rel: BTreeSet<String> = judgments
        .iter()
        .filter(|(_, &g)| g >= RELEVANCE_THRESHOLD)
        .map(|(d, _)| d.clone())
        .collect();
    if rel.is_empty() {
        return Err(FaithfulnessError::NoRelevantDocs(query_id.to_string()));
    }
    let mut corpus = rel.clone();
    corpus.extend(ranked.doc_ids().take(SAMPLE_DEPTH).map(String::from));
    let keep = |set: BTreeSet<String>| set.into_iter().filter(|d| !exclude.contains(d)).collect();
    Ok(Samples {
        rel: keep(rel),
        corpus: keep(corpus),
    })
}

pub fn resolve<'c>(corpus: &'c Corpus, ids: &[String]) -> Result<Vec<&'c Document>, FaithfulnessError> {
    ids.iter()
        .map(|d| corpus.get(d).ok_or_else(|| FaithfulnessError::UnknownDocument(d.clone())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdBaseline {
    pub query_id: String,
    pub selected: Vec<String>,
    pub scores: Vec<f64>,
    pub mean: f64,
    /// How many of the five documents could not be selected.
    pub shortfall: usize,
}

/// Average faithfulness of five relevant documents picked by the same
/// group-of-ten procedure as source selection, each scored against the
/// sample without the five.
#[allow(clippy::too_many_arguments)]
pub fn rd_baseline(
    corpus: &Corpus,
    query_id: &str,
    judgments: &Judgments,
    ranked: &RankedList,
    sample: &[String],
    sample_tag: SampleTag,
    seed: u64,
    k: usize,
    nli: &dyn NliScorer,
) -> Result<RdBaseline, FaithfulnessError> {
    let selected = select_relevant_groupwise(ranked, judgments, RD_SAMPLE_SIZE, seed);
    if selected.is_empty() {
        return Err(FaithfulnessError::NoRelevantDocs(query_id.to_string()));
    }
    let chosen: BTreeSet<&str> = selected.iter().map(String::as_str).collect();
    let rest: Vec<String> = sample.iter().filter(|d| !chosen.contains(d.as_str())).cloned().collect();
    let rest_docs = resolve(corpus, &rest)?;
    let mut scores = Vec::with_capacity(selected.len());
    for id in &selected {
        let doc = corpus
            .get(id)
            .ok_or_else(|| FaithfulnessError::UnknownDocument(id.clone()))?;
        scores.push(faithfulness_score(doc, k, &rest_docs, sample_tag, nli)?.score);
    }
    Ok(RdBaseline {
        query_id: query_id.to_string(),
        shortfall: RD_SAMPLE_SIZE - selected.len(),
        mean: scores.iter().sum::<f64>() / scores.len() as f64,
        selected,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{lexical_overlap, scripted_key};
    use std::collections::BTreeMap;

    fn span(text: &str) -> SentenceSpan {
        SentenceSpan {
            text: text.into(),
            start_offset: 0,
            end_offset: text.chars().count(),
        }
    }

    fn table_scorer(table: BTreeMap<String, f64>) -> impl Fn(&str, &str) -> f64 + Sync {
        move |p: &str, h: &str| table.get(&scripted_key(&[p, h])).copied().unwrap_or(0.0)
    }

    #[test]
    fn single_step_stop() {
        let d = [Document::new("a", "x"), Document::new("b", "y")];
        let docs: Vec<&Document> = d.iter().collect();
        let nli = |p: &str, _: &str| if p == "y" { 0.9 } else { 0.1 };
        let kb = build_kb(&span("s"), 1, &docs, &nli).unwrap();
        assert_eq!(kb.docs, vec!["b"]);
        assert!(kb.entailed);
    }

    #[test]
    fn two_step_pair() {
        let d = [Document::new("d1", "one"), Document::new("d2", "two")];
        let docs: Vec<&Document> = d.iter().collect();
        let mut t = BTreeMap::new();
        t.insert(scripted_key(&["one", "s"]), 0.3);
        t.insert(scripted_key(&["two", "s"]), 0.4);
        t.insert(scripted_key(&["two\none", "s"]), 0.7);
        let kb = build_kb(&span("s"), 2, &docs, &table_scorer(t)).unwrap();
        assert_eq!(kb.docs, vec!["d2", "d1"]);
        assert!(kb.entailed);
        assert_eq!(kb.final_score, 0.7);
    }

    #[test]
    fn failure_returns_empty_set() {
        let d = [Document::new("a", "x"), Document::new("b", "y"), Document::new("c", "z")];
        let docs: Vec<&Document> = d.iter().collect();
        let nli = |_: &str, _: &str| 0.2;
        let kb = build_kb(&span("s"), 3, &docs, &nli).unwrap();
        assert!(!kb.entailed);
        assert!(kb.docs.is_empty());
        assert_eq!(kb.best_effort, vec!["a", "b", "c"]);
        assert!(matches!(build_kb(&span("s"), 0, &docs, &nli), Err(FaithfulnessError::InvalidK)));
    }

    #[test]
    fn verbatim_copy_is_fully_faithful() {
        let src = Document::new("src", "Solar panels make power. Wind turns turbines.");
        let copy = Document::new("gen", src.text.clone());
        let nli = |p: &str, h: &str| lexical_overlap(p, h);
        let r = faithfulness_score(&copy, 1, &[&src, &copy], SampleTag::Rel, &nli).unwrap();
        assert_eq!(r.score, 100.0);
        let other = Document::new("o", "Pasta recipes.");
        let r0 = faithfulness_score(&copy, 1, &[&other], SampleTag::Rel, &nli).unwrap();
        assert_eq!(r0.score, 0.0);
    }

    #[test]
    fn cache_deduplicates_calls() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let inner = |_: &str, _: &str| {
            calls.fetch_add(1, Ordering::SeqCst);
            0.5
        };
        let cached = CachedNli::new(&inner);
        cached.nli_batch(&["a".into(), "b".into()], "h").unwrap();
        cached.nli_batch(&["a".into(), "b".into(), "c".into()], "h").unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn samples_union_and_exclusion() {
        use crate::run::ScoredDoc;
        let ranked = RankedList::new(
            "q",
            (0..1200)
                .map(|i| ScoredDoc {
                    doc_id: format!("d{i:04}"),
                    score: -(i as f64),
                })
                .collect(),
        );
        let j: Judgments = [("d0001", 2), ("d0002", 3), ("x", 2), ("d0003", 1)]
            .into_iter()
            .map(|(d, g)| (d.to_string(), g))
            .collect();
        let s = build_samples("q", &j, &ranked, &BTreeSet::new()).unwrap();
        assert_eq!(s.rel, vec!["d0001", "d0002", "x"]);
        assert_eq!(s.corpus.len(), 1001);
        let ex: BTreeSet<String> = ["d0005".to_string()].into();
        assert_eq!(build_samples("q", &j, &ranked, &ex).unwrap().corpus.len(), 1000);
        assert!(build_samples("q", &Judgments::new(), &ranked, &ex).is_err());
    }
}
