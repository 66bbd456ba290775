//! Tokenization, inverted index and Okapi BM25 retrieval.
//!
//! An [`Index`] is a large immutable base segment (usually the original
//! corpus) plus an optional small overlay segment holding the generated
//! documents of one enriched view. Collection statistics are always taken over
//! both, so searching an overlaid index is identical to searching an index
//! rebuilt from scratch over the whole view.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{enriched_view, Corpus, CorpusError, CorpusView, Document, Method, QueryRecord};
use crate::porter;
use crate::run::{RankedList, ScoredDoc};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot index an empty view")]
    EmptyView,
    #[error("query {0:?} has no terms after tokenization")]
    EmptyQueryAfterStemming(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// The stop set of Lucene's English analyzer.
pub const ENGLISH_STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it",
    "no", "not", "of", "on", "or", "such", "that", "the", "their", "then", "there", "these",
    "they", "this", "to", "was", "will", "with",
];

/// Lowercases, splits on non-alphanumeric characters and Porter-stems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    #[serde(default)]
    pub remove_stopwords: bool,
}

impl Analyzer {
    pub fn with_stopwords() -> Self {
        Analyzer {
            remove_stopwords: true,
        }
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .filter(|t| !(self.remove_stopwords && ENGLISH_STOPWORDS.contains(&t.as_str())))
            .map(|t| porter::stem(&t))
            .collect()
    }
}

/// Default analysis: no stopword removal.
pub fn tokenize_and_stem(text: &str) -> Vec<String> {
    Analyzer::default().analyze(text)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    /// `ln((N - df + 0.5) / (df + 0.5) + 1)`, positive for every `df <= N`.
    pub fn idf(&self, doc_count: usize, df: usize) -> f64 {
        let n = doc_count as f64;
        let df = df as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    pub fn term_weight(&self, tf: u32, doc_len: u32, avg_doc_len: f64) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * doc_len as f64 / avg_doc_len;
        tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PostingList {
    pub term: String,
    pub postings: Vec<Posting>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    /// Stemmed-token count per internal id.
    pub doc_len: Vec<u32>,
}

/// An immutable inverted index over a fixed document set.
#[derive(Debug, Default)]
pub struct Segment {
    terms: HashMap<String, Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_len: Vec<u32>,
    total_len: u64,
}

impl Segment {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, analyzer: Analyzer) -> Segment {
        let docs: Vec<&Document> = docs.into_iter().collect();
        let analyzed: Vec<Vec<String>> = docs
            .par_iter()
            .map(|d| analyzer.analyze(&d.indexed_text()))
            .collect();
        let mut seg = Segment::default();
        for (doc, tokens) in docs.iter().zip(analyzed) {
            let internal = seg.doc_ids.len() as u32;
            let mut counts: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *counts.entry(t.clone()).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                seg.terms.entry(term).or_default().push(Posting { doc: internal, tf });
            }
            seg.doc_ids.push(doc.doc_id.clone());
            seg.doc_len.push(tokens.len() as u32);
            seg.total_len += tokens.len() as u64;
        }
        seg
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    fn postings(&self, term: &str) -> &[Posting] {
        self.terms.get(term).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A searchable index: a shared base segment plus an optional overlay.
#[derive(Clone, Debug)]
pub struct Index {
    base: Arc<Segment>,
    overlay: Option<Arc<Segment>>,
    analyzer: Analyzer,
    params: Bm25Params,
}

impl Index {
    pub fn from_documents<'a>(
        docs: impl IntoIterator<Item = &'a Document>,
        analyzer: Analyzer,
        params: Bm25Params,
    ) -> Result<Index, IndexError> {
        let base = Segment::build(docs, analyzer);
        if base.is_empty() {
            return Err(IndexError::EmptyView);
        }
        Ok(Index {
            base: Arc::new(base),
            overlay: None,
            analyzer,
            params,
        })
    }

    /// Reuses `base` and indexes `extra` as an overlay.
    pub fn with_overlay<'a>(
        base: Arc<Segment>,
        extra: impl IntoIterator<Item = &'a Document>,
        analyzer: Analyzer,
        params: Bm25Params,
    ) -> Result<Index, IndexError> {
        let overlay = Segment::build(extra, analyzer);
        if base.is_empty() && overlay.is_empty() {
            return Err(IndexError::EmptyView);
        }
        Ok(Index {
            base,
            overlay: (!overlay.is_empty()).then(|| Arc::new(overlay)),
            analyzer,
            params,
        })
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    fn segments(&self) -> impl Iterator<Item = (u32, &Segment)> {
        std::iter::once((0, self.base.as_ref())).chain(
            self.overlay
                .as_deref()
                .map(|o| (self.base.len() as u32, o)),
        )
    }

    pub fn doc_count(&self) -> usize {
        self.segments().map(|(_, s)| s.len()).sum()
    }

    pub fn doc_id(&self, internal: u32) -> &str {
        let base_len = self.base.len() as u32;
        match &self.overlay {
            Some(o) if internal >= base_len => &o.doc_ids[(internal - base_len) as usize],
            _ => &self.base.doc_ids[internal as usize],
        }
    }

    fn doc_len(&self, internal: u32) -> u32 {
        let base_len = self.base.len() as u32;
        match &self.overlay {
            Some(o) if internal >= base_len => o.doc_len[(internal - base_len) as usize],
            _ => self.base.doc_len[internal as usize],
        }
    }

    pub fn stats(&self) -> IndexStats {
        let doc_len: Vec<u32> = self
            .segments()
            .flat_map(|(_, s)| s.doc_len.iter().copied())
            .collect();
        IndexStats {
            doc_count: doc_len.len(),
            avg_doc_len: self.avg_doc_len(),
            doc_len,
        }
    }

    fn avg_doc_len(&self) -> f64 {
        let total: u64 = self.segments().map(|(_, s)| s.total_len).sum();
        total as f64 / self.doc_count() as f64
    }

    /// Postings of a stemmed term across all segments, by internal id.
    pub fn posting_list(&self, term: &str) -> PostingList {
        let postings = self
            .segments()
            .flat_map(|(offset, s)| {
                s.postings(term).iter().map(move |p| Posting {
                    doc: p.doc + offset,
                    tf: p.tf,
                })
            })
            .collect();
        PostingList {
            term: term.to_string(),
            postings,
        }
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.segments().map(|(_, s)| s.postings(term).len()).sum()
    }

    /// Top-`depth` documents by BM25, ties broken by ascending doc id. Every
    /// query token contributes, so a repeated query term counts repeatedly.
    /// Documents matching no query term are never returned.
    pub fn bm25_search(
        &self,
        query_id: &str,
        query_text: &str,
        depth: usize,
    ) -> Result<RankedList, IndexError> {
        let terms = self.analyzer.analyze(query_text);
        if terms.is_empty() {
            return Err(IndexError::EmptyQueryAfterStemming(query_text.to_string()));
        }
        let n = self.doc_count();
        let avgdl = self.avg_doc_len();
        let mut scores = vec![0.0f64; n];
        let mut touched: Vec<u32> = Vec::new();
        let mut seen = vec![false; n];
        for term in &terms {
            let df = self.document_frequency(term);
            if df == 0 {
                continue;
            }
            let idf = self.params.idf(n, df);
            for (offset, seg) in self.segments() {
                for p in seg.postings(term) {
                    let id = p.doc + offset;
                    let w = self.params.term_weight(p.tf, self.doc_len(id), avgdl);
                    scores[id as usize] += idf * w;
                    if !seen[id as usize] {
                        seen[id as usize] = true;
                        touched.push(id);
                    }
                }
            }
        }
        let mut hits: Vec<(f64, &str)> = touched
            .into_iter()
            .map(|id| (scores[id as usize], self.doc_id(id)))
            .collect();
        let order = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
        if depth < hits.len() {
            hits.select_nth_unstable_by(depth, order);
            hits.truncate(depth);
        }
        hits.sort_by(order);
        Ok(RankedList::new(
            query_id,
            hits.into_iter()
                .map(|(score, doc_id)| ScoredDoc {
                    doc_id: doc_id.to_string(),
                    score,
                })
                .collect(),
        ))
    }
}

/// Builds a standalone index over the documents of `view`.
pub fn build_index(
    corpus: &Corpus,
    view: &CorpusView,
    analyzer: Analyzer,
    params: Bm25Params,
) -> Result<Index, IndexError> {
    Index::from_documents(view.documents(corpus), analyzer, params)
}

/// Serves per-query searches over the plain corpus or over one enrichment
/// (method, model) of it, sharing a single base index of the originals.
#[derive(Clone)]
pub struct CorpusSearcher<'c> {
    corpus: &'c Corpus,
    base: Arc<Segment>,
    analyzer: Analyzer,
    params: Bm25Params,
    enrichment: Option<(Method, String)>,
}

impl<'c> CorpusSearcher<'c> {
    pub fn new(corpus: &'c Corpus, analyzer: Analyzer, params: Bm25Params) -> Result<Self, IndexError> {
        let base = Segment::build(corpus.originals(), analyzer);
        if base.is_empty() {
            return Err(IndexError::EmptyView);
        }
        Ok(CorpusSearcher {
            corpus,
            base: Arc::new(base),
            analyzer,
            params,
            enrichment: None,
        })
    }

    /// The same base index, searched through the enriched views of `(method, model_tag)`.
    pub fn enriched(&self, method: Method, model_tag: &str) -> Self {
        CorpusSearcher {
            enrichment: Some((method, model_tag.to_string())),
            ..self.clone()
        }
    }

    pub fn plain(&self) -> Self {
        CorpusSearcher {
            enrichment: None,
            ..self.clone()
        }
    }

    pub fn corpus(&self) -> &'c Corpus {
        self.corpus
    }

    pub fn is_enriched(&self) -> bool {
        self.enrichment.is_some()
    }

    pub fn view_for(&self, query_id: &str) -> Result<CorpusView, IndexError> {
        match &self.enrichment {
            None => Ok(CorpusView::plain(self.corpus)),
            Some((method, model)) => Ok(enriched_view(self.corpus, query_id, *method, model)?),
        }
    }

    pub fn index_for(&self, query_id: &str) -> Result<Index, IndexError> {
        let view = self.view_for(query_id)?;
        let extra = view
            .included_generated_docs
            .iter()
            .filter_map(|id| self.corpus.get(id));
        Index::with_overlay(self.base.clone(), extra, self.analyzer, self.params)
    }

    pub fn search(&self, query: &QueryRecord, depth: usize) -> Result<RankedList, IndexError> {
        self.index_for(&query.query_id)?
            .bm25_search(&query.query_id, &query.text, depth)
    }

    /// Searches every query in parallel; results keep the input order.
    pub fn search_all(
        &self,
        queries: &[QueryRecord],
        depth: usize,
    ) -> Vec<Result<RankedList, IndexError>> {
        queries.par_iter().map(|q| self.search(q, depth)).collect()
    }
}
