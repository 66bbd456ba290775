//! Ad hoc retrieval evaluation of plain and enriched corpora.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Method, QueryRecord};
use crate::dense::{rerank, rerank_top_m, DenseError, EmbeddingCache, EmbeddingVector};
use crate::gateway::Embedder;
use crate::index::{CorpusSearcher, IndexError};
use crate::metrics::{
    self, map_at_k, ndcg_at_k, permutation_test, query_ranks, summarize_ranks, Judgments, RankStats,
    SignificanceResult,
};
use crate::run::RankedList;

pub const RETRIEVAL_DEPTH: usize = 10_000;
pub const RERANK_DEPTH: usize = 100;
pub const NO_ENRICH: &str = "NoEnrich";

#[derive(Debug, thiserror::Error)]
pub enum AdhocError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Dense(#[from] DenseError),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("no queries to evaluate")]
    NoQueries,
}

#[derive(Clone, Debug)]
pub struct AdhocConfig {
    pub dataset: String,
    pub retrieval_depth: usize,
    /// Documents re-ranked for the effectiveness metrics under a dense ranker.
    pub rerank_depth: usize,
    /// Grade given to a query's generated document when computing NDCG/MAP;
    /// `None` leaves it unjudged.
    pub generated_grade: Option<u8>,
    pub n_permutations: usize,
    pub seed: u64,
}

impl Default for AdhocConfig {
    fn default() -> Self {
        AdhocConfig {
            dataset: "dataset".into(),
            retrieval_depth: RETRIEVAL_DEPTH,
            rerank_depth: RERANK_DEPTH,
            generated_grade: None,
            n_permutations: metrics::DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

/// Embedding re-ranker over lexical candidates.
pub struct DenseRanker<'a> {
    pub embedder: &'a dyn Embedder,
    pub cache: &'a EmbeddingCache,
    pub model_tag: String,
    pub batch_size: usize,
}

pub enum Ranker<'a> {
    Bm25,
    Dense(DenseRanker<'a>),
}

impl Ranker<'_> {
    pub fn tag(&self) -> String {
        match self {
            Ranker::Bm25 => "bm25".into(),
            Ranker::Dense(d) => format!("dense:{}", d.model_tag),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub ndcg10: f64,
    pub ndcg100: f64,
    pub map100: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemKey {
    pub dataset: String,
    pub method: String,
    pub model: String,
    pub ranker: String,
}

impl SystemKey {
    pub fn label(&self) -> String {
        if self.model.is_empty() {
            format!("{}.{}", self.method, self.ranker.replace(':', "-"))
        } else {
            format!("{}.{}.{}", self.method, self.model, self.ranker.replace(':', "-"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemEval {
    pub key: SystemKey,
    pub rank_stats: RankStats,
    pub per_query: Vec<QueryMetrics>,
    /// Lists the effectiveness metrics were computed on.
    pub runs: BTreeMap<String, RankedList>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

impl SystemEval {
    pub fn mean_ndcg10(&self) -> f64 {
        mean(self.per_query.iter().map(|q| q.ndcg10))
    }

    pub fn mean_ndcg100(&self) -> f64 {
        mean(self.per_query.iter().map(|q| q.ndcg100))
    }

    pub fn mean_map100(&self) -> f64 {
        mean(self.per_query.iter().map(|q| q.map100))
    }
}

fn texts_for(corpus: &Corpus, query: &QueryRecord, lexical: &RankedList) -> Result<Vec<String>, AdhocError> {
    let mut texts = Vec::with_capacity(lexical.len() + 1);
    texts.push(query.text.clone());
    for id in lexical.doc_ids() {
        let doc = corpus.get(id).ok_or_else(|| AdhocError::UnknownDocument(id.to_string()))?;
        texts.push(doc.indexed_text().into_owned());
    }
    Ok(texts)
}

/// Expects every text to be cached already.
fn dense_lists(
    d: &DenseRanker<'_>,
    texts: &[String],
    lexical: &RankedList,
    rerank_depth: usize,
) -> Result<(RankedList, RankedList), AdhocError> {
    let mut vectors = d.cache.embed_cached(d.embedder, &d.model_tag, texts, d.batch_size)?;
    let docs: HashMap<String, EmbeddingVector> = lexical
        .doc_ids()
        .map(String::from)
        .zip(vectors.drain(1..))
        .collect();
    let q = vectors.remove(0);
    let full = rerank(lexical, &q, &docs)?;
    let top = rerank_top_m(lexical, rerank_depth, &q, &docs)?;
    Ok((full, top))
}

/// Retrieves and scores every query against `searcher`'s view. Rank
/// statistics use the full retrieval depth; NDCG/MAP use the top 100.
pub fn evaluate_system(
    searcher: &CorpusSearcher<'_>,
    queries: &[QueryRecord],
    ranker: &Ranker<'_>,
    system: Option<(Method, &str)>,
    config: &AdhocConfig,
) -> Result<SystemEval, AdhocError> {
    if queries.is_empty() {
        return Err(AdhocError::NoQueries);
    }
    let corpus = searcher.corpus();
    let generated_ids: HashSet<String> = match system {
        Some((method, model)) => corpus
            .generated()
            .filter(|d| d.provenance.method == Some(method) && d.provenance.model_tag.as_deref() == Some(model))
            .map(|d| d.doc_id.clone())
            .collect(),
        None => HashSet::new(),
    };
    let lexical = queries
        .par_iter()
        .map(|q| searcher.search(q, config.retrieval_depth))
        .collect::<Result<Vec<_>, _>>()?;
    // One embedding pass over the union of texts keeps backend batches
    // independent of thread scheduling, which transcript replay relies on.
    let texts = match ranker {
        Ranker::Bm25 => Vec::new(),
        Ranker::Dense(d) => {
            let texts = queries
                .iter()
                .zip(&lexical)
                .map(|(q, l)| texts_for(corpus, q, l))
                .collect::<Result<Vec<_>, _>>()?;
            let all: Vec<String> = texts.iter().flatten().cloned().collect();
            d.cache.embed_cached(d.embedder, &d.model_tag, &all, d.batch_size)?;
            texts
        }
    };
    let results = queries
        .par_iter()
        .zip(lexical)
        .enumerate()
        .map(|(i, (q, lexical))| {
            let (full, metric_list) = match ranker {
                Ranker::Bm25 => {
                    let top = lexical.truncated(RERANK_DEPTH);
                    (lexical, top)
                }
                Ranker::Dense(d) => dense_lists(d, &texts[i], &lexical, config.rerank_depth)?,
            };
            let metric_list = metric_list.truncated(RERANK_DEPTH);
            let generated = system
                .and_then(|(m, model)| corpus.generated_for(&q.query_id, m, model))
                .map(|d| d.doc_id.clone());
            let mut judgments: Judgments = q.qrels.clone();
            if let (Some(g), Some(grade)) = (&generated, config.generated_grade) {
                judgments.insert(g.clone(), grade);
            }
            let metrics = QueryMetrics {
                query_id: q.query_id.clone(),
                ndcg10: ndcg_at_k(&metric_list, &judgments, 10),
                ndcg100: ndcg_at_k(&metric_list, &judgments, 100),
                map100: map_at_k(&metric_list, &judgments, 100),
            };
            let ranks = query_ranks(&full, &q.qrels, generated.as_deref(), &generated_ids);
            Ok::<_, AdhocError>((metrics, ranks, metric_list))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut per_query = Vec::with_capacity(results.len());
    let mut ranks = Vec::with_capacity(results.len());
    let mut runs = BTreeMap::new();
    for (m, r, list) in results {
        runs.insert(m.query_id.clone(), list);
        per_query.push(m);
        ranks.push(r);
    }
    let (method, model) = match system {
        Some((m, model)) => (m.tag().to_string(), model.to_string()),
        None => (NO_ENRICH.to_string(), String::new()),
    };
    Ok(SystemEval {
        key: SystemKey {
            dataset: config.dataset.clone(),
            method,
            model,
            ranker: ranker.tag(),
        },
        rank_stats: summarize_ranks(ranks),
        per_query,
        runs,
    })
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub method: String,
    pub model: String,
    pub ranker: String,
    pub mg: Option<f64>,
    pub me: Option<f64>,
    pub hr: Option<f64>,
    pub ndcg10: f64,
    pub ndcg100: f64,
    pub map100: f64,
    /// MG differs significantly from ME.
    pub sig_mg_me: bool,
    /// MG differs significantly from HR.
    pub sig_mg_hr: bool,
    /// Significant difference from the non-enriched system, per metric.
    pub sig_ndcg10: bool,
    pub sig_ndcg100: bool,
    pub sig_map100: bool,
}

impl EvalRow {
    /// Marker string: `m` and `h` for the MG tests, `*` when any
    /// effectiveness metric differs from the non-enriched system.
    pub fn flags(&self) -> String {
        let mut s = String::new();
        if self.sig_mg_me {
            s.push('m');
        }
        if self.sig_mg_hr {
            s.push('h');
        }
        if self.sig_ndcg10 || self.sig_ndcg100 || self.sig_map100 {
            s.push('*');
        }
        s
    }
}

fn paired_test(a: &[f64], b: &[f64], config: &AdhocConfig) -> Option<SignificanceResult> {
    permutation_test(a, b, config.n_permutations, config.seed).ok()
}

fn significant(r: Option<SignificanceResult>) -> bool {
    r.is_some_and(|r| r.significant)
}

/// Paired per-query samples of generated rank against another rank statistic.
fn mg_pairs(stats: &RankStats, other: impl Fn(&metrics::QueryRanks) -> Option<f64>) -> (Vec<f64>, Vec<f64>) {
    stats
        .per_query
        .iter()
        .filter_map(|q| Some((q.generated_rank? as f64, other(q)?)))
        .unzip()
}

fn metric_vec(e: &SystemEval, f: fn(&QueryMetrics) -> f64) -> BTreeMap<&str, f64> {
    e.per_query.iter().map(|q| (q.query_id.as_str(), f(q))).collect()
}

fn vs_baseline(e: &SystemEval, base: &SystemEval, f: fn(&QueryMetrics) -> f64, config: &AdhocConfig) -> bool {
    let (x, y) = (metric_vec(e, f), metric_vec(base, f));
    let (a, b): (Vec<f64>, Vec<f64>) = x
        .iter()
        .filter_map(|(q, v)| Some((*v, *y.get(q)?)))
        .unzip();
    significant(paired_test(&a, &b, config))
}

pub fn eval_row(e: &SystemEval, baseline: Option<&SystemEval>, config: &AdhocConfig) -> EvalRow {
    let s = &e.rank_stats;
    let (g1, me) = mg_pairs(s, |q| q.median_relevant_rank);
    let (g2, hr) = mg_pairs(s, |q| q.best_relevant_rank.map(|r| r as f64));
    let sig = |f: fn(&QueryMetrics) -> f64| baseline.is_some_and(|b| vs_baseline(e, b, f, config));
    EvalRow {
        dataset: e.key.dataset.clone(),
        method: e.key.method.clone(),
        model: e.key.model.clone(),
        ranker: e.key.ranker.clone(),
        mg: s.mg,
        me: s.me,
        hr: s.hr,
        ndcg10: e.mean_ndcg10(),
        ndcg100: e.mean_ndcg100(),
        map100: e.mean_map100(),
        sig_mg_me: significant(paired_test(&g1, &me, config)),
        sig_mg_hr: significant(paired_test(&g2, &hr, config)),
        sig_ndcg10: sig(|q| q.ndcg10),
        sig_ndcg100: sig(|q| q.ndcg100),
        sig_map100: sig(|q| q.map100),
    }
}

pub struct AdhocReport {
    pub systems: Vec<SystemEval>,
    pub rows: Vec<EvalRow>,
}

/// Evaluates the non-enriched corpus and each (method, model) enrichment
/// under one ranker.
pub fn run_adhoc(
    plain: &CorpusSearcher<'_>,
    queries: &[QueryRecord],
    enrichments: &[(Method, String)],
    ranker: &Ranker<'_>,
    config: &AdhocConfig,
) -> Result<AdhocReport, AdhocError> {
    let base = evaluate_system(plain, queries, ranker, None, config)?;
    let mut rows = vec![eval_row(&base, None, config)];
    let mut systems = Vec::new();
    for (method, model) in enrichments {
        let searcher = plain.enriched(*method, model);
        let e = evaluate_system(&searcher, queries, ranker, Some((*method, model)), config)?;
        rows.push(eval_row(&e, Some(&base), config));
        systems.push(e);
    }
    systems.insert(0, base);
    Ok(AdhocReport { systems, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Document, Provenance};
    use crate::index::{Analyzer, Bm25Params};

    fn fixture() -> (Corpus, Vec<QueryRecord>) {
        let mut docs = vec![
            Document::new("d1", "solar panels on roofs"),
            Document::new("d2", "wind turbines offshore"),
            Document::new("d3", "solar farms in deserts and solar cells"),
            Document::new("d4", "pasta with tomato sauce"),
        ];
        docs.push(
            Document::new("g1", "solar solar solar panels energy").with_provenance(Provenance::generated(
                Method::TwoDocSummary,
                "mock",
                "q1",
                vec!["d1".into(), "d3".into()],
            )),
        );
        let mut c = Corpus::from_documents("c", docs).unwrap();
        c.register_queries(["q1"]);
        let mut q = QueryRecord::new("q1", "solar panels");
        q.qrels.insert("d1".into(), 2);
        q.qrels.insert("d3".into(), 3);
        (c, vec![q])
    }

    #[test]
    fn enriched_system_ranks_generated_doc() {
        let (c, qs) = fixture();
        let plain = CorpusSearcher::new(&c, Analyzer::default(), Bm25Params::default()).unwrap();
        let config = AdhocConfig {
            n_permutations: 100,
            ..Default::default()
        };
        let report = run_adhoc(&plain, &qs, &[(Method::TwoDocSummary, "mock".into())], &Ranker::Bm25, &config).unwrap();
        assert_eq!(report.rows.len(), 2);
        let base = &report.systems[0];
        assert_eq!(base.rank_stats.mg, None);
        assert!(base.runs["q1"].rank_of("g1").is_none());
        let enriched = &report.systems[1];
        assert_eq!(enriched.rank_stats.mg, Some(1.0));
        assert_eq!(report.rows[1].method, "2DS");
        assert_eq!(enriched.key.label(), "2DS.mock.bm25");
    }
}
