//! Attribution of generated answers to a single corpus document.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, QueryRecord};
use crate::gateway::{GatewayError, NliScorer, TextGenerator};
use crate::index::{CorpusSearcher, IndexError};
use crate::rag::{contains_answer, run_rag, MatchMode, RagConfig, RagError, RagReport};

pub const DEFAULT_POOL: usize = 50;
/// Attribution counts as entailment only strictly above this score.
pub const ATTRIBUTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error("no document matches question {0:?}")]
    NoMatch(String),
    #[error("generated document {0:?} lacks source provenance")]
    MissingProvenance(String),
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
    #[error("NLI backend error: {0}")]
    Nli(#[from] GatewayError),
    #[error(transparent)]
    Index(IndexError),
    #[error(transparent)]
    Rag(#[from] RagError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    RagPlainAttrPlain,
    RagEnrichedAttrPlain,
    RagPlainAttrEnriched,
    RagEnrichedAttrEnriched,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::RagPlainAttrPlain,
        Setting::RagEnrichedAttrPlain,
        Setting::RagPlainAttrEnriched,
        Setting::RagEnrichedAttrEnriched,
    ];

    pub fn rag_enriched(self) -> bool {
        matches!(self, Setting::RagEnrichedAttrPlain | Setting::RagEnrichedAttrEnriched)
    }

    pub fn attr_enriched(self) -> bool {
        matches!(self, Setting::RagPlainAttrEnriched | Setting::RagEnrichedAttrEnriched)
    }

    /// Short label: the RAG corpus, then the attribution corpus.
    pub fn label(self) -> &'static str {
        match self {
            Setting::RagPlainAttrPlain => "C/C",
            Setting::RagEnrichedAttrPlain => "Ce/C",
            Setting::RagPlainAttrEnriched => "C/Ce",
            Setting::RagEnrichedAttrEnriched => "Ce/Ce",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranker {
    Bm25,
    Bm25Nli { pool: usize },
}

impl Ranker {
    pub fn tag(self) -> &'static str {
        match self {
            Ranker::Bm25 => "bm25",
            Ranker::Bm25Nli { .. } => "bm25+nli",
        }
    }
}

/// The NLI hypothesis for an answer: question and answer joined by a space.
pub fn hypothesis(question: &str, answer: &str) -> String {
    format!("{question} {answer}")
}

fn search(searcher: &CorpusSearcher<'_>, query: &QueryRecord, depth: usize) -> Result<Vec<String>, AttributionError> {
    match searcher.search(query, depth) {
        Ok(r) if r.is_empty() => Err(AttributionError::NoMatch(query.query_id.clone())),
        Ok(r) => Ok(r.doc_ids().map(String::from).collect()),
        Err(IndexError::EmptyQueryAfterStemming(_)) => Err(AttributionError::NoMatch(query.query_id.clone())),
        Err(e) => Err(AttributionError::Index(e)),
    }
}

pub fn select_candidate_bm25(searcher: &CorpusSearcher<'_>, query: &QueryRecord) -> Result<String, AttributionError> {
    Ok(search(searcher, query, 1)?.remove(0))
}

/// Among the lexical top `pool`, the document with the highest NLI score for
/// the answer. Equal scores go to the better lexical rank.
pub fn select_candidate_bm25_nli(
    searcher: &CorpusSearcher<'_>,
    query: &QueryRecord,
    answer: &str,
    nli: &dyn NliScorer,
    pool: usize,
) -> Result<(String, f64), AttributionError> {
    let ids = search(searcher, query, pool.max(1))?;
    let premises = ids
        .iter()
        .map(|d| {
            searcher
                .corpus()
                .get(d)
                .map(|doc| doc.text.clone())
                .ok_or_else(|| AttributionError::UnknownDocument(d.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scores = nli.nli_batch(&premises, &hypothesis(&query.text, answer))?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok((ids[best].clone(), scores[best]))
}

/// Entailment judged only on human-written text: for a generated candidate,
/// the best score over its source documents; otherwise `entailed` as given.
pub fn acc_nogen(
    candidate: &Document,
    entailed: bool,
    sources: &dyn Fn(&str) -> Option<Document>,
    hypothesis: &str,
    nli: &dyn NliScorer,
) -> Result<bool, AttributionError> {
    if !candidate.is_generated() {
        return Ok(entailed);
    }
    let ids = &candidate.provenance.source_doc_ids;
    if ids.is_empty() {
        return Err(AttributionError::MissingProvenance(candidate.doc_id.clone()));
    }
    let premises = ids
        .iter()
        .map(|d| sources(d).map(|doc| doc.text).ok_or_else(|| AttributionError::UnknownDocument(d.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let best = nli
        .nli_batch(&premises, hypothesis)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best > ATTRIBUTION_THRESHOLD)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionCase {
    pub query_id: String,
    pub setting: Setting,
    pub answer_text: String,
    pub candidate: Option<String>,
    pub nli_score: f64,
    pub entailed: bool,
    pub candidate_contains_answer: bool,
    pub candidate_generated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nogen_entailed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionAggregate {
    pub ca: f64,
    pub acc: f64,
    pub acc_nogen: Option<f64>,
}

fn percent(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// CA and Acc over the cases; Acc-NoGen when any case carries a NoGen flag.
pub fn entailment_accuracy(cases: &[AttributionCase]) -> AttributionAggregate {
    let n = cases.len();
    let has_nogen = cases.iter().any(|c| c.nogen_entailed.is_some());
    AttributionAggregate {
        ca: percent(cases.iter().filter(|c| c.candidate_contains_answer).count(), n),
        acc: percent(cases.iter().filter(|c| c.entailed).count(), n),
        acc_nogen: has_nogen.then(|| {
            percent(
                cases
                    .iter()
                    .filter(|c| c.nogen_entailed.unwrap_or(c.entailed))
                    .count(),
                n,
            )
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub setting: Setting,
    pub aggregate: AttributionAggregate,
    pub cases: Vec<AttributionCase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix {
    pub ranker: Ranker,
    pub settings: Vec<SettingResult>,
}

impl AttributionMatrix {
    pub fn get(&self, setting: Setting) -> Option<&SettingResult> {
        self.settings.iter().find(|s| s.setting == setting)
    }
}

#[allow(clippy::too_many_arguments)]
fn attribute_one(
    setting: Setting,
    query: &QueryRecord,
    answer: &str,
    rag_error: Option<&str>,
    searcher: &CorpusSearcher<'_>,
    nli: &dyn NliScorer,
    ranker: Ranker,
    match_mode: MatchMode,
) -> Result<AttributionCase, AttributionError> {
    let mut case = AttributionCase {
        query_id: query.query_id.clone(),
        setting,
        answer_text: answer.to_string(),
        candidate: None,
        nli_score: 0.0,
        entailed: false,
        candidate_contains_answer: false,
        candidate_generated: false,
        nogen_entailed: None,
        error: rag_error.map(String::from),
    };
    if rag_error.is_some() {
        return Ok(case);
    }
    let hyp = hypothesis(&query.text, answer);
    let selected = match ranker {
        Ranker::Bm25 => select_candidate_bm25(searcher, query).and_then(|id| {
            let doc = searcher
                .corpus()
                .get(&id)
                .ok_or_else(|| AttributionError::UnknownDocument(id.clone()))?;
            Ok((id, nli.nli_score(&doc.text, &hyp)?))
        }),
        Ranker::Bm25Nli { pool } => select_candidate_bm25_nli(searcher, query, answer, nli, pool),
    };
    let (id, score) = match selected {
        Ok(s) => s,
        Err(e @ AttributionError::NoMatch(_)) => {
            case.error = Some(e.to_string());
            return Ok(case);
        }
        Err(e) => return Err(e),
    };
    let corpus = searcher.corpus();
    let doc = corpus.get(&id).ok_or_else(|| AttributionError::UnknownDocument(id.clone()))?;
    case.candidate = Some(id);
    case.nli_score = score;
    case.entailed = score > ATTRIBUTION_THRESHOLD;
    case.candidate_contains_answer = contains_answer(&doc.text, &query.gold_answers, match_mode);
    case.candidate_generated = doc.is_generated();
    if setting.attr_enriched() {
        let lookup = |d: &str| corpus.get(d).cloned();
        case.nogen_entailed = Some(acc_nogen(doc, case.entailed, &lookup, &hyp, nli)?);
    }
    Ok(case)
}

/// Runs the four combinations of {plain, enriched} corpus for answer
/// generation and {plain, enriched} corpus for candidate selection.
pub fn run_attribution_matrix(
    queries: &[QueryRecord],
    plain: &CorpusSearcher<'_>,
    enriched: &CorpusSearcher<'_>,
    generator: &dyn TextGenerator,
    nli: &dyn NliScorer,
    ranker: Ranker,
    rag_config: &RagConfig,
) -> Result<AttributionMatrix, AttributionError> {
    let rag_plain = run_rag(queries, Some(plain), generator, rag_config)?;
    let rag_enriched = run_rag(queries, Some(enriched), generator, rag_config)?;
    let answers = |r: &RagReport| -> BTreeMap<String, (String, Option<String>)> {
        r.runs
            .iter()
            .map(|run| (run.query_id.clone(), (run.answer_text.clone(), run.error.clone())))
            .collect()
    };
    let (plain_answers, enriched_answers) = (answers(&rag_plain), answers(&rag_enriched));
    let mut settings = Vec::new();
    for setting in Setting::ALL {
        let answers = if setting.rag_enriched() { &enriched_answers } else { &plain_answers };
        let searcher = if setting.attr_enriched() { enriched } else { plain };
        let cases = queries
            .par_iter()
            .map(|q| {
                let (answer, err) = &answers[&q.query_id];
                attribute_one(setting, q, answer, err.as_deref(), searcher, nli, ranker, rag_config.match_mode)
            })
            .collect::<Result<Vec<_>, _>>()?;
        settings.push(SettingResult {
            setting,
            aggregate: entailment_accuracy(&cases),
            cases,
        });
    }
    Ok(AttributionMatrix { ranker, settings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, Method, Provenance};
    use crate::index::{Analyzer, Bm25Params};

    fn corpus() -> Corpus {
        let mut docs: Vec<Document> = (0..60)
            .map(|i| Document::new(format!("d{i:02}"), format!("river bank number {i} filler")))
            .collect();
        docs.push(Document::new("s1", "source one"));
        docs.push(Document::new("s2", "source two"));
        Corpus::from_documents("c", docs).unwrap()
    }

    #[test]
    fn bm25_candidate_and_no_match() {
        let c = corpus();
        let s = CorpusSearcher::new(&c, Analyzer::default(), Bm25Params::default()).unwrap();
        let q = QueryRecord::new("q", "number 7");
        assert_eq!(select_candidate_bm25(&s, &q).unwrap(), "d07");
        let none = QueryRecord::new("q", "zebra");
        assert!(matches!(select_candidate_bm25(&s, &none), Err(AttributionError::NoMatch(_))));
    }

    #[test]
    fn nli_pool_argmax_and_constant_scorer() {
        let c = corpus();
        let s = CorpusSearcher::new(&c, Analyzer::default(), Bm25Params::default()).unwrap();
        let q = QueryRecord::new("q", "river number 3");
        let ranked = s.search(&q, 50).unwrap();
        let target = ranked.entries[36].doc_id.clone();
        let target_text = c.get(&target).unwrap().text.clone();
        let nli = move |p: &str, _: &str| if p == target_text { 0.9 } else { 0.1 };
        let (id, score) = select_candidate_bm25_nli(&s, &q, "a", &nli, 50).unwrap();
        assert_eq!((id.as_str(), score), (target.as_str(), 0.9));
        let constant = |_: &str, _: &str| 0.5;
        let (id, _) = select_candidate_bm25_nli(&s, &q, "a", &constant, 50).unwrap();
        assert_eq!(id, select_candidate_bm25(&s, &q).unwrap());
        let (id1, _) = select_candidate_bm25_nli(&s, &q, "a", &nli, 1).unwrap();
        assert_eq!(id1, ranked.entries[0].doc_id);
    }

    #[test]
    fn nogen_uses_sources_only() {
        let c = corpus();
        let gen = Document::new("g", "generated text").with_provenance(Provenance::generated(
            Method::TwoDocSummary,
            "m",
            "q",
            vec!["s1".into(), "s2".into()],
        ));
        let lookup = |d: &str| c.get(d).cloned();
        let by_text = |p: &str, _: &str| match p {
            "source one" => 0.2,
            "source two" => 0.8,
            _ => 1.0,
        };
        assert!(acc_nogen(&gen, false, &lookup, "h", &by_text).unwrap());
        let low = |p: &str, _: &str| if p == "generated text" { 1.0 } else { 0.3 };
        assert!(!acc_nogen(&gen, true, &lookup, "h", &low).unwrap());
        let orig = c.get("d01").unwrap();
        assert!(acc_nogen(orig, true, &lookup, "h", &low).unwrap());
        let bare = Document::new("g2", "x").with_provenance(Provenance {
            source_doc_ids: vec![],
            ..Provenance::generated(Method::ZeroShot, "m", "q", vec![])
        });
        assert!(matches!(
            acc_nogen(&bare, true, &lookup, "h", &low),
            Err(AttributionError::MissingProvenance(_))
        ));
    }

    #[test]
    fn aggregate_percentages() {
        let case = |entailed, ca| AttributionCase {
            query_id: "q".into(),
            setting: Setting::RagPlainAttrPlain,
            answer_text: String::new(),
            candidate: None,
            nli_score: 0.0,
            entailed,
            candidate_contains_answer: ca,
            candidate_generated: false,
            nogen_entailed: None,
            error: None,
        };
        let cases = vec![case(true, true), case(true, true), case(true, true), case(false, true)];
        let agg = entailment_accuracy(&cases);
        assert_eq!((agg.acc, agg.ca, agg.acc_nogen), (75.0, 100.0, None));
    }
}
