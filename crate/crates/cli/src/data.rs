use std::path::Path;

use enrichkit::corpus::{attach_qrels, ingest_corpus, load_qrels, load_queries, Corpus, CorpusFormat, QueryRecord};
use enrichkit::synthetic::{adhoc_fixture, qa_fixture, AdhocFixtureSpec};

use crate::config::{FixtureKind, RunConfig, QA_FIXTURE_QUESTIONS, QA_FIXTURE_SEED};
use crate::error::{CliError, Result};

pub struct Dataset {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
}

pub fn fixture(kind: FixtureKind) -> (Corpus, Vec<QueryRecord>) {
    match kind {
        FixtureKind::AdhocSmall => adhoc_fixture(AdhocFixtureSpec::small()),
        FixtureKind::AdhocStandard => adhoc_fixture(AdhocFixtureSpec::standard()),
        FixtureKind::Qa => qa_fixture(QA_FIXTURE_QUESTIONS, QA_FIXTURE_SEED),
    }
}

/// Loads the corpus, queries and judgments, then adds generated documents
/// when `with_generated` is set.
pub fn load(cfg: &RunConfig, with_generated: bool) -> Result<Dataset> {
    let (mut corpus, mut queries) = match cfg.fixture {
        Some(kind) => fixture(kind),
        None => {
            let corpus_path = cfg.corpus.as_deref().ok_or_else(|| CliError::validation("no corpus configured"))?;
            let queries_path = cfg.queries.as_deref().ok_or_else(|| CliError::validation("no queries configured"))?;
            let (mut corpus, report) = ingest_corpus(corpus_path, cfg.corpus_format()?)
                .map_err(|e| CliError::validation(format!("corpus {}: {e}", corpus_path.display())))?;
            for w in &report.warnings {
                log::warn!("corpus {}: {w}", corpus_path.display());
            }
            let queries = load_queries(queries_path)
                .map_err(|e| CliError::validation(format!("queries {}: {e}", queries_path.display())))?;
            corpus.register_queries(queries.iter().map(|q| q.query_id.as_str()));
            (corpus, queries)
        }
    };
    if let Some(path) = &cfg.qrels {
        let qrels = load_qrels(path).map_err(|e| CliError::validation(format!("qrels {}: {e}", path.display())))?;
        attach_qrels(&mut queries, &qrels);
    }
    if with_generated {
        for path in cfg.generated_paths() {
            add_generated(&mut corpus, &path)?;
        }
    }
    Ok(Dataset { corpus, queries })
}

fn add_generated(corpus: &mut Corpus, path: &Path) -> Result<()> {
    let (docs, _) = ingest_corpus(path, CorpusFormat::Jsonl)
        .map_err(|e| CliError::validation(format!("generated documents {}: {e}", path.display())))?;
    for doc in docs.documents() {
        if !doc.is_generated() {
            return Err(CliError::validation(format!(
                "{}: document {} has no generation provenance",
                path.display(),
                doc.doc_id
            )));
        }
        corpus
            .insert(doc.clone())
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
