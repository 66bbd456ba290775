//! The batch commands. Each validates its config, writes its artifacts under
//! the output directory plus a manifest, and reports failures against the
//! failure budget only after everything has been written.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use enrichkit::adhoc::{run_adhoc, AdhocConfig, DenseRanker, Ranker};
use enrichkit::attribution::{self, run_attribution_matrix};
use enrichkit::corpus::{write_qrels, write_queries_jsonl, Corpus, Method, Qrels};
use enrichkit::dense::EmbeddingCache;
use enrichkit::enrichment::{enrich, EnrichConfig, QueryStatus, Task, SELECTION_DEPTH};
use enrichkit::faithfulness::{
    build_samples, faithfulness_score, rd_baseline, resolve, CachedNli, FaithfulnessError, SampleTag, SAMPLE_DEPTH,
};
use enrichkit::gateway::{Backend, Gateway, HttpBackend, MockBackend, OfflineBackend, TranscriptMode};
use enrichkit::index::{Analyzer, Bm25Params, CorpusSearcher, Index};
use enrichkit::metrics::{map_at_k, ndcg_at_k, permutation_test, Judgments};
use enrichkit::rag::{run_rag, RagConfig};
use enrichkit::run::{read_trec_run, RankedList};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::artifacts::{fmt_f, fmt_opt, Artifacts};
use crate::config::{file_safe, AttributionRanker, FixtureKind, Needs, RankerKind, RunConfig};
use crate::data;
use crate::error::{CliError, Result};

fn searcher(corpus: &Corpus) -> Result<CorpusSearcher<'_>> {
    CorpusSearcher::new(corpus, Analyzer::default(), Bm25Params::default())
        .map_err(|e| CliError::from_module("index", &e))
}

/// Builds the gateway. Replays never touch a live backend.
pub fn make_gateway(cfg: &RunConfig) -> Result<Gateway> {
    let gc = cfg.gateway_config();
    let backend: Box<dyn Backend> = match (gc.transcript_mode, &cfg.gateway.mock) {
        (TranscriptMode::Replay, _) => Box::new(OfflineBackend),
        (_, Some(spec)) => Box::new(MockBackend::new(spec.clone())),
        _ => Box::new(HttpBackend::new(
            &gc.base_url,
            std::time::Duration::from_secs_f64(gc.timeout_secs),
        )),
    };
    Gateway::new(backend, gc).map_err(|e| CliError::validation(format!("gateway: {e}")))
}

fn gateway_info(cfg: &RunConfig, gw: &Gateway) -> Option<(enrichkit::gateway::GatewayStats, TranscriptMode, std::path::PathBuf)> {
    Some((gw.stats(), cfg.gateway.transcript_mode, cfg.transcript_path()))
}

fn save_transcript(gw: &Gateway) -> Result<()> {
    gw.save_transcript().map_err(|e| CliError::io("gateway transcript", e))
}

fn check_budget(unit: &'static str, failed: usize, total: usize, budget: f64) -> Result<()> {
    if total > 0 && failed as f64 / total as f64 > budget {
        return Err(CliError::FailureBudget {
            unit,
            failed,
            total,
            budget,
        });
    }
    Ok(())
}

/// Distinct (method, model) pairs of the corpus's generated documents.
fn enrichment_pairs(corpus: &Corpus) -> Vec<(Method, String)> {
    corpus
        .generated()
        .filter_map(|d| Some((d.provenance.method?, d.provenance.model_tag.clone()?)))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn rankings(searcher: &CorpusSearcher<'_>, queries: &[enrichkit::QueryRecord], depth: usize) -> Result<Vec<RankedList>> {
    searcher
        .search_all(queries, depth)
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::from_module("retrieval", &e))
}

pub fn cmd_index(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs {
        corpus: true,
        ..Default::default()
    })?;
    let data = data::load(cfg, false)?;
    let plain = searcher(&data.corpus)?;
    let runs = rankings(&plain, &data.queries, cfg.adhoc.retrieval_depth)?;
    let mut trec = Vec::new();
    for r in &runs {
        r.write_trec("bm25", &mut trec).map_err(|e| CliError::io("runs/bm25.trec", e))?;
    }
    let params = Bm25Params::default();
    let index = Index::from_documents(data.corpus.originals(), Analyzer::default(), params)
        .map_err(|e| CliError::from_module("index", &e))?;
    let stats = index.stats();
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    arts.write_bytes("runs/bm25.trec", &trec)?;
    let report = json!({
        "dataset": cfg.dataset,
        "documents": data.corpus.len(),
        "original_documents": stats.doc_count,
        "generated_documents": data.corpus.generated().count(),
        "queries": data.queries.len(),
        "avg_doc_len": stats.avg_doc_len,
        "k1": params.k1,
        "b": params.b,
        "retrieval_depth": cfg.adhoc.retrieval_depth,
    });
    arts.write_json("reports/index.json", &report)?;
    arts.write_manifest("index", cfg, None, report)
}

pub fn cmd_enrich(cfg: &RunConfig) -> Result<()> {
    let rag = cfg.task == Task::Rag;
    cfg.validate(Needs {
        corpus: true,
        qrels: !rag,
        answers: rag,
        generated: false,
    })?;
    if cfg.methods.is_empty() {
        return Err(CliError::validation("no generation methods configured"));
    }
    let data = data::load(cfg, false)?;
    let plain = searcher(&data.corpus)?;
    let ranked: BTreeMap<String, RankedList> = if cfg.methods.iter().any(|m| m.arity() > 0) {
        rankings(&plain, &data.queries, SELECTION_DEPTH)?
            .into_iter()
            .map(|r| (r.query_id.clone(), r))
            .collect()
    } else {
        BTreeMap::new()
    };
    let gw = make_gateway(cfg)?;
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    let (mut failed, mut total) = (0, 0);
    let mut summary = Vec::new();
    for &method in &cfg.methods {
        let mut ec = EnrichConfig::new(cfg.task, method, cfg.model_tag.clone(), cfg.seed);
        ec.max_tokens = cfg.enrich.max_tokens;
        ec.match_mode = cfg.rag.match_mode;
        if let Some(p) = cfg.enrich.length_policy {
            ec.policy = p;
        }
        let out = enrich(&ec, &data.corpus, &data.queries, &ranked, &gw)
            .map_err(|e| CliError::from_module("enrich", &e))?;
        let mut docs = out.documents;
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        arts.write_jsonl(&cfg.generated_rel(method), &docs)?;
        arts.write_json(
            &format!("reports/enrich-{}-{}.json", method.tag(), file_safe(&cfg.model_tag)),
            &out.manifest,
        )?;
        let count = |s| out.manifest.count(s);
        failed += count(QueryStatus::Failed);
        total += out.manifest.queries.len();
        summary.push(json!({
            "method": method,
            "generated": count(QueryStatus::Generated),
            "discarded": count(QueryStatus::Discarded),
            "insufficient": count(QueryStatus::Insufficient),
            "failed": count(QueryStatus::Failed),
        }));
    }
    save_transcript(&gw)?;
    arts.write_manifest("enrich", cfg, gateway_info(cfg, &gw), json!({ "methods": summary }))?;
    check_budget("generations", failed, total, cfg.failure_budget)
}

pub fn cmd_adhoc(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs {
        corpus: true,
        qrels: true,
        answers: false,
        generated: !cfg.methods.is_empty(),
    })?;
    if cfg.rankers.is_empty() {
        return Err(CliError::validation("no rankers configured"));
    }
    let data = data::load(cfg, true)?;
    let pairs = enrichment_pairs(&data.corpus);
    let plain = searcher(&data.corpus)?;
    let dense = cfg.rankers.contains(&RankerKind::Dense);
    let gw = if dense { Some(make_gateway(cfg)?) } else { None };
    let cache = match &cfg.adhoc.embedding_cache {
        Some(p) => EmbeddingCache::load_or_default(p).map_err(|e| CliError::validation(e.to_string()))?,
        None => EmbeddingCache::new(),
    };
    let ac = AdhocConfig {
        dataset: cfg.dataset.clone(),
        retrieval_depth: cfg.adhoc.retrieval_depth,
        rerank_depth: cfg.adhoc.rerank_depth,
        generated_grade: cfg.adhoc.generated_grade,
        n_permutations: cfg.adhoc.permutations,
        seed: cfg.seed,
    };
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    let mut rows = Vec::new();
    let mut systems = Vec::new();
    for kind in &cfg.rankers {
        let ranker = match (kind, &gw) {
            (RankerKind::Dense, Some(gw)) => Ranker::Dense(DenseRanker {
                embedder: gw,
                cache: &cache,
                model_tag: cfg.embed_model.clone(),
                batch_size: cfg.adhoc.embed_batch_size,
            }),
            _ => Ranker::Bm25,
        };
        let report = run_adhoc(&plain, &data.queries, &pairs, &ranker, &ac)
            .map_err(|e| CliError::from_module("adhoc", &e))?;
        for s in &report.systems {
            let label = s.key.label();
            let mut trec = Vec::new();
            for q in &data.queries {
                if let Some(r) = s.runs.get(&q.query_id) {
                    r.write_trec(&label, &mut trec).map_err(|e| CliError::io(&label, e))?;
                }
            }
            arts.write_bytes(&format!("runs/{}.trec", file_safe(&label)), &trec)?;
            systems.push(json!({
                "key": s.key,
                "rank_stats": s.rank_stats,
                "per_query": s.per_query,
            }));
        }
        rows.extend(report.rows);
    }
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.method.clone(),
                r.model.clone(),
                r.ranker.clone(),
                fmt_opt(r.mg),
                fmt_opt(r.me),
                fmt_opt(r.hr),
                fmt_f(r.ndcg10),
                fmt_f(r.ndcg100),
                fmt_f(r.map100),
                r.flags(),
            ]
        })
        .collect();
    arts.write_csv(
        "reports/adhoc.csv",
        &["dataset", "method", "model", "ranker", "MG", "ME", "HR", "NDCG@10", "NDCG@100", "MAP@100", "flags"],
        &table,
    )?;
    arts.write_json("reports/adhoc.json", &json!({ "rows": rows, "systems": systems }))?;
    if let Some(p) = &cfg.adhoc.embedding_cache {
        cache.save(p).map_err(|e| CliError::io(p.display(), e))?;
    }
    if let Some(gw) = &gw {
        save_transcript(gw)?;
    }
    let info = gw.as_ref().and_then(|g| gateway_info(cfg, g));
    arts.write_manifest("adhoc", cfg, info, json!({ "systems": systems.len() }))
}

struct FaithTask<'a> {
    query: usize,
    method: Method,
    model: &'a str,
    doc: &'a enrichkit::Document,
    tag: SampleTag,
    k: usize,
}

pub fn cmd_faithfulness(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs {
        corpus: true,
        qrels: true,
        answers: false,
        generated: true,
    })?;
    let data = data::load(cfg, true)?;
    let pairs = enrichment_pairs(&data.corpus);
    let plain = searcher(&data.corpus)?;
    let ranked = rankings(&plain, &data.queries, SAMPLE_DEPTH)?;
    let mut samples = Vec::with_capacity(data.queries.len());
    let mut skipped = Vec::new();
    for (q, r) in data.queries.iter().zip(&ranked) {
        match build_samples(&q.query_id, &q.qrels, r, &BTreeSet::new()) {
            Ok(s) => samples.push(Some(s)),
            Err(FaithfulnessError::NoRelevantDocs(id)) => {
                skipped.push(id);
                samples.push(None);
            }
            Err(e) => return Err(CliError::from_module("faithfulness", &e)),
        }
    }
    let mut tasks = Vec::new();
    for (i, q) in data.queries.iter().enumerate() {
        if samples[i].is_none() {
            continue;
        }
        for (method, model) in &pairs {
            let Some(doc) = data.corpus.generated_for(&q.query_id, *method, model) else {
                continue;
            };
            for &tag in &cfg.faithfulness.samples {
                for &k in &cfg.faithfulness.k {
                    tasks.push(FaithTask {
                        query: i,
                        method: *method,
                        model,
                        doc,
                        tag,
                        k,
                    });
                }
            }
        }
    }
    let gw = make_gateway(cfg)?;
    let nli = CachedNli::new(&gw);
    let results: Vec<Result<Value>> = tasks
        .par_iter()
        .map(|t| {
            let ids = samples[t.query].as_ref().expect("filtered").get(t.tag);
            let docs = resolve(&data.corpus, ids).map_err(|e| CliError::from_module("faithfulness", &e))?;
            let head = json!({
                "query_id": data.queries[t.query].query_id,
                "method": t.method,
                "model_tag": t.model,
            });
            Ok(match faithfulness_score(t.doc, t.k, &docs, t.tag, &nli) {
                Ok(report) => json!({ "entry": head, "report": report }),
                Err(e) => json!({
                    "entry": head,
                    "doc_id": t.doc.doc_id,
                    "k": t.k,
                    "sample_tag": t.tag,
                    "error": e.to_string(),
                    "backend": matches!(e, FaithfulnessError::Nli(_)),
                }),
            })
        })
        .collect();
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut scores: BTreeMap<(String, String, SampleTag, usize), Vec<f64>> = BTreeMap::new();
    let mut failed = 0;
    for (t, r) in tasks.iter().zip(&records) {
        match r["report"]["score"].as_f64() {
            Some(s) => scores
                .entry((t.method.tag().to_string(), t.model.to_string(), t.tag, t.k))
                .or_default()
                .push(s),
            None if r["backend"] == json!(true) => failed += 1,
            None => {}
        }
    }
    let mut total = records.len();
    let mut rd_records = Vec::new();
    if cfg.faithfulness.rd_baseline {
        let mut rd_tasks = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if s.is_some() {
                for &tag in &cfg.faithfulness.samples {
                    for &k in &cfg.faithfulness.k {
                        rd_tasks.push((i, tag, k));
                    }
                }
            }
        }
        let rd: Vec<_> = rd_tasks
            .par_iter()
            .map(|&(i, tag, k)| {
                let q = &data.queries[i];
                let sample = samples[i].as_ref().expect("filtered").get(tag);
                (i, tag, k, rd_baseline(&data.corpus, &q.query_id, &q.qrels, &ranked[i], sample, tag, cfg.seed, k, &nli))
            })
            .collect();
        total += rd.len();
        for (i, tag, k, r) in rd {
            let query_id = &data.queries[i].query_id;
            match r {
                Ok(b) => {
                    scores.entry(("RD".into(), String::new(), tag, k)).or_default().push(b.mean);
                    rd_records.push(json!({ "sample_tag": tag, "k": k, "baseline": b }));
                }
                Err(e) => {
                    if matches!(e, FaithfulnessError::Nli(_)) {
                        failed += 1;
                    }
                    rd_records.push(json!({ "query_id": query_id, "sample_tag": tag, "k": k, "error": e.to_string() }));
                }
            }
        }
    }
    let table: Vec<Vec<String>> = scores
        .iter()
        .map(|((method, model, tag, k), v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            vec![
                method.clone(),
                model.clone(),
                format!("{tag:?}"),
                k.to_string(),
                v.len().to_string(),
                fmt_f(mean),
            ]
        })
        .collect();
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    arts.write_jsonl("reports/faithfulness.jsonl", &records)?;
    if cfg.faithfulness.rd_baseline {
        arts.write_jsonl("reports/rd_baseline.jsonl", &rd_records)?;
    }
    arts.write_csv(
        "reports/faithfulness_summary.csv",
        &["method", "model", "sample", "k", "documents", "mean_score"],
        &table,
    )?;
    save_transcript(&gw)?;
    arts.write_manifest(
        "faithfulness",
        cfg,
        gateway_info(cfg, &gw),
        json!({ "scored": total - failed, "failed": failed, "queries_without_relevant": skipped, "nli_cache": nli.len() }),
    )?;
    check_budget("faithfulness evaluations", failed, total, cfg.failure_budget)
}

fn rag_config(cfg: &RunConfig) -> RagConfig {
    RagConfig {
        match_mode: cfg.rag.match_mode,
        max_tokens: cfg.rag.max_tokens,
        depth: cfg.rag.depth,
    }
}

pub fn cmd_rag(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs {
        corpus: true,
        qrels: false,
        answers: true,
        generated: !cfg.methods.is_empty(),
    })?;
    let data = data::load(cfg, true)?;
    let pairs = enrichment_pairs(&data.corpus);
    let plain = searcher(&data.corpus)?;
    let mut conditions: Vec<(String, String, String, Option<CorpusSearcher<'_>>)> = Vec::new();
    if cfg.rag.no_retrieval {
        conditions.push(("NoRAG".into(), String::new(), String::new(), None));
    }
    conditions.push(("NoEnrich".into(), String::new(), String::new(), Some(plain.clone())));
    for (m, model) in &pairs {
        conditions.push((
            format!("{}-{}", m.tag(), file_safe(model)),
            m.tag().into(),
            model.clone(),
            Some(plain.enriched(*m, model)),
        ));
    }
    let gw = make_gateway(cfg)?;
    let rc = rag_config(cfg);
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    let (mut failed, mut total) = (0, 0);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (label, method, model, s) in &conditions {
        let report = run_rag(&data.queries, s.as_ref(), &gw, &rc).map_err(|e| CliError::from_module("rag", &e))?;
        arts.write_jsonl(&format!("transcripts/rag-{label}.jsonl"), &report.runs)?;
        failed += report.failures;
        total += report.runs.len();
        rows.push(vec![
            label.clone(),
            method.clone(),
            model.clone(),
            fmt_f(report.acc),
            report.ans5.map(fmt_f).unwrap_or_default(),
            report.gen5.map(fmt_f).unwrap_or_default(),
            report.failures.to_string(),
        ]);
        reports.push(json!({
            "condition": label,
            "method": method,
            "model": model,
            "acc": report.acc,
            "ans5": report.ans5,
            "gen5": report.gen5,
            "failures": report.failures,
        }));
    }
    arts.write_csv(
        "reports/rag.csv",
        &["condition", "method", "model", "Acc", "Ans-5", "Gen-5", "failures"],
        &rows,
    )?;
    arts.write_json("reports/rag.json", &reports)?;
    save_transcript(&gw)?;
    arts.write_manifest("rag", cfg, gateway_info(cfg, &gw), json!({ "conditions": reports }))?;
    check_budget("answers", failed, total, cfg.failure_budget)
}

pub fn cmd_attribution(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs {
        corpus: true,
        qrels: false,
        answers: true,
        generated: true,
    })?;
    let data = data::load(cfg, true)?;
    let pairs = enrichment_pairs(&data.corpus);
    if pairs.is_empty() {
        return Err(CliError::validation("no generated documents to attribute against"));
    }
    let plain = searcher(&data.corpus)?;
    let gw = make_gateway(cfg)?;
    let rc = rag_config(cfg);
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    let (mut failed, mut total) = (0, 0);
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (m, model) in &pairs {
        let enriched = plain.enriched(*m, model);
        for r in &cfg.attribution.rankers {
            let ranker = match r {
                AttributionRanker::Bm25 => attribution::Ranker::Bm25,
                AttributionRanker::Bm25Nli => attribution::Ranker::Bm25Nli {
                    pool: cfg.attribution.pool,
                },
            };
            let matrix = run_attribution_matrix(&data.queries, &plain, &enriched, &gw, &gw, ranker, &rc)
                .map_err(|e| CliError::from_module("attribution", &e))?;
            let cases: Vec<_> = matrix.settings.iter().flat_map(|s| &s.cases).collect();
            failed += cases.iter().filter(|c| c.error.is_some()).count();
            total += cases.len();
            arts.write_jsonl(
                &format!("transcripts/attribution-{}-{}-{}.jsonl", m.tag(), file_safe(model), file_safe(ranker.tag())),
                &cases,
            )?;
            for s in &matrix.settings {
                let a = &s.aggregate;
                rows.push(vec![
                    m.tag().to_string(),
                    model.clone(),
                    ranker.tag().to_string(),
                    s.setting.label().to_string(),
                    fmt_f(a.ca),
                    fmt_f(a.acc),
                    a.acc_nogen.map(fmt_f).unwrap_or_default(),
                ]);
                aggregates.push(json!({
                    "method": m,
                    "model": model,
                    "ranker": ranker.tag(),
                    "setting": s.setting.label(),
                    "aggregate": a,
                }));
            }
        }
    }
    arts.write_csv(
        "reports/attribution.csv",
        &["method", "model", "ranker", "setting", "CA", "Acc", "Acc-NoGen"],
        &rows,
    )?;
    arts.write_json("reports/attribution.json", &aggregates)?;
    save_transcript(&gw)?;
    arts.write_manifest("attribution", cfg, gateway_info(cfg, &gw), json!({ "cases": total, "failed": failed }))?;
    check_budget("attribution cases", failed, total, cfg.failure_budget)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MetricKind {
    Ndcg,
    Map,
}

fn parse_metric(s: &str) -> Result<(MetricKind, usize)> {
    let bad = || CliError::validation(format!("unknown metric {s:?}; expected ndcg@K or map@K"));
    let (name, k) = s.split_once('@').ok_or_else(bad)?;
    let k: usize = k.parse().map_err(|_| bad())?;
    if k == 0 {
        return Err(bad());
    }
    match name.to_ascii_lowercase().as_str() {
        "ndcg" => Ok((MetricKind::Ndcg, k)),
        "map" => Ok((MetricKind::Map, k)),
        _ => Err(bad()),
    }
}

fn load_run(path: &Path) -> Result<BTreeMap<String, RankedList>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::validation(format!("run {}: {e}", path.display())))?;
    read_trec_run(std::io::BufReader::new(f)).map_err(|e| CliError::validation(format!("run {}: {e}", path.display())))
}

/// Paired permutation tests between two TREC runs, one row per metric,
/// over the queries that have judgments.
pub fn cmd_significance(cfg: &RunConfig) -> Result<()> {
    cfg.validate(Needs {
        qrels: true,
        ..Default::default()
    })?;
    let s = &cfg.significance;
    let (Some(pa), Some(pb)) = (&s.run_a, &s.run_b) else {
        return Err(CliError::validation("significance needs `run_a` and `run_b`"));
    };
    for p in [pa, pb] {
        if !p.exists() {
            return Err(CliError::validation(format!("run {} does not exist", p.display())));
        }
    }
    let metrics = s.metrics.iter().map(|m| parse_metric(m)).collect::<Result<Vec<_>>>()?;
    let qrels: Qrels = match (&cfg.qrels, cfg.fixture) {
        (Some(p), _) => enrichkit::corpus::load_qrels(p).map_err(|e| CliError::validation(format!("qrels {}: {e}", p.display())))?,
        (None, Some(kind)) if kind != FixtureKind::Qa => data::fixture(kind)
            .1
            .into_iter()
            .map(|q| (q.query_id, q.qrels))
            .collect(),
        _ => return Err(CliError::validation("this command needs `qrels`")),
    };
    let (run_a, run_b) = (load_run(pa)?, load_run(pb)?);
    if qrels.len() < 2 {
        return Err(CliError::validation("significance needs judgments for at least two queries"));
    }
    let empty = |q: &str| RankedList::new(q, Vec::new());
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (m, (kind, k)) in s.metrics.iter().zip(metrics) {
        let score = |run: &BTreeMap<String, RankedList>, q: &str, j: &Judgments| {
            let r = run.get(q).cloned().unwrap_or_else(|| empty(q));
            match kind {
                MetricKind::Ndcg => ndcg_at_k(&r, j, k),
                MetricKind::Map => map_at_k(&r, j, k),
            }
        };
        let (a, b): (Vec<f64>, Vec<f64>) = qrels.iter().map(|(q, j)| (score(&run_a, q, j), score(&run_b, q, j))).unzip();
        let t = permutation_test(&a, &b, s.permutations, cfg.seed).map_err(|e| CliError::validation(e.to_string()))?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        rows.push(vec![
            m.clone(),
            a.len().to_string(),
            fmt_f(mean(&a)),
            fmt_f(mean(&b)),
            fmt_f(t.statistic),
            format!("{}", t.p_value),
            t.significant.to_string(),
        ]);
        results.push(json!({ "metric": m, "queries": a.len(), "mean_a": mean(&a), "mean_b": mean(&b), "test": t }));
    }
    let mut arts = Artifacts::create(&cfg.out_dir)?;
    arts.write_csv(
        "reports/significance.csv",
        &["metric", "queries", "mean_a", "mean_b", "mean_diff", "p_value", "significant"],
        &rows,
    )?;
    arts.write_json("reports/significance.json", &results)?;
    arts.write_manifest("significance", cfg, None, json!({ "metrics": results.len() }))
}

/// Writes a bundled synthetic dataset and a starter config into `dir`.
pub fn cmd_fixture(kind: FixtureKind, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let (corpus, queries) = data::fixture(kind);
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::io(p.display(), e))
    };
    let mut docs = Vec::new();
    for d in corpus.documents() {
        serde_json::to_writer(&mut docs, d).map_err(|e| CliError::io("corpus.jsonl", e))?;
        docs.push(b'\n');
    }
    write("corpus.jsonl", docs)?;
    let mut q = Vec::new();
    write_queries_jsonl(&queries, &mut q).map_err(|e| CliError::io("queries.jsonl", e))?;
    write("queries.jsonl", q)?;
    let qa = kind == FixtureKind::Qa;
    if !qa {
        let qrels: Qrels = queries.iter().map(|q| (q.query_id.clone(), q.qrels.clone())).collect();
        let mut out = Vec::new();
        write_qrels(&qrels, &mut out).map_err(|e| CliError::io("qrels.txt", e))?;
        write("qrels.txt", out)?;
    }
    let config = format!(
        "dataset = \"synthetic\"\n\
         corpus = \"corpus.jsonl\"\n\
         queries = \"queries.jsonl\"\n\
         {qrels}\
         task = \"{task}\"\n\
         methods = [\"2DS\"]\n\
         model_tag = \"mock\"\n\
         seed = 1\n\
         out_dir = \"out\"\n\
         \n\
         [gateway.mock.generate]\n\
         mode = \"template\"\n\
         {policy}",
        qrels = if qa { "" } else { "qrels = \"qrels.txt\"\n" },
        task = if qa { "rag" } else { "adhoc" },
        // The template mock writes short texts; a live model is held to 80 words.
        policy = if qa {
            "\n[enrich.length_policy]\nmax_words = 100\nmin_words = 10\nmode = \"truncate_and_discard\"\n"
        } else {
            ""
        },
    );
    write("enrichkit.toml", config.into_bytes())
}
