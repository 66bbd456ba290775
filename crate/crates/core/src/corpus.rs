//! Documents, queries, judgments and per-query enriched views of a corpus.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text;

/// Documents with a grade at or above this value count as relevant.
pub const RELEVANCE_THRESHOLD: u8 = 2;
pub const MAX_GRADE: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid document {doc_id:?}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },
    #[error("a generated document already exists for query {query_id:?}, method {method}, model {model_tag:?}")]
    DuplicateGenerated {
        query_id: String,
        method: Method,
        model_tag: String,
    },
    #[error("unknown query {0:?}")]
    UnknownQuery(String),
    #[error("no generated documents tagged method {method}, model {model_tag:?}")]
    UnknownMethodTag { method: Method, model_tag: String },
    #[error("unknown document {0:?}")]
    UnknownDocument(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// The five generation methods.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ZS")]
    ZeroShot,
    #[serde(rename = "DM")]
    DocModification,
    #[serde(rename = "2DS")]
    TwoDocSummary,
    #[serde(rename = "2DSR")]
    TwoDocSummaryRandom,
    #[serde(rename = "3DS")]
    ThreeDocSummary,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::ZeroShot,
        Method::DocModification,
        Method::TwoDocSummary,
        Method::TwoDocSummaryRandom,
        Method::ThreeDocSummary,
    ];

    /// Number of source documents the method consumes.
    pub fn arity(self) -> usize {
        match self {
            Method::ZeroShot => 0,
            Method::DocModification => 1,
            Method::TwoDocSummary | Method::TwoDocSummaryRandom => 2,
            Method::ThreeDocSummary => 3,
        }
    }

    /// Number of relevant documents among the sources.
    pub fn relevant_sources(self) -> usize {
        match self {
            Method::TwoDocSummaryRandom => 1,
            m => m.arity(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Method::ZeroShot => "ZS",
            Method::DocModification => "DM",
            Method::TwoDocSummary => "2DS",
            Method::TwoDocSummaryRandom => "2DSR",
            Method::ThreeDocSummary => "3DS",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown generation method {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Original,
    Generated,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_doc_ids: Vec<String>,
}

impl Provenance {
    pub fn original() -> Self {
        Provenance::default()
    }

    pub fn generated(
        method: Method,
        model_tag: impl Into<String>,
        query_id: impl Into<String>,
        source_doc_ids: Vec<String>,
    ) -> Self {
        Provenance {
            origin: Origin::Generated,
            method: Some(method),
            model_tag: Some(model_tag.into()),
            query_id: Some(query_id.into()),
            source_doc_ids,
        }
    }

    pub fn is_original(&self) -> bool {
        self.origin == Origin::Original
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.origin {
            Origin::Original => {
                if self.method.is_some()
                    || self.query_id.is_some()
                    || !self.source_doc_ids.is_empty()
                {
                    return Err("original documents carry no generation provenance".into());
                }
            }
            Origin::Generated => {
                let method = self
                    .method
                    .ok_or("generated document without a method")?;
                match &self.query_id {
                    Some(q) if !q.is_empty() => {}
                    _ => return Err("generated document without a query id".into()),
                }
                if self.source_doc_ids.len() != method.arity() {
                    return Err(format!(
                        "method {method} takes {} source documents, got {}",
                        method.arity(),
                        self.source_doc_ids.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Provenance::is_original")]
    pub provenance: Provenance,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            text: text.into(),
            title: None,
            provenance: Provenance::original(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn is_generated(&self) -> bool {
        self.provenance.origin == Origin::Generated
    }

    /// Text as seen by retrieval and prompts: `"title. text"` when a title exists.
    pub fn indexed_text(&self) -> Cow<'_, str> {
        match &self.title {
            Some(title) if !title.trim().is_empty() => {
                Cow::Owned(format!("{}. {}", title.trim(), self.text))
            }
            _ => Cow::Borrowed(&self.text),
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidDocument {
            doc_id: self.doc_id.clone(),
            reason,
        };
        if self.doc_id.trim().is_empty() {
            return Err(invalid("empty doc_id".into()));
        }
        if text::word_count(&self.text) == 0 {
            return Err(invalid("empty text".into()));
        }
        self.provenance.validate().map_err(invalid)
    }
}

/// A query or question with graded judgments and, for QA data, gold answers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    #[serde(default)]
    pub qrels: BTreeMap<String, u8>,
    #[serde(default)]
    pub gold_answers: Vec<String>,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        QueryRecord {
            query_id: query_id.into(),
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn grade(&self, doc_id: &str) -> u8 {
        self.qrels.get(doc_id).copied().unwrap_or(0)
    }

    pub fn is_relevant(&self, doc_id: &str) -> bool {
        self.grade(doc_id) >= RELEVANCE_THRESHOLD
    }

    /// Relevant document ids in ascending id order.
    pub fn relevant_ids(&self) -> Vec<&str> {
        self.qrels
            .iter()
            .filter(|(_, &g)| g >= RELEVANCE_THRESHOLD)
            .map(|(d, _)| d.as_str())
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub count: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct GenerationKey {
    query_id: String,
    method: Method,
    model_tag: String,
}

/// An in-memory corpus of original and generated documents.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    id: String,
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    generated: HashMap<GenerationKey, usize>,
    queries: BTreeSet<String>,
}

impl Corpus {
    pub fn new(id: impl Into<String>) -> Self {
        Corpus {
            id: id.into(),
            ..Default::default()
        }
    }

    pub fn from_documents(
        id: impl Into<String>,
        docs: impl IntoIterator<Item = Document>,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::new(id);
        for doc in docs {
            corpus.insert(doc)?;
        }
        Ok(corpus)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn insert(&mut self, doc: Document) -> Result<(), CorpusError> {
        doc.validate()?;
        if self.by_id.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateId(doc.doc_id));
        }
        let idx = self.docs.len();
        if doc.is_generated() {
            let p = &doc.provenance;
            let key = GenerationKey {
                query_id: p.query_id.clone().unwrap_or_default(),
                method: p.method.expect("validated"),
                model_tag: p.model_tag.clone().unwrap_or_default(),
            };
            if self.generated.contains_key(&key) {
                return Err(CorpusError::DuplicateGenerated {
                    query_id: key.query_id,
                    method: key.method,
                    model_tag: key.model_tag,
                });
            }
            self.generated.insert(key, idx);
        }
        self.by_id.insert(doc.doc_id.clone(), idx);
        self.docs.push(doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn originals(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(|d| !d.is_generated())
    }

    pub fn generated(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().filter(|d| d.is_generated())
    }

    /// The generated document for `(query, method, model)`, if one exists.
    pub fn generated_for(&self, query_id: &str, method: Method, model_tag: &str) -> Option<&Document> {
        let key = GenerationKey {
            query_id: query_id.to_string(),
            method,
            model_tag: model_tag.to_string(),
        };
        self.generated.get(&key).map(|&i| &self.docs[i])
    }

    pub fn has_generation_tag(&self, method: Method, model_tag: &str) -> bool {
        self.generated
            .keys()
            .any(|k| k.method == method && k.model_tag == model_tag)
    }

    pub fn register_queries<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) {
        self.queries.extend(ids.into_iter().map(str::to_string));
    }

    pub fn knows_query(&self, query_id: &str) -> bool {
        self.queries.contains(query_id)
    }

    /// Writes one JSON object per line in insertion order.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for doc in &self.docs {
            serde_json::to_writer(&mut out, doc).expect("document serializes");
            out.write_all(b"\n").map_err(|e| CorpusError::io(path, e))?;
        }
        out.flush().map_err(|e| CorpusError::io(path, e))
    }
}

/// Reads a corpus file. JSONL records carry `doc_id`, `text` and optional
/// `title` / `provenance`; TSV rows are `doc_id<TAB>text` or
/// `doc_id<TAB>title<TAB>text`.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<(Corpus, IngestReport), CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ingest_reader(id, BufReader::new(file), format)
}

pub fn ingest_reader(
    corpus_id: impl Into<String>,
    reader: impl BufRead,
    format: CorpusFormat,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let mut corpus = Corpus::new(corpus_id);
    let mut report = IngestReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = match format {
            CorpusFormat::Jsonl => serde_json::from_str::<Document>(&line).map_err(|e| {
                CorpusError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                }
            })?,
            CorpusFormat::Tsv => parse_tsv_row(&line, line_no)?,
        };
        match doc.validate() {
            Ok(()) => {}
            Err(CorpusError::InvalidDocument { reason, .. }) => {
                return Err(CorpusError::MalformedRecord {
                    line: line_no,
                    reason,
                })
            }
            Err(e) => return Err(e),
        }
        corpus.insert(doc)?;
    }
    report.count = corpus.len();
    if corpus.is_empty() {
        log::warn!("corpus {:?} is empty", corpus.id());
        report.warnings.push("corpus is empty".to_string());
    }
    Ok((corpus, report))
}

fn parse_tsv_row(line: &str, line_no: usize) -> Result<Document, CorpusError> {
    let fields: Vec<&str> = line.split('\t').collect();
    match fields.as_slice() {
        [id, text] => Ok(Document::new(*id, *text)),
        [id, title, text] => Ok(Document::new(*id, *text).with_title(*title)),
        _ => Err(CorpusError::MalformedRecord {
            line: line_no,
            reason: format!("expected 2 or 3 tab-separated fields, got {}", fields.len()),
        }),
    }
}

/// Splits `text` into consecutive, disjoint word spans of `chunk_size` words.
pub fn chunk_words(text: &str, chunk_size: usize) -> Vec<String> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    text::words(text)
        .chunks(chunk_size)
        .map(|c| c.join(" "))
        .collect()
}

/// Chunks a page into passage documents `"{page_id}#{i}"`, each carrying the page title.
pub fn chunk_document(
    page_id: &str,
    title: Option<&str>,
    text: &str,
    chunk_size: usize,
) -> Vec<Document> {
    chunk_words(text, chunk_size)
        .into_iter()
        .enumerate()
        .map(|(i, chunk)| {
            let doc = Document::new(format!("{page_id}#{i}"), chunk);
            match title {
                Some(t) => doc.with_title(t),
                None => doc,
            }
        })
        .collect()
}

/// Original documents plus the generated documents of one query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusView {
    pub base_corpus_id: String,
    /// `None` for the non-enriched corpus.
    pub active_query_id: Option<String>,
    pub included_generated_docs: BTreeSet<String>,
}

impl CorpusView {
    pub fn plain(corpus: &Corpus) -> Self {
        CorpusView {
            base_corpus_id: corpus.id().to_string(),
            active_query_id: None,
            included_generated_docs: BTreeSet::new(),
        }
    }

    pub fn contains(&self, doc: &Document) -> bool {
        !doc.is_generated() || self.included_generated_docs.contains(&doc.doc_id)
    }

    pub fn documents<'c>(&'c self, corpus: &'c Corpus) -> impl Iterator<Item = &'c Document> + 'c {
        corpus.documents().iter().filter(move |d| self.contains(d))
    }

    pub fn len(&self, corpus: &Corpus) -> usize {
        corpus.originals().count() + self.included_generated_docs.len()
    }
}

/// The corpus as seen by one query: every original document plus the document
/// generated for this query by `(method, model_tag)`, if any.
pub fn enriched_view(
    corpus: &Corpus,
    query_id: &str,
    method: Method,
    model_tag: &str,
) -> Result<CorpusView, CorpusError> {
    if !corpus.knows_query(query_id) {
        return Err(CorpusError::UnknownQuery(query_id.to_string()));
    }
    if !corpus.has_generation_tag(method, model_tag) {
        return Err(CorpusError::UnknownMethodTag {
            method,
            model_tag: model_tag.to_string(),
        });
    }
    let included = corpus
        .generated_for(query_id, method, model_tag)
        .map(|d| d.doc_id.clone())
        .into_iter()
        .collect();
    Ok(CorpusView {
        base_corpus_id: corpus.id().to_string(),
        active_query_id: Some(query_id.to_string()),
        included_generated_docs: included,
    })
}

/// Qrels keyed by query id then doc id.
pub type Qrels = BTreeMap<String, BTreeMap<String, u8>>;

/// Parses TREC qrels lines `query_id 0 doc_id grade`.
pub fn parse_qrels(reader: impl BufRead) -> Result<Qrels, CorpusError> {
    let mut qrels = Qrels::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::MalformedRecord {
            line: line_no,
            reason: e.to_string(),
        })?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord {
            line: line_no,
            reason,
        };
        let [qid, _, doc_id, grade] = fields.as_slice() else {
            return Err(malformed(format!("expected 4 fields, got {}", fields.len())));
        };
        let grade: i64 = grade
            .parse()
            .map_err(|_| malformed(format!("grade {grade:?} is not an integer")))?;
        if !(0..=MAX_GRADE as i64).contains(&grade) {
            return Err(malformed(format!("grade {grade} outside 0..=3")));
        }
        qrels
            .entry(qid.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade as u8);
    }
    Ok(qrels)
}

pub fn load_qrels(path: &Path) -> Result<Qrels, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_qrels(BufReader::new(file))
}

pub fn write_qrels(qrels: &Qrels, out: &mut impl Write) -> io::Result<()> {
    for (qid, docs) in qrels {
        for (doc_id, grade) in docs {
            writeln!(out, "{qid} 0 {doc_id} {grade}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize, Serialize)]
struct QueryLine {
    query_id: String,
    text: String,
    #[serde(default)]
    answers: Vec<String>,
}

/// Reads queries from JSONL (`query_id`, `text`, optional `answers`) or, for
/// any other extension, TSV `query_id<TAB>text`.
pub fn load_queries(path: &Path) -> Result<Vec<QueryRecord>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let jsonl = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json"));
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = if jsonl {
            let q: QueryLine =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            for a in &q.answers {
                if text::word_count(a) > 5 {
                    log::warn!("answer {a:?} for query {} exceeds five words", q.query_id);
                }
            }
            QueryRecord {
                query_id: q.query_id,
                text: q.text,
                qrels: BTreeMap::new(),
                gold_answers: q.answers,
            }
        } else {
            let (id, text) = line.split_once('\t').ok_or(CorpusError::MalformedRecord {
                line: line_no,
                reason: "expected query_id<TAB>text".into(),
            })?;
            QueryRecord::new(id, text)
        };
        if !seen.insert(record.query_id.clone()) {
            return Err(CorpusError::DuplicateId(record.query_id));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_queries_jsonl(queries: &[QueryRecord], out: &mut impl Write) -> io::Result<()> {
    for q in queries {
        let line = QueryLine {
            query_id: q.query_id.clone(),
            text: q.text.clone(),
            answers: q.gold_answers.clone(),
        };
        serde_json::to_writer(&mut *out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Copies qrels into the matching query records.
pub fn attach_qrels(queries: &mut [QueryRecord], qrels: &Qrels) {
    for q in queries {
        if let Some(j) = qrels.get(&q.query_id) {
            q.qrels = j.clone();
        }
    }
}

/// Append-only on-disk document file with an id → byte-offset map.
///
/// Layout: `docs.jsonl` holds one document per line; `offsets.json` maps
/// doc ids to line offsets and is rewritten by [`DocStore::flush`].
pub struct DocStore {
    dir: PathBuf,
    writer: Option<BufWriter<File>>,
    offsets: BTreeMap<String, u64>,
    end: u64,
}

impl DocStore {
    const DOCS: &'static str = "docs.jsonl";
    const OFFSETS: &'static str = "offsets.json";

    pub fn create(dir: &Path) -> Result<Self, CorpusError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let path = dir.join(Self::DOCS);
        let file = File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
        Ok(DocStore {
            dir: dir.to_path_buf(),
            writer: Some(BufWriter::new(file)),
            offsets: BTreeMap::new(),
            end: 0,
        })
    }

    /// Opens an existing store read-only.
    pub fn open(dir: &Path) -> Result<Self, CorpusError> {
        let path = dir.join(Self::OFFSETS);
        let offsets: BTreeMap<String, u64> = match File::open(&path) {
            Ok(f) => serde_json::from_reader(BufReader::new(f)).map_err(|e| {
                CorpusError::MalformedRecord {
                    line: 0,
                    reason: format!("{}: {e}", path.display()),
                }
            })?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Self::scan(dir)?,
            Err(e) => return Err(CorpusError::io(&path, e)),
        };
        let docs = dir.join(Self::DOCS);
        let end = std::fs::metadata(&docs)
            .map_err(|e| CorpusError::io(&docs, e))?
            .len();
        Ok(DocStore {
            dir: dir.to_path_buf(),
            writer: None,
            offsets,
            end,
        })
    }

    fn scan(dir: &Path) -> Result<BTreeMap<String, u64>, CorpusError> {
        let path = dir.join(Self::DOCS);
        let file = File::open(&path).map_err(|e| CorpusError::io(&path, e))?;
        let mut reader = BufReader::new(file);
        let mut offsets = BTreeMap::new();
        let mut pos = 0u64;
        let mut line = String::new();
        let mut line_no = 0;
        loop {
            line.clear();
            let n = reader
                .read_line(&mut line)
                .map_err(|e| CorpusError::io(&path, e))?;
            if n == 0 {
                break;
            }
            line_no += 1;
            let doc: Document =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            offsets.insert(doc.doc_id, pos);
            pos += n as u64;
        }
        Ok(offsets)
    }

    pub fn append(&mut self, doc: &Document) -> Result<(), CorpusError> {
        doc.validate()?;
        if self.offsets.contains_key(&doc.doc_id) {
            return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
        }
        let path = self.dir.join(Self::DOCS);
        let writer = self.writer.as_mut().ok_or_else(|| {
            CorpusError::io(&path, io::Error::other("store opened read-only"))
        })?;
        let mut line = serde_json::to_vec(doc).expect("document serializes");
        line.push(b'\n');
        writer
            .write_all(&line)
            .map_err(|e| CorpusError::io(&path, e))?;
        self.offsets.insert(doc.doc_id.clone(), self.end);
        self.end += line.len() as u64;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CorpusError> {
        if let Some(w) = self.writer.as_mut() {
            let path = self.dir.join(Self::DOCS);
            w.flush().map_err(|e| CorpusError::io(&path, e))?;
        }
        let path = self.dir.join(Self::OFFSETS);
        let file = File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
        serde_json::to_writer(BufWriter::new(file), &self.offsets)
            .map_err(|e| CorpusError::io(&path, e.into()))
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Result<Document, CorpusError> {
        let offset = *self
            .offsets
            .get(doc_id)
            .ok_or_else(|| CorpusError::UnknownDocument(doc_id.to_string()))?;
        let path = self.dir.join(Self::DOCS);
        let mut file = File::open(&path).map_err(|e| CorpusError::io(&path, e))?;
        file.seek(SeekFrom::Start(offset))
            .map_err(|e| CorpusError::io(&path, e))?;
        let mut line = String::new();
        BufReader::new(file)
            .read_line(&mut line)
            .map_err(|e| CorpusError::io(&path, e))?;
        serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
            line: 0,
            reason: e.to_string(),
        })
    }

    /// Loads every stored document into a [`Corpus`], in file order.
    pub fn load_corpus(&self, id: impl Into<String>) -> Result<Corpus, CorpusError> {
        let path = self.dir.join(Self::DOCS);
        let file = File::open(&path).map_err(|e| CorpusError::io(&path, e))?;
        Ok(ingest_reader(id, BufReader::new(file), CorpusFormat::Jsonl)?.0)
    }
}
