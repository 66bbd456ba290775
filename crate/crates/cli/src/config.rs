//! Declarative run configuration (TOML) with command-line overrides.

use std::path::{Path, PathBuf};

use enrichkit::adhoc::{RERANK_DEPTH, RETRIEVAL_DEPTH};
use enrichkit::attribution::DEFAULT_POOL;
use enrichkit::corpus::{CorpusFormat, Method};
use enrichkit::enrichment::{LengthPolicy, Task, DEFAULT_MAX_TOKENS};
use enrichkit::faithfulness::SampleTag;
use enrichkit::gateway::{GatewayConfig, MockSpec, TranscriptMode};
use enrichkit::metrics::DEFAULT_PERMUTATIONS;
use enrichkit::rag::{MatchMode, DEFAULT_ANSWER_TOKENS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    /// 50 documents, 5 queries.
    AdhocSmall,
    /// 500 documents, 20 queries.
    AdhocStandard,
    /// 20 capital-city questions with gold answers.
    Qa,
}

pub const QA_FIXTURE_QUESTIONS: usize = 20;
pub const QA_FIXTURE_SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankerKind {
    Bm25,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionRanker {
    Bm25,
    Bm25Nli,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySection {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_concurrent: usize,
    pub retries: u32,
    pub transcript_mode: TranscriptMode,
    /// Defaults to `<out_dir>/transcripts/gateway.jsonl`.
    pub transcript: Option<PathBuf>,
    /// Serve requests from an in-process mock instead of HTTP.
    pub mock: Option<MockSpec>,
}

impl Default for GatewaySection {
    fn default() -> Self {
        let g = GatewayConfig::default();
        GatewaySection {
            base_url: g.base_url,
            timeout_secs: g.timeout_secs,
            max_concurrent: g.max_concurrent,
            retries: g.retries,
            transcript_mode: TranscriptMode::Off,
            transcript: None,
            mock: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrichSection {
    pub max_tokens: u32,
    /// Overrides the task's default length policy.
    pub length_policy: Option<LengthPolicy>,
}

impl Default for EnrichSection {
    fn default() -> Self {
        EnrichSection {
            max_tokens: DEFAULT_MAX_TOKENS,
            length_policy: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdhocSection {
    pub retrieval_depth: usize,
    pub rerank_depth: usize,
    pub generated_grade: Option<u8>,
    pub permutations: usize,
    pub embed_batch_size: usize,
    pub embedding_cache: Option<PathBuf>,
}

impl Default for AdhocSection {
    fn default() -> Self {
        AdhocSection {
            retrieval_depth: RETRIEVAL_DEPTH,
            rerank_depth: RERANK_DEPTH,
            generated_grade: None,
            permutations: DEFAULT_PERMUTATIONS,
            embed_batch_size: 64,
            embedding_cache: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaithfulnessSection {
    pub k: Vec<usize>,
    pub samples: Vec<SampleTag>,
    pub rd_baseline: bool,
}

impl Default for FaithfulnessSection {
    fn default() -> Self {
        FaithfulnessSection {
            k: vec![1, 3, 5],
            samples: vec![SampleTag::Rel, SampleTag::Corpus],
            rd_baseline: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RagSection {
    pub match_mode: MatchMode,
    pub max_tokens: u32,
    pub depth: usize,
    /// Also answer without retrieval.
    pub no_retrieval: bool,
}

impl Default for RagSection {
    fn default() -> Self {
        RagSection {
            match_mode: MatchMode::default(),
            max_tokens: DEFAULT_ANSWER_TOKENS,
            depth: 5,
            no_retrieval: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub rankers: Vec<AttributionRanker>,
    pub pool: usize,
}

impl Default for AttributionSection {
    fn default() -> Self {
        AttributionSection {
            rankers: vec![AttributionRanker::Bm25, AttributionRanker::Bm25Nli],
            pool: DEFAULT_POOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignificanceSection {
    pub run_a: Option<PathBuf>,
    pub run_b: Option<PathBuf>,
    /// `ndcg@K` or `map@K`.
    pub metrics: Vec<String>,
    pub permutations: usize,
}

impl Default for SignificanceSection {
    fn default() -> Self {
        SignificanceSection {
            run_a: None,
            run_b: None,
            metrics: vec!["ndcg@10".into(), "ndcg@100".into(), "map@100".into()],
            permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: String,
    /// Use a bundled synthetic dataset instead of corpus/queries files.
    pub fixture: Option<FixtureKind>,
    pub corpus: Option<PathBuf>,
    pub corpus_format: String,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    /// Generated-document files; defaults to the `enrich` outputs for `methods`.
    pub generated: Vec<PathBuf>,
    pub task: Task,
    pub methods: Vec<Method>,
    pub model_tag: String,
    pub rankers: Vec<RankerKind>,
    pub embed_model: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Largest tolerated fraction of failed backend-dependent units.
    pub failure_budget: f64,
    pub gateway: GatewaySection,
    pub enrich: EnrichSection,
    pub adhoc: AdhocSection,
    pub faithfulness: FaithfulnessSection,
    pub rag: RagSection,
    pub attribution: AttributionSection,
    pub significance: SignificanceSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "dataset".into(),
            fixture: None,
            corpus: None,
            corpus_format: "jsonl".into(),
            queries: None,
            qrels: None,
            generated: Vec::new(),
            task: Task::Adhoc,
            methods: Vec::new(),
            model_tag: "model".into(),
            rankers: vec![RankerKind::Bm25],
            embed_model: "embedder".into(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            workers: 4,
            failure_budget: 0.05,
            gateway: GatewaySection::default(),
            enrich: EnrichSection::default(),
            adhoc: AdhocSection::default(),
            faithfulness: FaithfulnessSection::default(),
            rag: RagSection::default(),
            attribution: AttributionSection::default(),
            significance: SignificanceSection::default(),
        }
    }
}

/// Values given on the command line; each replaces its config counterpart.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub model_tag: Option<String>,
    pub methods: Option<Vec<Method>>,
    pub workers: Option<usize>,
    pub fixture: Option<FixtureKind>,
    pub qrels: Option<PathBuf>,
    pub transcript_mode: Option<TranscriptMode>,
    pub transcript: Option<PathBuf>,
    pub failure_budget: Option<f64>,
    pub mock: bool,
}

/// What a command reads.
#[derive(Clone, Copy, Debug, Default)]
pub struct Needs {
    pub corpus: bool,
    pub qrels: bool,
    pub answers: bool,
    pub generated: bool,
}

impl RunConfig {
    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.corpus,
            &mut self.queries,
            &mut self.qrels,
            &mut self.gateway.transcript,
            &mut self.adhoc.embedding_cache,
            &mut self.significance.run_a,
            &mut self.significance.run_b,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.generated.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.out_dir {
            self.out_dir = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.model_tag {
            self.model_tag = v;
        }
        if let Some(v) = o.methods {
            self.methods = v;
        }
        if let Some(v) = o.workers {
            self.workers = v;
        }
        if let Some(v) = o.fixture {
            self.fixture = Some(v);
        }
        if let Some(v) = o.qrels {
            self.qrels = Some(v);
        }
        if let Some(v) = o.transcript_mode {
            self.gateway.transcript_mode = v;
        }
        if let Some(v) = o.transcript {
            self.gateway.transcript = Some(v);
        }
        if let Some(v) = o.failure_budget {
            self.failure_budget = v;
        }
        if o.mock && self.gateway.mock.is_none() {
            self.gateway.mock = Some(MockSpec::default());
        }
    }

    pub fn corpus_format(&self) -> Result<CorpusFormat> {
        self.corpus_format.parse().map_err(CliError::Validation)
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.gateway
            .transcript
            .clone()
            .unwrap_or_else(|| self.out_dir.join("transcripts").join("gateway.jsonl"))
    }

    /// Where `enrich` writes, and other commands look for, generated documents.
    pub fn generated_path(&self, method: Method) -> PathBuf {
        self.out_dir.join(self.generated_rel(method))
    }

    pub fn generated_rel(&self, method: Method) -> String {
        format!("runs/generated-{}-{}.jsonl", method.tag(), file_safe(&self.model_tag))
    }

    pub fn generated_paths(&self) -> Vec<PathBuf> {
        if self.generated.is_empty() {
            self.methods.iter().map(|&m| self.generated_path(m)).collect()
        } else {
            self.generated.clone()
        }
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        let g = &self.gateway;
        GatewayConfig {
            base_url: g.base_url.clone(),
            timeout_secs: g.timeout_secs,
            max_concurrent: g.max_concurrent,
            retries: g.retries,
            record_replay_path: (g.transcript_mode != TranscriptMode::Off).then(|| self.transcript_path()),
            transcript_mode: g.transcript_mode,
        }
        .with_env_override()
    }

    /// Checks settings and that every referenced input exists.
    pub fn validate(&self, needs: Needs) -> Result<()> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.failure_budget) {
            return bad(format!("failure_budget {} is outside [0, 1]", self.failure_budget));
        }
        if self.gateway.max_concurrent == 0 {
            return bad("gateway.max_concurrent must be at least 1".into());
        }
        if self.model_tag.trim().is_empty() {
            return bad("model_tag is empty".into());
        }
        self.corpus_format()?;
        let exists = |what: &str, p: &Path| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Validation(format!("{what} {} does not exist", p.display())))
            }
        };
        if needs.corpus && self.fixture.is_none() {
            match (&self.corpus, &self.queries) {
                (Some(c), Some(q)) => {
                    exists("corpus", c)?;
                    exists("queries", q)?;
                }
                _ => return bad("set either `fixture` or both `corpus` and `queries`".into()),
            }
        }
        if let Some(q) = &self.qrels {
            exists("qrels", q)?;
        } else if needs.qrels && !matches!(self.fixture, Some(FixtureKind::AdhocSmall | FixtureKind::AdhocStandard)) {
            return bad("this command needs `qrels`".into());
        }
        if needs.answers {
            let answers_ok = match self.fixture {
                Some(f) => f == FixtureKind::Qa,
                None => self
                    .queries
                    .as_deref()
                    .and_then(Path::extension)
                    .is_some_and(|e| e.eq_ignore_ascii_case("jsonl") || e.eq_ignore_ascii_case("json")),
            };
            if !answers_ok {
                return bad("this command needs gold answers: use the qa fixture or a JSONL queries file with `answers`".into());
            }
        }
        if needs.generated {
            if self.methods.is_empty() && self.generated.is_empty() {
                return bad("no generation methods configured".into());
            }
            for p in self.generated_paths() {
                if !p.exists() {
                    return bad(format!(
                        "generated documents {} do not exist (run `enrich` first or set `generated`)",
                        p.display()
                    ));
                }
            }
        }
        if self.faithfulness.k.contains(&0) {
            return bad("faithfulness k values must be at least 1".into());
        }
        if self.gateway.transcript_mode == TranscriptMode::Replay {
            exists("replay transcript", &self.transcript_path())?;
        }
        Ok(())
    }
}

/// Keeps letters, digits, `.`, `_` and `-`; replaces everything else with `_`.
pub fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let cfg: RunConfig = toml::from_str(
            r#"
            dataset = "synthetic"
            fixture = "adhoc-small"
            methods = ["2DS", "ZS"]
            model_tag = "mock"
            rankers = ["bm25", "dense"]
            seed = 3

            [gateway]
            transcript_mode = "record"
            [gateway.mock.generate]
            mode = "echo"
            slot = "passage 1"

            [adhoc]
            generated_grade = 2
            permutations = 1000

            [faithfulness]
            k = [1, 3]
            samples = ["Rel"]

            [attribution]
            rankers = ["bm25_nli"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.methods, vec![Method::TwoDocSummary, Method::ZeroShot]);
        assert_eq!(cfg.rankers, vec![RankerKind::Bm25, RankerKind::Dense]);
        assert_eq!(cfg.adhoc.generated_grade, Some(2));
        assert_eq!(cfg.gateway.transcript_mode, TranscriptMode::Record);
        assert!(cfg.gateway.mock.is_some());
        assert_eq!(cfg.attribution.rankers, vec![AttributionRanker::Bm25Nli]);
        assert_eq!(cfg.adhoc.rerank_depth, RERANK_DEPTH);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("corpuss = \"x\"").is_err());
    }

    #[test]
    fn missing_qrels_fails_validation() {
        let cfg = RunConfig {
            fixture: Some(FixtureKind::Qa),
            qrels: Some("/nonexistent/qrels.txt".into()),
            ..Default::default()
        };
        let e = cfg.validate(Needs { qrels: true, ..Default::default() }).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(file_safe("org/model:7b"), "org_model_7b");
    }
}
