//! Batch entry points for enrichkit experiments: indexing, enrichment,
//! ad hoc retrieval evaluation, faithfulness, RAG, attribution and
//! significance testing, plus an HTTP mock model server.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod serve;

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use enrichkit::corpus::Method;
use enrichkit::gateway::{EmbedMock, GenerateMock, MockSpec, NliMock, TranscriptMode};

use crate::config::{FixtureKind, Overrides, RunConfig};
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "enrichkit", version, about = "Corpus enrichment and retrieval evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub model_tag: Option<String>,
    /// Comma-separated method tags (ZS, DM, 2DS, 2DSR, 3DS).
    #[arg(long, global = true, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use a bundled synthetic dataset.
    #[arg(long, global = true, value_enum)]
    pub fixture: Option<FixtureKind>,
    #[arg(long, global = true)]
    pub qrels: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_transcript_mode)]
    pub transcript_mode: Option<TranscriptMode>,
    #[arg(long, global = true)]
    pub transcript: Option<PathBuf>,
    #[arg(long, global = true)]
    pub failure_budget: Option<f64>,
    /// Answer model calls with the default in-process mock unless the config sets one.
    #[arg(long, global = true)]
    pub mock: bool,
}

fn parse_transcript_mode(s: &str) -> Result<TranscriptMode, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("expected off, record or replay, got {s:?}"))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the lexical index and write BM25 runs for all queries.
    Index,
    /// Generate one document per query for each configured method.
    Enrich,
    /// Evaluate rankers on the plain and enriched corpora.
    Adhoc,
    /// Score generated documents against relevant and corpus samples.
    Faithfulness,
    /// Answer questions with and without retrieval.
    Rag,
    /// Run the attribution matrix over plain and enriched corpora.
    Attribution,
    /// Paired permutation tests between two TREC runs.
    Significance {
        #[arg(long)]
        run_a: Option<PathBuf>,
        #[arg(long)]
        run_b: Option<PathBuf>,
        #[arg(long)]
        permutations: Option<usize>,
    },
    /// Write a bundled synthetic dataset and a starter config.
    Fixture {
        #[arg(long, value_enum)]
        kind: FixtureKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the gateway protocol from a mock backend.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8808")]
        addr: String,
        /// JSON mock specification; flags below are ignored when given.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// template, echo
        #[arg(long, default_value = "template")]
        generate: String,
        /// Slot echoed by `--generate echo`; the last slot when omitted.
        #[arg(long)]
        echo_slot: Option<String>,
        #[arg(long, default_value_t = 256)]
        embed_dim: usize,
        #[arg(long, default_value_t = 8)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out_dir: self.out_dir.clone(),
            seed: self.seed,
            model_tag: self.model_tag.clone(),
            methods: self.methods.clone(),
            workers: self.workers,
            fixture: self.fixture,
            qrels: self.qrels.clone(),
            transcript_mode: self.transcript_mode,
            transcript: self.transcript.clone(),
            failure_budget: self.failure_budget,
            mock: self.mock,
        }
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(self.overrides());
        Ok(cfg)
    }
}

fn mock_spec(spec: Option<&PathBuf>, generate: &str, echo_slot: Option<String>, embed_dim: usize) -> Result<MockSpec> {
    if let Some(p) = spec {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::validation(format!("spec {}: {e}", p.display())))?;
        return serde_json::from_str(&text).map_err(|e| CliError::validation(format!("spec {}: {e}", p.display())));
    }
    let generate = match generate {
        "template" => GenerateMock::Template,
        "echo" => GenerateMock::Echo { slot: echo_slot },
        other => return Err(CliError::validation(format!("unknown generate mode {other:?}"))),
    };
    Ok(MockSpec {
        generate,
        embed: EmbedMock::HashEmbedding { dim: embed_dim },
        nli: NliMock::LexicalOverlap,
    })
}

fn with_pool(workers: usize, f: impl FnOnce() -> Result<()> + Send) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::validation(format!("worker pool: {e}")))?;
    pool.install(f)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fixture { kind, out } => commands::cmd_fixture(kind, &out),
        Command::ServeMock {
            addr,
            spec,
            generate,
            echo_slot,
            embed_dim,
            threads,
            delay_ms,
        } => {
            let spec = mock_spec(spec.as_ref(), &generate, echo_slot, embed_dim)?;
            let options = serve::ServeOptions {
                workers: threads,
                delay: Duration::from_millis(delay_ms),
                fail_first: 0,
            };
            let server = serve::MockServer::start(spec, &addr, options)
                .map_err(|e| CliError::validation(format!("cannot bind {addr}: {e}")))?;
            eprintln!("{}", serde_json::json!({ "listening": server.url() }));
            server.join();
            Ok(())
        }
        command => {
            let mut cfg = cli.global.run_config()?;
            if let Command::Significance {
                run_a,
                run_b,
                permutations,
            } = &command
            {
                if let Some(p) = run_a {
                    cfg.significance.run_a = Some(p.clone());
                }
                if let Some(p) = run_b {
                    cfg.significance.run_b = Some(p.clone());
                }
                if let Some(n) = permutations {
                    cfg.significance.permutations = *n;
                }
            }
            if cfg.workers == 0 {
                return Err(CliError::validation("workers must be at least 1"));
            }
            with_pool(cfg.workers, || match command {
                Command::Index => commands::cmd_index(&cfg),
                Command::Enrich => commands::cmd_enrich(&cfg),
                Command::Adhoc => commands::cmd_adhoc(&cfg),
                Command::Faithfulness => commands::cmd_faithfulness(&cfg),
                Command::Rag => commands::cmd_rag(&cfg),
                Command::Attribution => commands::cmd_attribution(&cfg),
                Command::Significance { .. } => commands::cmd_significance(&cfg),
                Command::Fixture { .. } | Command::ServeMock { .. } => unreachable!("handled above"),
            })
        }
    }
}
