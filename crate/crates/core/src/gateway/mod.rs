//! The boundary to model inference: text generation, embeddings and NLI
//! scoring behind one JSON wire protocol, with bounded concurrency, retries
//! and content-hash keyed record/replay.

mod http;
mod mock;
mod transcript;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::prompts::Prompt;

pub use http::HttpBackend;
pub use mock::{hash_embedding, lexical_overlap, scripted_key, EmbedMock, GenerateMock, MockBackend, MockSpec, NliMock};
pub use transcript::{Transcript, TranscriptMode};

pub const GATEWAY_URL_ENV: &str = "ENRICHKIT_GATEWAY_URL";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("protocol error (status {status}): {body}")]
    ProtocolError { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("embedding dimension changed for model {model:?}: expected {expected}, got {got}")]
    DimensionDrift {
        model: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    fn retryable(&self) -> bool {
        match self {
            GatewayError::Timeout(_) | GatewayError::Transport(_) => true,
            GatewayError::ProtocolError { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Request and response bodies of the wire protocol.
pub mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct GenerateRequest {
        pub prompt: String,
        pub temperature: f64,
        pub max_tokens: u32,
        /// Named slot values the prompt was rendered from. Optional; live
        /// sidecars ignore it, mock servers use it like the in-process mock.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        pub slots: Vec<PromptSlot>,
    }

    #[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
    pub struct PromptSlot {
        pub name: String,
        pub value: String,
    }

    impl GenerateRequest {
        /// The structured prompt carried by this request.
        pub fn to_prompt(&self) -> crate::prompts::Prompt {
            crate::prompts::Prompt::from_parts(
                self.prompt.clone(),
                self.slots.iter().map(|s| (s.name.clone(), s.value.clone())).collect(),
            )
        }
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct GenerateResponse {
        pub text: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub texts: Vec<String>,
        pub model: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub vectors: Vec<Vec<f32>>,
        pub dim: usize,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct NliRequest {
        pub premise: String,
        pub hypothesis: String,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct NliResponse {
        pub score: f64,
    }

    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub error: String,
        #[serde(default)]
        pub detail: String,
    }

    pub const GENERATE_PATH: &str = "/v1/generate";
    pub const EMBED_PATH: &str = "/v1/embed";
    pub const NLI_PATH: &str = "/v1/nli";
    pub const HEALTH_PATH: &str = "/v1/health";
}

use wire::*;

/// A raw model backend. Implementations see the wire request; `generate`
/// additionally receives the structured prompt it was rendered from.
pub trait Backend: Send + Sync {
    fn generate(&self, req: &GenerateRequest, prompt: &Prompt) -> Result<GenerateResponse, GatewayError>;
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError>;
    fn nli(&self, req: &NliRequest) -> Result<NliResponse, GatewayError>;
}

/// Refuses every call; used when all responses must come from a transcript.
pub struct OfflineBackend;

impl OfflineBackend {
    fn refuse<T>() -> Result<T, GatewayError> {
        Err(GatewayError::ProtocolError {
            status: 503,
            body: "offline backend: no live model available".into(),
        })
    }
}

impl Backend for OfflineBackend {
    fn generate(&self, _: &GenerateRequest, _: &Prompt) -> Result<GenerateResponse, GatewayError> {
        Self::refuse()
    }
    fn embed(&self, _: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        Self::refuse()
    }
    fn nli(&self, _: &NliRequest) -> Result<NliResponse, GatewayError> {
        Self::refuse()
    }
}

pub trait TextGenerator: Sync {
    fn generate(&self, prompt: &Prompt, temperature: f64, max_tokens: u32) -> Result<String, GatewayError>;
}

pub trait Embedder: Sync {
    fn embed(&self, texts: &[String], model_tag: &str) -> Result<Vec<Vec<f32>>, GatewayError>;
}

/// Scores how strongly `premise` entails `hypothesis`, in `[0, 1]`.
pub trait NliScorer: Sync {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64, GatewayError>;

    /// Scores several premises against one hypothesis, preserving order.
    fn nli_batch(&self, premises: &[String], hypothesis: &str) -> Result<Vec<f64>, GatewayError> {
        premises.iter().map(|p| self.nli_score(p, hypothesis)).collect()
    }
}

impl<F> NliScorer for F
where
    F: Fn(&str, &str) -> f64 + Sync,
{
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64, GatewayError> {
        Ok(self(premise, hypothesis))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_concurrent: usize,
    pub retries: u32,
    pub record_replay_path: Option<PathBuf>,
    pub transcript_mode: TranscriptMode,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "http://127.0.0.1:8808".into(),
            timeout_secs: 120.0,
            max_concurrent: 4,
            retries: 3,
            record_replay_path: None,
            transcript_mode: TranscriptMode::Off,
        }
    }
}

impl GatewayConfig {
    /// Applies `ENRICHKIT_GATEWAY_URL` when set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(url) = std::env::var(GATEWAY_URL_ENV) {
            if !url.trim().is_empty() {
                self.base_url = url;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrent < 1 {
            return Err(GatewayError::InvalidRequest("max_concurrent must be at least 1".into()));
        }
        if self.transcript_mode != TranscriptMode::Off && self.record_replay_path.is_none() {
            return Err(GatewayError::InvalidRequest(
                "record/replay requires record_replay_path".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore that also tracks its high-water mark.
struct Slots {
    max: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(max: usize) -> Self {
        Slots {
            max,
            in_use: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.in_use.lock().expect("slot lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("slot lock");
        }
        *n += 1;
        self.peak.fetch_max(*n, Ordering::SeqCst);
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_use.lock().expect("slot lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub backend_calls: usize,
    pub replayed: usize,
    pub retries: usize,
    pub peak_in_flight: usize,
}

/// Shareable client over a [`Backend`].
pub struct Gateway {
    backend: Box<dyn Backend>,
    config: GatewayConfig,
    slots: Slots,
    transcript: Option<Transcript>,
    dims: Mutex<HashMap<String, usize>>,
    backend_calls: AtomicUsize,
    replayed: AtomicUsize,
    retries: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, config: GatewayConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let transcript = match (&config.record_replay_path, config.transcript_mode) {
            (Some(path), mode) if mode != TranscriptMode::Off => Some(Transcript::open(path, mode)?),
            _ => None,
        };
        Ok(Gateway {
            backend,
            slots: Slots::new(config.max_concurrent),
            config,
            transcript,
            dims: Mutex::new(HashMap::new()),
            backend_calls: AtomicUsize::new(0),
            replayed: AtomicUsize::new(0),
            retries: AtomicUsize::new(0),
        })
    }

    pub fn mock(spec: MockSpec) -> Self {
        Gateway::new(Box::new(MockBackend::new(spec)), GatewayConfig::default())
            .expect("default config is valid")
    }

    pub fn http(config: GatewayConfig) -> Result<Self, GatewayError> {
        let backend = HttpBackend::new(&config.base_url, Duration::from_secs_f64(config.timeout_secs));
        Gateway::new(Box::new(backend), config)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            replayed: self.replayed.load(Ordering::SeqCst),
            retries: self.retries.load(Ordering::SeqCst),
            peak_in_flight: self.slots.peak.load(Ordering::SeqCst),
        }
    }

    /// Writes the transcript, when recording.
    pub fn save_transcript(&self) -> Result<(), GatewayError> {
        match &self.transcript {
            Some(t) if t.mode() == TranscriptMode::Record => t.save(),
            _ => Ok(()),
        }
    }

    fn call<Req, Resp>(
        &self,
        endpoint: &str,
        req: &Req,
        invoke: impl Fn(&dyn Backend, &Req) -> Result<Resp, GatewayError>,
    ) -> Result<Resp, GatewayError>
    where
        Req: Serialize,
        Resp: Serialize + DeserializeOwned,
    {
        let key = self
            .transcript
            .as_ref()
            .map(|_| Transcript::key(endpoint, req));
        if let (Some(t), Some(key)) = (&self.transcript, &key) {
            if t.mode() == TranscriptMode::Replay {
                self.replayed.fetch_add(1, Ordering::SeqCst);
                return t.replay(endpoint, key);
            }
        }
        let resp = {
            let _slot = self.slots.acquire();
            let mut attempt = 0;
            loop {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                match invoke(self.backend.as_ref(), req) {
                    Ok(r) => break r,
                    Err(e) if e.retryable() && attempt < self.config.retries => {
                        attempt += 1;
                        self.retries.fetch_add(1, Ordering::SeqCst);
                        log::warn!("{endpoint} failed ({e}); retry {attempt}/{}", self.config.retries);
                        std::thread::sleep(Duration::from_millis(20 * attempt as u64));
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        if let (Some(t), Some(key)) = (&self.transcript, key) {
            t.record(endpoint, key, req, &resp)?;
        }
        Ok(resp)
    }

    fn check_dims(&self, model: &str, resp: &EmbedResponse) -> Result<(), GatewayError> {
        let mut dims = self.dims.lock().expect("dims lock");
        let expected = *dims.entry(model.to_string()).or_insert(resp.dim);
        for v in &resp.vectors {
            if v.len() != expected {
                return Err(GatewayError::DimensionDrift {
                    model: model.to_string(),
                    expected,
                    got: v.len(),
                });
            }
        }
        if resp.dim != expected {
            return Err(GatewayError::DimensionDrift {
                model: model.to_string(),
                expected,
                got: resp.dim,
            });
        }
        Ok(())
    }
}

impl TextGenerator for Gateway {
    fn generate(&self, prompt: &Prompt, temperature: f64, max_tokens: u32) -> Result<String, GatewayError> {
        if prompt.text().trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        let req = GenerateRequest {
            prompt: prompt.text().to_string(),
            temperature,
            max_tokens,
            slots: prompt
                .slots()
                .iter()
                .map(|(name, value)| PromptSlot {
                    name: name.clone(),
                    value: value.clone(),
                })
                .collect(),
        };
        let resp: GenerateResponse =
            self.call(GENERATE_PATH, &req, |b, r| b.generate(r, prompt))?;
        Ok(resp.text)
    }
}

impl Embedder for Gateway {
    fn embed(&self, texts: &[String], model_tag: &str) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let req = EmbedRequest {
            texts: texts.to_vec(),
            model: model_tag.to_string(),
        };
        let resp: EmbedResponse = self.call(EMBED_PATH, &req, |b, r| b.embed(r))?;
        if resp.vectors.len() != texts.len() {
            return Err(GatewayError::ProtocolError {
                status: 200,
                body: format!("expected {} vectors, got {}", texts.len(), resp.vectors.len()),
            });
        }
        self.check_dims(model_tag, &resp)?;
        Ok(resp.vectors)
    }
}

impl NliScorer for Gateway {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64, GatewayError> {
        if premise.trim().is_empty() || hypothesis.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty premise or hypothesis".into()));
        }
        let req = NliRequest {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
        };
        let resp: NliResponse = self.call(NLI_PATH, &req, |b, r| b.nli(r))?;
        if resp.score.is_nan() {
            return Err(GatewayError::ProtocolError {
                status: 200,
                body: "NLI score is NaN".into(),
            });
        }
        if !(0.0..=1.0).contains(&resp.score) {
            log::warn!("NLI score {} outside [0, 1]; clamping", resp.score);
        }
        Ok(resp.score.clamp(0.0, 1.0))
    }

    fn nli_batch(&self, premises: &[String], hypothesis: &str) -> Result<Vec<f64>, GatewayError> {
        use rayon::prelude::*;
        premises
            .par_iter()
            .map(|p| self.nli_score(p, hypothesis))
            .collect()
    }
}

/// Content hash used for transcript keys and caches.
pub fn content_hash(parts: &[&str]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0x1f]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    struct Flaky {
        failures_left: AtomicUsize,
        status: u16,
    }

    impl Backend for Flaky {
        fn generate(&self, req: &GenerateRequest, _: &Prompt) -> Result<GenerateResponse, GatewayError> {
            if self
                .failures_left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok()
            {
                return Err(GatewayError::ProtocolError {
                    status: self.status,
                    body: "boom".into(),
                });
            }
            Ok(GenerateResponse {
                text: format!("ok:{}", req.prompt),
            })
        }
        fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
            let dim = if req.texts[0] == "drift" { 3 } else { 2 };
            Ok(EmbedResponse {
                vectors: req.texts.iter().map(|_| vec![0.5; dim]).collect(),
                dim,
            })
        }
        fn nli(&self, req: &NliRequest) -> Result<NliResponse, GatewayError> {
            Ok(NliResponse {
                score: req.premise.parse().unwrap_or(0.0),
            })
        }
    }

    fn flaky(failures: usize, status: u16, retries: u32) -> Gateway {
        Gateway::new(
            Box::new(Flaky {
                failures_left: AtomicUsize::new(failures),
                status,
            }),
            GatewayConfig {
                retries,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn retries_server_errors() {
        let g = flaky(2, 503, 3);
        assert_eq!(g.generate(&Prompt::raw("p"), 0.0, 8).unwrap(), "ok:p");
        assert_eq!(g.stats().retries, 2);

        let g = flaky(5, 503, 3);
        assert!(g.generate(&Prompt::raw("p"), 0.0, 8).is_err());
        assert_eq!(g.stats().backend_calls, 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let g = flaky(1, 400, 3);
        assert!(matches!(
            g.generate(&Prompt::raw("p"), 0.0, 8),
            Err(GatewayError::ProtocolError { status: 400, .. })
        ));
        assert_eq!(g.stats().backend_calls, 1);
    }

    #[test]
    fn nli_scores_are_clamped() {
        let g = flaky(0, 500, 0);
        assert_eq!(g.nli_score("1.3", "h").unwrap(), 1.0);
        assert_eq!(g.nli_score("-0.2", "h").unwrap(), 0.0);
        assert_eq!(g.nli_score("0.25", "h").unwrap(), 0.25);
        assert!(g.nli_score("", "h").is_err());
    }

    #[test]
    fn embedding_dimension_drift() {
        let g = flaky(0, 500, 0);
        assert_eq!(g.embed(&["a".into(), "b".into()], "m").unwrap().len(), 2);
        assert!(matches!(
            g.embed(&["drift".into()], "m"),
            Err(GatewayError::DimensionDrift { expected: 2, got: 3, .. })
        ));
        assert!(g.embed(&["drift".into()], "other").is_ok());
        assert!(g.embed(&[], "m").is_err());
    }

    struct Slow {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Slow {
        fn generate(&self, _: &GenerateRequest, _: &Prompt) -> Result<GenerateResponse, GatewayError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(GenerateResponse { text: "x".into() })
        }
        fn embed(&self, _: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
            unreachable!()
        }
        fn nli(&self, _: &NliRequest) -> Result<NliResponse, GatewayError> {
            unreachable!()
        }
    }

    struct Shared(Arc<Slow>);

    impl Backend for Shared {
        fn generate(&self, r: &GenerateRequest, p: &Prompt) -> Result<GenerateResponse, GatewayError> {
            self.0.generate(r, p)
        }
        fn embed(&self, r: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
            self.0.embed(r)
        }
        fn nli(&self, r: &NliRequest) -> Result<NliResponse, GatewayError> {
            self.0.nli(r)
        }
    }

    #[test]
    fn concurrency_is_bounded() {
        let slow = Arc::new(Slow {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let g = Gateway::new(
            Box::new(Shared(slow.clone())),
            GatewayConfig {
                max_concurrent: 3,
                ..Default::default()
            },
        )
        .unwrap();
        std::thread::scope(|s| {
            for i in 0..16 {
                let g = &g;
                s.spawn(move || g.generate(&Prompt::raw(format!("p{i}")), 0.0, 4).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 3);
        assert!(g.stats().peak_in_flight <= 3);
        assert!(g.stats().peak_in_flight >= 2);
    }

    #[test]
    fn config_validation() {
        let bad = GatewayConfig {
            max_concurrent: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let no_path = GatewayConfig {
            transcript_mode: TranscriptMode::Replay,
            ..Default::default()
        };
        assert!(no_path.validate().is_err());
    }
}
