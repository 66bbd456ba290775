use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::*;
use super::{Backend, GatewayError};
use crate::prompts::Prompt;

/// Client for a model sidecar speaking the JSON protocol over HTTP.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        HttpBackend {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            base_url: base_url.trim_end_matches('/').to_string(),
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, GatewayError> {
        let url = format!("{}{path}", self.base_url);
        match self.agent.post(&url).send_json(req) {
            Ok(resp) => resp.into_json().map_err(|e| GatewayError::ProtocolError {
                status: 200,
                body: format!("undecodable response from {path}: {e}"),
            }),
            Err(ureq::Error::Status(status, resp)) => {
                let raw = resp.into_string().unwrap_or_default();
                let body = match serde_json::from_str::<ErrorBody>(&raw) {
                    Ok(e) if e.detail.is_empty() => e.error,
                    Ok(e) => format!("{}: {}", e.error, e.detail),
                    Err(_) => raw,
                };
                Err(GatewayError::ProtocolError { status, body })
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = std::error::Error::source(&t)
                    .and_then(|s| s.downcast_ref::<std::io::Error>())
                    .is_some_and(|io| {
                        matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock)
                    });
                if timed_out {
                    Err(GatewayError::Timeout(format!("{url}: {t}")))
                } else {
                    Err(GatewayError::Transport(format!("{url}: {t}")))
                }
            }
        }
    }
}

impl Backend for HttpBackend {
    fn generate(&self, req: &GenerateRequest, _: &Prompt) -> Result<GenerateResponse, GatewayError> {
        self.post(GENERATE_PATH, req)
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, GatewayError> {
        self.post(EMBED_PATH, req)
    }

    fn nli(&self, req: &NliRequest) -> Result<NliResponse, GatewayError> {
        self.post(NLI_PATH, req)
    }
}
