//! An HTTP server speaking the gateway wire protocol, answered by a
//! [`MockBackend`]. Used for contract tests and offline end-to-end runs.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use enrichkit::gateway::wire::*;
use enrichkit::gateway::{Backend, GatewayError, MockBackend, MockSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

#[derive(Clone, Debug, Default)]
pub struct ServeOptions {
    /// Handler threads.
    pub workers: usize,
    /// Added to every model request, to make concurrency observable.
    pub delay: Duration,
    /// The first this many model requests answer 503.
    pub fail_first: usize,
}

#[derive(Debug, Default)]
pub struct ServerCounters {
    pub requests: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub peak_in_flight: AtomicUsize,
    pub injected_failures: AtomicUsize,
}

pub struct MockServer {
    server: Arc<Server>,
    stopping: Arc<AtomicBool>,
    addr: SocketAddr,
    counters: Arc<ServerCounters>,
    threads: Vec<JoinHandle<()>>,
}

struct Handler {
    backend: MockBackend,
    spec: MockSpec,
    options: ServeOptions,
    counters: Arc<ServerCounters>,
}

struct Reply {
    status: u16,
    body: String,
}

fn error_reply(status: u16, error: &str, detail: impl Into<String>) -> Reply {
    Reply {
        status,
        body: serde_json::to_string(&ErrorBody {
            error: error.into(),
            detail: detail.into(),
        })
        .expect("serializable"),
    }
}

fn ok<T: Serialize>(v: &T) -> Reply {
    Reply {
        status: 200,
        body: serde_json::to_string(v).expect("serializable"),
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| error_reply(400, "bad_request", e.to_string()))
}

fn from_gateway(e: GatewayError) -> Reply {
    match e {
        GatewayError::ProtocolError { status, body } => error_reply(status, "mock_error", body),
        other => error_reply(500, "mock_error", other.to_string()),
    }
}

impl Handler {
    fn health(&self) -> Reply {
        ok(&json!({
            "status": "ok",
            "roles": {
                "generate": self.spec.generate,
                "embed": self.spec.embed,
                "nli": self.spec.nli,
            },
            "nli_score": "entailment_probability",
        }))
    }

    fn model_call(&self, path: &str, body: &str) -> Reply {
        let n = self.counters.requests.fetch_add(1, Ordering::SeqCst);
        if n < self.options.fail_first {
            self.counters.injected_failures.fetch_add(1, Ordering::SeqCst);
            return error_reply(503, "unavailable", "injected failure");
        }
        let now = self.counters.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.counters.peak_in_flight.fetch_max(now, Ordering::SeqCst);
        if !self.options.delay.is_zero() {
            std::thread::sleep(self.options.delay);
        }
        let reply = self.dispatch(path, body);
        self.counters.in_flight.fetch_sub(1, Ordering::SeqCst);
        reply
    }

    fn dispatch(&self, path: &str, body: &str) -> Reply {
        let result = match path {
            GENERATE_PATH => parse::<GenerateRequest>(body).and_then(|req| {
                if req.prompt.trim().is_empty() {
                    return Err(error_reply(400, "bad_request", "empty prompt"));
                }
                self.backend.generate(&req, &req.to_prompt()).map(|r| ok(&r)).map_err(from_gateway)
            }),
            EMBED_PATH => parse::<EmbedRequest>(body).and_then(|req| {
                if req.texts.is_empty() {
                    return Err(error_reply(400, "bad_request", "no texts"));
                }
                self.backend.embed(&req).map(|r| ok(&r)).map_err(from_gateway)
            }),
            NLI_PATH => parse::<NliRequest>(body).and_then(|req| {
                if req.premise.trim().is_empty() || req.hypothesis.trim().is_empty() {
                    return Err(error_reply(400, "bad_request", "empty premise or hypothesis"));
                }
                self.backend.nli(&req).map(|r| ok(&r)).map_err(from_gateway)
            }),
            _ => Err(error_reply(404, "not_found", path)),
        };
        result.unwrap_or_else(|e| e)
    }

    fn handle(&self, mut request: Request) {
        let path = request.url().split('?').next().unwrap_or("").to_string();
        let reply = match (request.method(), path.as_str()) {
            (Method::Get, HEALTH_PATH) => self.health(),
            (Method::Post, GENERATE_PATH | EMBED_PATH | NLI_PATH) => {
                let mut body = String::new();
                match request.as_reader().read_to_string(&mut body) {
                    Ok(_) => self.model_call(&path, &body),
                    Err(e) => error_reply(400, "bad_request", e.to_string()),
                }
            }
            (_, GENERATE_PATH | EMBED_PATH | NLI_PATH | HEALTH_PATH) => {
                error_reply(405, "method_not_allowed", request.method().to_string())
            }
            _ => error_reply(404, "not_found", path.clone()),
        };
        let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
        let response = Response::from_string(reply.body)
            .with_status_code(reply.status)
            .with_header(header);
        if let Err(e) = request.respond(response) {
            log::warn!("failed to send response: {e}");
        }
    }
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts handler threads.
    pub fn start(spec: MockSpec, addr: &str, options: ServeOptions) -> std::io::Result<Self> {
        let server = Server::http(addr).map_err(std::io::Error::other)?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let counters = Arc::new(ServerCounters::default());
        let handler = Arc::new(Handler {
            backend: MockBackend::new(spec.clone()),
            spec,
            options: options.clone(),
            counters: counters.clone(),
        });
        let stopping = Arc::new(AtomicBool::new(false));
        let threads = (0..options.workers.max(1))
            .map(|_| {
                let server = server.clone();
                let handler = handler.clone();
                let stopping = stopping.clone();
                std::thread::spawn(move || loop {
                    match server.recv() {
                        Ok(request) => handler.handle(request),
                        Err(_) if stopping.load(Ordering::SeqCst) => break,
                        Err(e) => log::warn!("accept failed: {e}"),
                    }
                })
            })
            .collect();
        Ok(MockServer {
            server,
            stopping,
            addr: bound,
            counters,
            threads,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn counters(&self) -> &ServerCounters {
        &self.counters
    }

    /// Blocks until the handler threads exit.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stopping.store(true, Ordering::SeqCst);
        for _ in &self.threads {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}
