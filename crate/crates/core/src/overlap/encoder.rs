//! Sentence-encoder access and the encoder wire protocol.
//!
//! Requests are JSON objects `{"texts": [...]}`; responses are
//! `{"dim": k, "vectors": [[...], ...]}` with one vector per text, or
//! `{"error": "..."}`. Over HTTP the request is `POST /embed` and the
//! encoder's limits are served at `GET /info` as `{"dim": k, "max_length": l}`.
//! Over a byte stream each request and response is one line, and the line
//! `{"op": "info"}` plays the role of `GET /info`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

pub const MOCK_DIM: usize = 256;
/// Truncation limit advertised by the mock encoder, in characters.
pub const MOCK_MAX_LENGTH: usize = 8192;
/// Largest batch the built-in servers accept.
pub const MAX_BATCH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub values: Vec<f64>,
    /// Set when the text had no pieces and the vector is all zeros.
    pub empty: bool,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Hashed bag-of-pieces embedding used in place of a real encoder.
pub fn mock_embed(text: &str) -> Embedding {
    let mut values = vec![0.0; MOCK_DIM];
    let lower = text.to_lowercase();
    let mut any = false;
    for piece in lower.split_whitespace() {
        values[(fnv1a64(piece.as_bytes()) % MOCK_DIM as u64) as usize] += 1.0;
        any = true;
    }
    if any {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Embedding { values, empty: !any }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderInfo {
    pub dim: usize,
    pub max_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub trait Encoder: Send + Sync {
    fn info(&self) -> Result<EncoderInfo>;
    /// One vector per text, in order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    pub max_length: usize,
}

impl Default for MockEncoder {
    fn default() -> Self {
        Self {
            max_length: MOCK_MAX_LENGTH,
        }
    }
}

impl Encoder for MockEncoder {
    fn info(&self) -> Result<EncoderInfo> {
        Ok(EncoderInfo {
            dim: MOCK_DIM,
            max_length: self.max_length,
        })
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| mock_embed(t).values).collect())
    }
}

/// Checks a response against the request and the session dimension.
fn accept_response(value: serde_json::Value, n_texts: usize, session_dim: &OnceLock<usize>) -> Result<Vec<Vec<f64>>> {
    if let Some(msg) = value.get("error") {
        let msg = msg.as_str().map(str::to_string).unwrap_or_else(|| msg.to_string());
        return Err(Error::EncoderTransport(msg));
    }
    let resp: EmbedResponse =
        serde_json::from_value(value).map_err(|e| Error::EncoderTransport(format!("malformed response: {e}")))?;
    if resp.vectors.len() != n_texts {
        return Err(Error::EncoderTransport(format!(
            "{} vectors returned for {n_texts} texts",
            resp.vectors.len()
        )));
    }
    if resp.dim == 0 {
        return Err(Error::EncoderTransport("dim must be positive".into()));
    }
    let dim = *session_dim.get_or_init(|| resp.dim);
    if resp.dim != dim {
        return Err(Error::EncoderTransport(format!("dim changed from {dim} to {} within a session", resp.dim)));
    }
    for v in &resp.vectors {
        if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::EncoderTransport(format!("vector of length {} or non-finite value for dim {dim}", v.len())));
        }
    }
    Ok(resp.vectors)
}

fn parse_info(value: serde_json::Value) -> Result<EncoderInfo> {
    if let Some(msg) = value.get("error") {
        return Err(Error::EncoderTransport(msg.to_string()));
    }
    let info: EncoderInfo =
        serde_json::from_value(value).map_err(|e| Error::EncoderTransport(format!("malformed info: {e}")))?;
    if info.dim == 0 || info.max_length == 0 {
        return Err(Error::EncoderTransport("info must report positive dim and max_length".into()));
    }
    Ok(info)
}

/// Client for an encoder served over HTTP.
pub struct HttpEncoder {
    base: String,
    agent: ureq::Agent,
    dim: OnceLock<usize>,
}

impl HttpEncoder {
    pub fn new(base_url: &str) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(std::time::Duration::from_secs(300)))
            .build();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_config(config),
            dim: OnceLock::new(),
        }
    }

    fn transport(e: ureq::Error) -> Error {
        Error::EncoderTransport(e.to_string())
    }
}

impl Encoder for HttpEncoder {
    fn info(&self) -> Result<EncoderInfo> {
        let mut resp = self
            .agent
            .get(format!("{}/info", self.base))
            .call()
            .map_err(Self::transport)?;
        let value: serde_json::Value = resp.body_mut().read_json().map_err(Self::transport)?;
        parse_info(value)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let mut resp = self
            .agent
            .post(format!("{}/embed", self.base))
            .send_json(EmbedRequest { texts: texts.to_vec() })
            .map_err(Self::transport)?;
        let value: serde_json::Value = resp.body_mut().read_json().map_err(Self::transport)?;
        accept_response(value, texts.len(), &self.dim)
    }
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Client for an encoder subprocess speaking the line protocol on stdio.
/// Requests are serialized through one pipe.
pub struct ExecEncoder {
    command: String,
    pipe: Mutex<Pipe>,
    dim: OnceLock<usize>,
}

impl ExecEncoder {
    pub fn spawn(command: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::EncoderTransport(format!("cannot start '{command}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            command: command.to_string(),
            pipe: Mutex::new(Pipe { child, stdin, stdout }),
            dim: OnceLock::new(),
        })
    }

    fn round_trip(&self, line: &str) -> Result<serde_json::Value> {
        let mut pipe = self.pipe.lock().unwrap_or_else(|p| p.into_inner());
        let io = |e: std::io::Error| Error::EncoderTransport(format!("'{}': {e}", self.command));
        pipe.stdin.write_all(line.as_bytes()).map_err(io)?;
        pipe.stdin.write_all(b"\n").map_err(io)?;
        pipe.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if pipe.stdout.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::EncoderTransport(format!("'{}' closed its output", self.command)));
        }
        serde_json::from_str(&reply).map_err(|e| Error::EncoderTransport(format!("malformed reply: {e}")))
    }
}

impl Drop for ExecEncoder {
    fn drop(&mut self) {
        let pipe = self.pipe.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = pipe.child.kill();
        let _ = pipe.child.wait();
    }
}

impl Encoder for ExecEncoder {
    fn info(&self) -> Result<EncoderInfo> {
        parse_info(self.round_trip(r#"{"op":"info"}"#)?)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let line = serde_json::to_string(&EmbedRequest { texts: texts.to_vec() })?;
        accept_response(self.round_trip(&line)?, texts.len(), &self.dim)
    }
}

/// Opens an encoder from its locator: `mock`, an `http://` or `https://`
/// base URL, or `exec:<shell command>`.
pub fn connect(endpoint: &str) -> Result<Arc<dyn Encoder>> {
    let endpoint = endpoint.trim();
    if endpoint == "mock" {
        Ok(Arc::new(MockEncoder::default()))
    } else if endpoint.starts_with("http://") || endpoint.starts_with("https://") {
        Ok(Arc::new(HttpEncoder::new(endpoint)))
    } else if let Some(cmd) = endpoint.strip_prefix("exec:") {
        Ok(Arc::new(ExecEncoder::spawn(cmd)?))
    } else {
        Err(Error::Invalid(format!(
            "unknown encoder endpoint '{endpoint}' (expected mock, http(s)://..., or exec:<command>)"
        )))
    }
}

fn error_json(msg: impl Into<String>) -> String {
    serde_json::to_string(&ErrorResponse { error: msg.into() }).expect("serializable")
}

fn embed_json(encoder: &dyn Encoder, texts: Vec<String>) -> String {
    if texts.len() > MAX_BATCH {
        return error_json("batch too large");
    }
    let dim = match encoder.info() {
        Ok(i) => i.dim,
        Err(e) => return error_json(e.to_string()),
    };
    match encoder.embed(&texts) {
        Ok(vectors) => serde_json::to_string(&EmbedResponse { dim, vectors }).expect("serializable"),
        Err(e) => error_json(e.to_string()),
    }
}

fn info_json(encoder: &dyn Encoder) -> String {
    match encoder.info() {
        Ok(i) => serde_json::to_string(&i).expect("serializable"),
        Err(e) => error_json(e.to_string()),
    }
}

/// Answers one line-protocol request. Never fails; problems become
/// `{"error": ...}` replies.
pub fn handle_line(encoder: &dyn Encoder, line: &str) -> String {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_json(format!("malformed request: {e}")),
    };
    if value.get("op").and_then(|v| v.as_str()) == Some("info") {
        return info_json(encoder);
    }
    match serde_json::from_value::<EmbedRequest>(value) {
        Ok(req) => embed_json(encoder, req.texts),
        Err(e) => error_json(format!("malformed request: {e}")),
    }
}

/// Serves the line protocol until `input` reaches end of file.
pub fn serve_lines(encoder: &dyn Encoder, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", handle_line(encoder, &line))?;
        output.flush()?;
    }
    Ok(())
}

/// A running HTTP encoder server.
pub struct HttpServer {
    server: Arc<tiny_http::Server>,
    addr: std::net::SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.server.unblock();
            let _ = t.join();
        }
    }
}

/// Serves `POST /embed` and `GET /info` on `addr` (e.g. `127.0.0.1:0`).
pub fn serve_http(encoder: Arc<dyn Encoder>, addr: &str) -> Result<HttpServer> {
    let server = tiny_http::Server::http(addr).map_err(|e| Error::EncoderTransport(format!("cannot bind {addr}: {e}")))?;
    let server = Arc::new(server);
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::EncoderTransport("server is not bound to an IP address".into()))?;
    let worker = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        let json = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        for mut request in worker.incoming_requests() {
            let (status, body) = match (request.method(), request.url()) {
                (tiny_http::Method::Get, "/info") => (200, info_json(encoder.as_ref())),
                (tiny_http::Method::Post, "/embed") => {
                    let mut text = String::new();
                    match request.as_reader().read_to_string(&mut text) {
                        Ok(_) => match serde_json::from_str::<EmbedRequest>(&text) {
                            Ok(req) => {
                                let body = embed_json(encoder.as_ref(), req.texts);
                                let status = if body.starts_with("{\"error\"") { 400 } else { 200 };
                                (status, body)
                            }
                            Err(e) => (400, error_json(format!("malformed request: {e}"))),
                        },
                        Err(e) => (400, error_json(e.to_string())),
                    }
                }
                _ => (404, error_json("not found")),
            };
            let response = tiny_http::Response::from_string(body)
                .with_status_code(status)
                .with_header(json.clone());
            let _ = request.respond(response);
        }
    });
    Ok(HttpServer {
        server,
        addr: bound,
        thread: Some(thread),
    })
}
