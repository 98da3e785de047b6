//! Completion backends behind one uniform interface.
//!
//! Three implementations: an OpenAI-compatible HTTP client (chat or raw
//! completions endpoint), a deterministic record/replay store keyed by a
//! content hash of the request, and a scripted mock for tests. All backends
//! are safe for concurrent `complete` calls.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompt::{ChatMessage, Role};

/// Sampling parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.3,
            top_p: 0.2,
            max_tokens: 128,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature < 0.0 {
            return Err(BackendError::InvalidParams("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidParams("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidParams("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Either structured chat messages or pre-templated text for raw-completion
/// endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptInput {
    Chat(Vec<ChatMessage>),
    Raw(String),
}

impl PromptInput {
    pub fn is_empty(&self) -> bool {
        match self {
            PromptInput::Chat(messages) => messages.is_empty(),
            PromptInput::Raw(text) => text.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub input: PromptInput,
    pub params: GenerationParams,
    pub model_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_units: u64,
    pub completion_units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {message}")]
    Http {
        status: u16,
        attempts: u32,
        message: String,
    },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("replay store has no fixture for request {key}")]
    FixtureMissing { key: String },
    #[error("replay store I/O failure: {0}")]
    Storage(String),
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("mock backend script exhausted after {0} completions")]
    ScriptExhausted(usize),
}

impl BackendError {
    /// Retryable at the transport level; protocol and fixture errors are
    /// final.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Uniform completion interface.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError>;

    /// Human-readable identity for logs and error messages.
    fn describe(&self) -> String;
}

pub type BackendHandle = Arc<dyn Backend>;

/// Stable content hash of a request: sha-256 over its canonical JSON.
/// Struct fields serialize in declaration order and argument maps are
/// ordered, so the hash is independent of construction order.
pub fn request_hash(req: &CompletionRequest) -> String {
    let canonical = serde_json::to_vec(req).expect("request serializes");
    let digest = Sha256::digest(&canonical);
    hex::encode(digest)
}

/// Truncate at the first occurrence of any stop sequence. Servers that
/// honor `stop` never trip this; it is the client-side safety net.
pub fn apply_stop_sequences(text: &str, stop_sequences: &[String]) -> String {
    let mut cut = text.len();
    for stop in stop_sequences {
        if stop.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(stop.as_str()) {
            cut = cut.min(pos);
        }
    }
    text[..cut].to_string()
}

// ---------------------------------------------------------------------------
// Scripted mock

enum MockStep {
    Text(String),
    Fail(String),
}

/// Test backend that replays a scripted sequence of completions, with an
/// optional fallback handler for requests past the end of the script.
pub struct MockBackend {
    script: Mutex<std::collections::VecDeque<MockStep>>,
    fallback: Option<Box<dyn Fn(&CompletionRequest) -> String + Send + Sync>>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockBackend {
            script: Mutex::new(
                responses
                    .into_iter()
                    .map(|s| MockStep::Text(s.into()))
                    .collect(),
            ),
            fallback: None,
            calls: AtomicUsize::new(0),
        }
    }

    /// A mock whose every response is computed from the request.
    pub fn with_handler<F>(handler: F) -> Self
    where
        F: Fn(&CompletionRequest) -> String + Send + Sync + 'static,
    {
        MockBackend {
            script: Mutex::new(std::collections::VecDeque::new()),
            fallback: Some(Box::new(handler)),
            calls: AtomicUsize::new(0),
        }
    }

    /// Queue a scripted failure (a transport error) at this position.
    pub fn push_failure(&self, message: impl Into<String>) {
        self.script
            .lock()
            .expect("mock script lock")
            .push_back(MockStep::Fail(message.into()));
    }

    pub fn push_response(&self, text: impl Into<String>) {
        self.script
            .lock()
            .expect("mock script lock")
            .push_back(MockStep::Text(text.into()));
    }

    /// Number of completions issued so far.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let step = self.script.lock().expect("mock script lock").pop_front();
        match step {
            Some(MockStep::Text(text)) => Ok(CompletionResult {
                text,
                finish_reason: FinishReason::Stop,
                usage: None,
            }),
            Some(MockStep::Fail(message)) => Err(BackendError::Transport {
                attempts: 1,
                message,
            }),
            None => match &self.fallback {
                Some(handler) => Ok(CompletionResult {
                    text: handler(req),
                    finish_reason: FinishReason::Stop,
                    usage: None,
                }),
                None => Err(BackendError::ScriptExhausted(n)),
            },
        }
    }

    fn describe(&self) -> String {
        "mock".to_string()
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP client

/// Which server route receives the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    /// `/chat/completions` with a `messages` array.
    Chat,
    /// `/completions` with a single pre-templated `prompt`.
    Completions,
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub endpoint: EndpointKind,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "http://localhost:8000/v1".to_string(),
            endpoint: EndpointKind::Chat,
            api_key: None,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    backoff_base: Duration,
}

#[derive(Debug, Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    #[serde(default)]
    message: Option<WireMessage>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(HttpBackend {
            config,
            client,
            backoff_base: Duration::from_millis(500),
        })
    }

    #[cfg(test)]
    fn with_fast_backoff(mut self) -> Self {
        self.backoff_base = Duration::from_millis(1);
        self
    }

    fn url(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.endpoint {
            EndpointKind::Chat => format!("{base}/chat/completions"),
            EndpointKind::Completions => format!("{base}/completions"),
        }
    }

    fn payload(&self, req: &CompletionRequest) -> Result<serde_json::Value, BackendError> {
        let mut body = serde_json::json!({
            "model": req.model_id,
            "temperature": req.params.temperature,
            "top_p": req.params.top_p,
            "max_tokens": req.params.max_tokens,
        });
        if !req.params.stop_sequences.is_empty() {
            body["stop"] = serde_json::json!(req.params.stop_sequences);
        }
        match (&self.config.endpoint, &req.input) {
            (EndpointKind::Chat, PromptInput::Chat(messages)) => {
                let wire: Vec<serde_json::Value> = messages
                    .iter()
                    .map(|m| {
                        serde_json::json!({
                            "role": match m.role {
                                Role::System => "system",
                                Role::User => "user",
                                Role::Assistant => "assistant",
                            },
                            "content": m.content,
                        })
                    })
                    .collect();
                body["messages"] = serde_json::Value::Array(wire);
            }
            (EndpointKind::Completions, PromptInput::Raw(text)) => {
                body["prompt"] = serde_json::Value::String(text.clone());
            }
            (EndpointKind::Chat, PromptInput::Raw(_)) => {
                return Err(BackendError::Protocol(
                    "chat endpoint requires chat messages, got raw text".into(),
                ));
            }
            (EndpointKind::Completions, PromptInput::Chat(_)) => {
                return Err(BackendError::Protocol(
                    "completions endpoint requires pre-templated text, got chat messages".into(),
                ));
            }
        }
        Ok(body)
    }

    fn attempt(&self, payload: &serde_json::Value) -> Result<CompletionResult, (bool, String, Option<u16>)> {
        let mut request = self.client.post(self.url()).json(payload);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| (true, e.to_string(), None))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| (true, e.to_string(), None))?;
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            return Err((retryable, body, Some(status.as_u16())));
        }
        let parsed: ChatCompletionResponse = serde_json::from_str(&body)
            .map_err(|e| (false, format!("unexpected payload: {e}"), None))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or((false, "response has no choices".to_string(), None))?;
        let text = choice
            .message
            .and_then(|m| m.content)
            .or(choice.text)
            .ok_or((false, "choice has no content".to_string(), None))?;
        let finish_reason = match choice.finish_reason.as_deref() {
            Some("length") => FinishReason::Length,
            _ => FinishReason::Stop,
        };
        Ok(CompletionResult {
            text,
            finish_reason,
            usage: parsed.usage.map(|u| Usage {
                prompt_units: u.prompt_tokens,
                completion_units: u.completion_tokens,
            }),
        })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        req.params.validate()?;
        if req.input.is_empty() {
            return Err(BackendError::Protocol("empty prompt input".into()));
        }
        let payload = self.payload(req)?;

        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&payload) {
                Ok(mut result) => {
                    result.text = apply_stop_sequences(&result.text, &req.params.stop_sequences);
                    return Ok(result);
                }
                Err((retryable, message, status)) => {
                    if retryable && attempts < self.config.max_attempts {
                        std::thread::sleep(self.backoff_base * 2u32.pow(attempts - 1));
                        continue;
                    }
                    return Err(match status {
                        Some(code) => BackendError::Http {
                            status: code,
                            attempts,
                            message,
                        },
                        None if retryable => BackendError::Transport { attempts, message },
                        None => BackendError::Protocol(message),
                    });
                }
            }
        }
    }

    fn describe(&self) -> String {
        format!("http {} ({:?})", self.config.base_url, self.config.endpoint)
    }
}

// ---------------------------------------------------------------------------
// Record / replay

#[derive(Debug, Serialize, Deserialize)]
struct ReplayRecord {
    key: String,
    request: CompletionRequest,
    result: CompletionResult,
    timestamp: String,
}

/// In-memory view of a JSON-lines replay store.
pub struct ReplayBackend {
    entries: HashMap<String, CompletionResult>,
    path: PathBuf,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Storage(format!("{}: {e}", path.display())))?;
        let mut entries = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ReplayRecord = serde_json::from_str(line).map_err(|e| {
                BackendError::Storage(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            entries.insert(record.key, record.result);
        }
        Ok(ReplayBackend {
            entries,
            path: path.to_path_buf(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let key = request_hash(req);
        self.entries
            .get(&key)
            .cloned()
            .ok_or(BackendError::FixtureMissing { key })
    }

    fn describe(&self) -> String {
        format!("replay {} ({} fixtures)", self.path.display(), self.entries.len())
    }
}

/// Wrap a backend so every completed (request, result) pair is appended to
/// the store for later replay.
pub struct RecordBackend {
    inner: BackendHandle,
    sink: Mutex<std::fs::File>,
    path: PathBuf,
}

impl RecordBackend {
    pub fn new(inner: BackendHandle, store_path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(store_path)
            .map_err(|e| BackendError::Storage(format!("{}: {e}", store_path.display())))?;
        Ok(RecordBackend {
            inner,
            sink: Mutex::new(file),
            path: store_path.to_path_buf(),
        })
    }
}

impl Backend for RecordBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let result = self.inner.complete(req)?;
        let record = ReplayRecord {
            key: request_hash(req),
            request: req.clone(),
            result: result.clone(),
            timestamp: unix_timestamp(),
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| BackendError::Storage(e.to_string()))?;
        let mut sink = self.sink.lock().expect("record sink lock");
        writeln!(sink, "{line}").map_err(|e| BackendError::Storage(e.to_string()))?;
        sink.flush().map_err(|e| BackendError::Storage(e.to_string()))?;
        Ok(result)
    }

    fn describe(&self) -> String {
        format!("record -> {} over {}", self.path.display(), self.inner.describe())
    }
}

fn unix_timestamp() -> String {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs().to_string())
        .unwrap_or_else(|_| "0".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write as IoWrite};
    use std::net::TcpListener;

    fn chat_request(text: &str) -> CompletionRequest {
        CompletionRequest {
            input: PromptInput::Chat(vec![ChatMessage::user(text)]),
            params: GenerationParams::default(),
            model_id: "test-model".to_string(),
        }
    }

    #[test]
    fn mock_returns_scripted_text_verbatim() {
        let mock = MockBackend::from_responses(["<domain> hotel </domain>"]);
        let result = mock.complete(&chat_request("hi")).unwrap();
        assert_eq!(result.text, "<domain> hotel </domain>");
        assert_eq!(result.finish_reason, FinishReason::Stop);
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("store.jsonl");
        let mock: BackendHandle = Arc::new(MockBackend::from_responses(["alpha", "beta"]));
        let recorder = RecordBackend::new(mock, &store).unwrap();
        let req_a = chat_request("a");
        let req_b = chat_request("b");
        let a = recorder.complete(&req_a).unwrap();
        let b = recorder.complete(&req_b).unwrap();

        let replay = ReplayBackend::load(&store).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&req_a).unwrap(), a);
        assert_eq!(replay.complete(&req_b).unwrap(), b);
    }

    #[test]
    fn replay_miss_names_the_request_hash() {
        let dir = tempfile::tempdir().unwrap();
        let store = dir.path().join("store.jsonl");
        std::fs::write(&store, "").unwrap();
        let replay = ReplayBackend::load(&store).unwrap();
        let req = chat_request("nothing recorded");
        match replay.complete(&req) {
            Err(BackendError::FixtureMissing { key }) => {
                assert_eq!(key, request_hash(&req));
            }
            other => panic!("expected fixture miss, got {other:?}"),
        }
    }

    #[test]
    fn hash_covers_params_and_is_stable() {
        let a = chat_request("same");
        let mut b = chat_request("same");
        assert_eq!(request_hash(&a), request_hash(&b));
        b.params.temperature = 0.9;
        assert_ne!(request_hash(&a), request_hash(&b));
    }

    #[test]
    fn stop_sequences_truncate_at_first_occurrence() {
        let stops = vec!["</domain>".to_string()];
        assert_eq!(
            apply_stop_sequences("<domain> hotel </domain> trailing", &stops),
            "<domain> hotel "
        );
        assert_eq!(apply_stop_sequences("no stops", &stops), "no stops");
    }

    #[test]
    fn param_validation_rejects_bad_values() {
        let mut params = GenerationParams::default();
        params.top_p = 0.0;
        assert!(params.validate().is_err());
        params.top_p = 0.5;
        params.max_tokens = 0;
        assert!(params.validate().is_err());
    }

    /// One-shot HTTP server returning a canned response body.
    fn serve_once(status_line: &'static str, body: &'static str) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            if let Ok((mut stream, _)) = listener.accept() {
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(rest) = line.to_lowercase().strip_prefix("content-length:") {
                        content_length = rest.trim().parse().unwrap_or(0);
                    }
                }
                let mut payload = vec![0u8; content_length];
                let _ = reader.read_exact(&mut payload);
                let response = format!(
                    "HTTP/1.1 {status_line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(response.as_bytes());
            }
        });
        format!("http://{addr}/v1")
    }

    #[test]
    fn http_backend_parses_chat_completion_payload() {
        let base = serve_once(
            "200 OK",
            r#"{"choices":[{"message":{"content":"<domain> hotel </domain>"},"finish_reason":"stop"}],"usage":{"prompt_tokens":10,"completion_tokens":4}}"#,
        );
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: base,
            ..HttpBackendConfig::default()
        })
        .unwrap();
        let result = backend.complete(&chat_request("hello")).unwrap();
        assert_eq!(result.text, "<domain> hotel </domain>");
        assert_eq!(result.usage.unwrap().prompt_units, 10);
    }

    #[test]
    fn http_backend_does_not_retry_client_errors() {
        let base = serve_once("400 Bad Request", r#"{"error":"bad"}"#);
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: base,
            ..HttpBackendConfig::default()
        })
        .unwrap()
        .with_fast_backoff();
        match backend.complete(&chat_request("hello")) {
            Err(BackendError::Http { status, attempts, .. }) => {
                assert_eq!(status, 400);
                assert_eq!(attempts, 1);
            }
            other => panic!("expected http error, got {other:?}"),
        }
    }

    #[test]
    fn http_backend_counts_transport_retries() {
        // Nothing listens on this port; connection is refused immediately.
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: "http://127.0.0.1:1/v1".to_string(),
            max_attempts: 3,
            timeout: Duration::from_millis(500),
            ..HttpBackendConfig::default()
        })
        .unwrap()
        .with_fast_backoff();
        match backend.complete(&chat_request("hello")) {
            Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_payload_is_a_protocol_error() {
        let base = serve_once("200 OK", r#"{"not": "a completion"}"#);
        let backend = HttpBackend::new(HttpBackendConfig {
            base_url: base,
            ..HttpBackendConfig::default()
        })
        .unwrap();
        match backend.complete(&chat_request("hello")) {
            Err(BackendError::Protocol(_)) => {}
            other => panic!("expected protocol error, got {other:?}"),
        }
    }
}
