//! Chat-completion gateway with four modes: `live` POSTs to an
//! OpenAI-compatible endpoint with exponential-backoff retries, `record` is
//! live plus a cassette append, `replay` serves responses from the cassette
//! with no network at all, and `stub` generates deterministic offline
//! responses dispatched by request tag.
//!
//! Requests are digested over a canonicalized (model, system, user) triple:
//! JSON payloads embedded in the user message are key-sorted first, so two
//! requests differing only in key order replay identically.
//!
//! Credentials are read from the environment at construction and never
//! appear in cassettes, logs, or error text.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::prediction::{HorizonPrediction, PredictionSet};
use crate::threshold::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayMode {
    Live,
    Replay,
    Record,
    Stub,
}

impl GatewayMode {
    pub fn name(self) -> &'static str {
        match self {
            GatewayMode::Live => "live",
            GatewayMode::Replay => "replay",
            GatewayMode::Record => "record",
            GatewayMode::Stub => "stub",
        }
    }
}

impl std::str::FromStr for GatewayMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(GatewayMode::Live),
            "replay" => Ok(GatewayMode::Replay),
            "record" => Ok(GatewayMode::Record),
            "stub" => Ok(GatewayMode::Stub),
            other => Err(Error::InvalidParams(format!(
                "unknown gateway mode {other:?} (expected live, replay, record, or stub)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// Full chat-completions endpoint URL.
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
    pub mode: GatewayMode,
    /// Cassette file; required in replay and record modes.
    pub cassette_path: Option<PathBuf>,
    /// Concurrent in-flight request cap.
    pub max_in_flight: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "https://api.example.com/v1/chat/completions".into(),
            model_name: "offline-stub".into(),
            api_key_env: "LLM_API_KEY".into(),
            timeout_s: 60.0,
            max_retries: 3,
            backoff_base_s: 0.5,
            mode: GatewayMode::Stub,
            cassette_path: None,
            max_in_flight: 4,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::InvalidParams("max_in_flight must be at least 1".into()));
        }
        if !(self.backoff_base_s >= 0.0) || !(self.timeout_s > 0.0) {
            return Err(Error::InvalidParams(
                "backoff_base_s must be nonnegative and timeout_s positive".into(),
            ));
        }
        if matches!(self.mode, GatewayMode::Replay | GatewayMode::Record)
            && self.cassette_path.is_none()
        {
            return Err(Error::InvalidParams(format!(
                "cassette_path is required in {} mode",
                self.mode.name()
            )));
        }
        Ok(())
    }
}

/// One chat-completion request. `tag` labels the caller (agent kind, fund,
/// date) for stub dispatch and replay-miss diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: String,
}

impl ChatRequest {
    pub fn new(system: &str, user: &str, tag: &str) -> Self {
        ChatRequest {
            system: system.to_string(),
            user: user.to_string(),
            temperature: 0.2,
            max_tokens: 2048,
            tag: tag.to_string(),
        }
    }
}

/// One cassette line. The file is JSONL: one record per line, fields in
/// exactly this order, `\n` terminated. On load, a repeated digest keeps the
/// last occurrence.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CassetteRecord {
    digest: String,
    tag: String,
    model: String,
    response: String,
}

fn canonicalized(v: &Value) -> Value {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), canonicalized(&m[k]));
            }
            Value::Object(out)
        }
        Value::Array(xs) => Value::Array(xs.iter().map(canonicalized).collect()),
        other => other.clone(),
    }
}

/// Cryptographic digest of (model, system, user). A user message that is
/// itself JSON is canonicalized (recursive key sort) before hashing so key
/// order cannot split otherwise-identical requests.
pub fn request_digest(model: &str, request: &ChatRequest) -> String {
    let user_normalized = match serde_json::from_str::<Value>(&request.user) {
        Ok(v) => canonicalized(&v).to_string(),
        Err(_) => request.user.clone(),
    };
    let doc = json!({
        "model": model,
        "system": request.system,
        "user": user_normalized,
    });
    let bytes = canonicalized(&doc).to_string();
    let mut hasher = Sha256::new();
    hasher.update(bytes.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// Wire-level POST, injectable so retry and parsing logic are testable
/// without sockets. Errors are connection-level failures (DNS, refused,
/// timeout) and count as retryable.
pub trait Transport: Send + Sync {
    fn post_chat(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
    ) -> std::result::Result<TransportResponse, String>;
}

/// Blocking HTTPS transport with the configured timeout baked in.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout_s: f64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs_f64(timeout_s))
            .build()
            .map_err(|e| Error::Transport(format!("client construction failed: {e}")))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post_chat(
        &self,
        url: &str,
        api_key: &str,
        body: &Value,
    ) -> std::result::Result<TransportResponse, String> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(api_key)
            .json(body)
            .send()
            // reqwest error Display can echo the URL but never the key.
            .map_err(|e| format!("request failed: {e}"))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| format!("body read failed: {e}"))?;
        Ok(TransportResponse { status, body })
    }
}

/// Transport for modes that must never touch the network.
struct NoNetworkTransport {
    mode: &'static str,
}

impl Transport for NoNetworkTransport {
    fn post_chat(
        &self,
        _url: &str,
        _api_key: &str,
        _body: &Value,
    ) -> std::result::Result<TransportResponse, String> {
        Err(format!("network access is disabled in {} mode", self.mode))
    }
}

/// Injectable clock pause so retry timing is testable without waiting.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, seconds: f64);
}

pub struct RealSleeper;

impl Sleeper for RealSleeper {
    fn sleep(&self, seconds: f64) {
        std::thread::sleep(std::time::Duration::from_secs_f64(seconds));
    }
}

struct Gate {
    cap: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

struct GateGuard<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut in_flight = self.state.lock().expect("gate poisoned");
        while *in_flight >= self.cap {
            in_flight = self.cv.wait(in_flight).expect("gate poisoned");
        }
        *in_flight += 1;
        GateGuard(self)
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.0.state.lock().expect("gate poisoned");
        *in_flight -= 1;
        self.0.cv.notify_one();
    }
}

enum CassetteState {
    Off,
    Replay(HashMap<String, String>),
    Record(fs::File),
}

pub struct Gateway {
    config: GatewayConfig,
    api_key: String,
    transport: Arc<dyn Transport>,
    sleeper: Arc<dyn Sleeper>,
    cassette: Mutex<CassetteState>,
    gate: Gate,
}

impl Gateway {
    pub fn new(config: GatewayConfig) -> Result<Self> {
        let transport: Arc<dyn Transport> = match config.mode {
            GatewayMode::Live | GatewayMode::Record => Arc::new(HttpTransport::new(config.timeout_s)?),
            GatewayMode::Replay => Arc::new(NoNetworkTransport { mode: "replay" }),
            GatewayMode::Stub => Arc::new(NoNetworkTransport { mode: "stub" }),
        };
        Gateway::with_parts(config, transport, Arc::new(RealSleeper))
    }

    /// Construction with injected transport and sleeper, for tests.
    pub fn with_parts(
        config: GatewayConfig,
        transport: Arc<dyn Transport>,
        sleeper: Arc<dyn Sleeper>,
    ) -> Result<Self> {
        config.validate()?;
        let api_key = match config.mode {
            GatewayMode::Live | GatewayMode::Record => std::env::var(&config.api_key_env)
                .map_err(|_| Error::MissingCredential {
                    env_var: config.api_key_env.clone(),
                    mode: config.mode.name().to_string(),
                })?,
            GatewayMode::Replay | GatewayMode::Stub => String::new(),
        };
        let cassette = match config.mode {
            GatewayMode::Replay => {
                let path = config.cassette_path.as_ref().expect("validated");
                CassetteState::Replay(load_cassette(path)?)
            }
            GatewayMode::Record => {
                let path = config.cassette_path.as_ref().expect("validated");
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                CassetteState::Record(file)
            }
            _ => CassetteState::Off,
        };
        let gate = Gate { cap: config.max_in_flight, state: Mutex::new(0), cv: Condvar::new() };
        Ok(Gateway { config, api_key, transport, sleeper, cassette: Mutex::new(cassette), gate })
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    pub fn model_name(&self) -> &str {
        &self.config.model_name
    }

    /// Resolve one request to response text according to the mode.
    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        if request.user.is_empty() {
            return Err(Error::InvalidParams("chat request user content must not be empty".into()));
        }
        let _slot = self.gate.acquire();
        match self.config.mode {
            GatewayMode::Stub => stub_complete(request),
            GatewayMode::Replay => {
                let digest = request_digest(&self.config.model_name, request);
                let cassette = self.cassette.lock().expect("cassette poisoned");
                match &*cassette {
                    CassetteState::Replay(map) => map.get(&digest).cloned().ok_or_else(|| {
                        Error::ReplayMiss { tag: request.tag.clone(), digest }
                    }),
                    _ => unreachable!("replay mode always loads a cassette"),
                }
            }
            GatewayMode::Live => self.live_complete(request),
            GatewayMode::Record => {
                let response = self.live_complete(request)?;
                let record = CassetteRecord {
                    digest: request_digest(&self.config.model_name, request),
                    tag: request.tag.clone(),
                    model: self.config.model_name.clone(),
                    response: response.clone(),
                };
                let mut cassette = self.cassette.lock().expect("cassette poisoned");
                if let CassetteState::Record(file) = &mut *cassette {
                    let line = serde_json::to_string(&record)
                        .expect("cassette record serialization is infallible");
                    let path = self.config.cassette_path.as_ref().expect("validated");
                    file.write_all(line.as_bytes())
                        .and_then(|_| file.write_all(b"\n"))
                        .and_then(|_| file.flush())
                        .map_err(|e| Error::io(path, e))?;
                }
                Ok(response)
            }
        }
    }

    fn live_complete(&self, request: &ChatRequest) -> Result<String> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            let outcome = self.transport.post_chat(&self.config.base_url, &self.api_key, &body);
            let retryable = match outcome {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return extract_content(&resp.body);
                }
                Ok(resp) if resp.status == 429 || (500..600).contains(&resp.status) => {
                    last_error = format!("status {}", resp.status);
                    true
                }
                Ok(resp) => {
                    return Err(Error::Transport(format!(
                        "status {}: {}",
                        resp.status,
                        truncate(&resp.body, 200)
                    )));
                }
                Err(e) => {
                    last_error = e;
                    true
                }
            };
            if retryable && attempt < self.config.max_retries {
                self.sleeper.sleep(self.config.backoff_base_s * f64::powi(2.0, attempt as i32));
            }
        }
        Err(Error::RetriesExhausted {
            attempts: self.config.max_retries + 1,
            last_error,
        })
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        s.to_string()
    } else {
        let mut end = max;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

/// Pull the completion text out of an OpenAI-shaped response. When the
/// serving stack returns a separate reasoning channel, it is folded into a
/// leading think block so downstream parsing sees one contract.
fn extract_content(body: &str) -> Result<String> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| Error::BadResponse(format!("response body is not JSON: {e}")))?;
    let message = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| Error::BadResponse("response lacks choices[0].message".into()))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::BadResponse("response lacks choices[0].message.content".into()))?;
    let reasoning = message
        .get("reasoning_content")
        .or_else(|| message.get("reasoning"))
        .and_then(Value::as_str);
    match reasoning {
        Some(r) if !content.contains("<think>") => Ok(format!("<think>{r}</think>\n{content}")),
        _ => Ok(content.to_string()),
    }
}

fn load_cassette(path: &std::path::Path) -> Result<HashMap<String, String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CassetteRecord =
            serde_json::from_str(&line).map_err(|e| Error::CassetteMalformed {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: e.to_string(),
            })?;
        map.insert(record.digest, record.response);
    }
    Ok(map)
}

/// Tag prefix (text before the first `:`) selects the stub generator.
fn stub_complete(request: &ChatRequest) -> Result<String> {
    let kind = request.tag.split(':').next().unwrap_or("");
    match kind {
        "predict" => stub_predict(&request.user),
        "decide" => stub_decide(&request.user),
        _ => Err(Error::UnknownStubTag(request.tag.clone())),
    }
}

fn direction_token(d: Direction) -> &'static str {
    match d {
        Direction::Up => "up",
        Direction::Down => "down",
        Direction::Side => "side",
    }
}

/// Deterministic prediction stand-in: the 5-day change against the 5-day
/// threshold picks the dominant direction for all horizons; the dominant
/// class gets p = 0.6, the runner-up 0.25, the remainder 0.15, confidence
/// 0.5. Output follows the full think-block + JSON contract.
pub fn stub_predict(payload: &str) -> Result<String> {
    let input: Value = serde_json::from_str(payload)
        .map_err(|e| Error::BadResponse(format!("stub predictor input is not JSON: {e}")))?;
    let ctx = input
        .get("price_context")
        .ok_or_else(|| Error::BadResponse("stub predictor input lacks price_context".into()))?;
    let field = |name: &str| -> Result<f64> {
        ctx.get(name).and_then(Value::as_f64).filter(|x| x.is_finite()).ok_or_else(|| {
            Error::BadResponse(format!("stub predictor input lacks numeric price_context.{name}"))
        })
    };
    let chg = field("chg_5d_pct")? / 100.0;
    let eps5 = field("eps5")?;

    let dominant = if chg > eps5 {
        Direction::Up
    } else if chg < -eps5 {
        Direction::Down
    } else {
        Direction::Side
    };
    let (p_up, p_down, p_side) = match dominant {
        Direction::Up => (0.6, 0.15, 0.25),
        Direction::Down => (0.15, 0.6, 0.25),
        Direction::Side => (0.25, 0.15, 0.6),
    };
    let horizon = HorizonPrediction { p_up, p_down, p_side, confidence: 0.5 };
    let set = PredictionSet {
        t1: horizon,
        t5: horizon,
        t20: horizon,
        raw_text: String::new(),
        had_think_block: true,
    };
    let think = format!(
        "rule: chg_5d {:.6} vs eps5 {:.6} -> dominant {}",
        chg,
        eps5,
        direction_token(dominant)
    );
    Ok(set.render(&think))
}

/// Probability cut above which the rule-based decision doubles its step.
pub const DECIDE_STRONG_P: f64 = 0.75;
/// Probability cut above which the rule-based decision acts at all.
pub const DECIDE_ACT_P: f64 = 0.55;

/// Deterministic decision stand-in: reads the 5-day horizon from the
/// decision input, acts on its dominant direction when the probability
/// clears the cut, doubling the step above the strong cut. Sideways or
/// low-conviction reads hold.
pub fn stub_decide(payload: &str) -> Result<String> {
    let input: Value = serde_json::from_str(payload)
        .map_err(|e| Error::BadResponse(format!("stub decider input is not JSON: {e}")))?;
    let t5 = input
        .get("prediction")
        .and_then(|p| p.get("t5"))
        .ok_or_else(|| Error::BadResponse("stub decider input lacks prediction.t5".into()))?;
    let field = |name: &str| -> Result<f64> {
        t5.get(name).and_then(Value::as_f64).filter(|x| x.is_finite()).ok_or_else(|| {
            Error::BadResponse(format!("stub decider input lacks numeric prediction.t5.{name}"))
        })
    };
    let h = HorizonPrediction {
        p_up: field("up")?,
        p_down: field("down")?,
        p_side: field("side")?,
        confidence: field("confidence").unwrap_or(0.5),
    };
    let dominant = crate::prediction::dominant_direction(&h);
    let p = h.p_up.max(h.p_down).max(h.p_side);
    let action = match dominant {
        Direction::Up if p >= DECIDE_STRONG_P => "increase_40",
        Direction::Up if p >= DECIDE_ACT_P => "increase_20",
        Direction::Down if p >= DECIDE_STRONG_P => "reduce_40",
        Direction::Down if p >= DECIDE_ACT_P => "reduce_20",
        _ => "hold",
    };
    Ok(format!(
        "<think>t5 dominant {} p {:.4} cuts {DECIDE_ACT_P}/{DECIDE_STRONG_P}</think>\n{action}",
        direction_token(dominant),
        p
    ))
}
