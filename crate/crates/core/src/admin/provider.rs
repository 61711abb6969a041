//! Respondent providers: the in-process simulator and an OpenAI-compatible
//! HTTP chat endpoint, behind one single-turn request/reply trait.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Condition, Format, Inventory, ItemPool};
use crate::persona::PersonaSet;
use crate::sim::{effective_theta, simulate_unit, unit_uniform, SimParams, SimSpec};

/// Decoding options passed through verbatim to the provider (temperature etc.).
pub type DecodeOptions = BTreeMap<String, serde_json::Value>;

/// What a request is about. Only the simulator reads this; live providers see
/// nothing but the prompt text.
#[derive(Debug, Clone, PartialEq)]
pub enum RequestContext {
    Questionnaire {
        persona_id: String,
        format: Format,
        condition: Condition,
        unit_id: String,
        /// GFC statements displayed right-to-left relative to the block.
        swapped: bool,
    },
    Rating {
        item_ids: Vec<String>,
        replication: u32,
    },
}

/// A single-turn request: one user message, no history.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderRequest {
    pub prompt: String,
    pub decode: DecodeOptions,
    pub context: RequestContext,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub status: u16,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    /// Network failure, timeout, rate limiting or a server error; worth retrying.
    #[error("transport failure: {0}")]
    Transport(String),
    /// A request the provider will never accept (bad credentials, bad request).
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("simulator cannot answer: {0}")]
    Simulator(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

pub trait Provider: Send + Sync {
    /// Model identifier recorded as the respondent id.
    fn model_id(&self) -> &str;
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError>;
}

/// Spaces calls at least `min_interval` apart across all threads.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        RateLimiter { min_interval, next: Mutex::new(None) }
    }

    /// `requests_per_minute == 0` disables limiting.
    pub fn per_minute(requests_per_minute: u32) -> Self {
        if requests_per_minute == 0 {
            Self::new(Duration::ZERO)
        } else {
            Self::new(Duration::from_secs_f64(60.0 / requests_per_minute as f64))
        }
    }

    /// Blocks until the caller may issue a request.
    pub fn acquire(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |t| t.max(now));
            *next = Some(slot + self.min_interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Generative IRT respondent. Questionnaire answers come from the simulator
/// (displayed on the requested side); rating replies are the pool
/// desirability plus rounding noise.
pub struct SimProvider {
    model_id: String,
    personas: HashMap<String, [f64; 5]>,
    inventory: Inventory,
    params: SimParams,
    spec: SimSpec,
    desirability: HashMap<String, f64>,
    rating_noise_sd: f64,
}

impl SimProvider {
    pub fn new(
        model_id: impl Into<String>,
        personas: &PersonaSet,
        inventory: Inventory,
        pool: &ItemPool,
        params: SimParams,
        spec: SimSpec,
    ) -> Self {
        SimProvider {
            model_id: model_id.into(),
            personas: personas.personas.iter().map(|p| (p.id.clone(), p.z)).collect(),
            inventory,
            params,
            spec,
            desirability: pool.items().iter().filter_map(|i| Some((i.id.clone(), i.desirability?))).collect(),
            rating_noise_sd: 0.5,
        }
    }

    pub fn with_rating_noise(mut self, sd: f64) -> Self {
        self.rating_noise_sd = sd.max(0.0);
        self
    }

    fn answer(&self, ctx: &RequestContext) -> Result<String, ProviderError> {
        match ctx {
            RequestContext::Questionnaire { persona_id, format, condition, unit_id, swapped } => {
                let z = self
                    .personas
                    .get(persona_id)
                    .ok_or_else(|| ProviderError::Simulator(format!("unknown persona `{persona_id}`")))?;
                let theta = effective_theta(z, *condition, self.spec.delta);
                let u = unit_uniform(self.spec.seed, persona_id, *format, unit_id);
                let y = simulate_unit(&theta, &self.inventory, &self.params, *format, unit_id, u)
                    .map_err(|e| ProviderError::Simulator(e.to_string()))?;
                let shown = if *swapped { 8 - y } else { y };
                Ok(shown.to_string())
            }
            RequestContext::Rating { item_ids, replication } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0xd35_12ab);
                rng.set_stream(u64::from(*replication));
                let noise = Normal::new(0.0, self.rating_noise_sd).expect("finite sd");
                let mut out = Vec::with_capacity(item_ids.len());
                for id in item_ids {
                    let s = self.desirability.get(id).copied().unwrap_or(5.0);
                    let r = (s + noise.sample(&mut rng)).round().clamp(1.0, 9.0) as u8;
                    out.push(r.to_string());
                }
                Ok(out.join(" "))
            }
        }
    }
}

impl Provider for SimProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        let start = Instant::now();
        let text = self.answer(&request.context)?;
        Ok(ProviderReply { text, status: 200, latency: start.elapsed() })
    }
}

/// Live endpoint settings. The token itself is never stored in config files,
/// only the name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL up to and including the API version, e.g. `https://host/v1`.
    pub base_url: String,
    pub model: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub requests_per_minute: u32,
    pub decode: DecodeOptions,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: String::new(),
            model: String::new(),
            token_env: "SDRKIT_API_TOKEN".into(),
            timeout_secs: 120,
            requests_per_minute: 0,
            decode: DecodeOptions::new(),
        }
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions` client.
pub struct HttpProvider {
    config: HttpConfig,
    token: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Result<Self, ProviderError> {
        if config.base_url.trim().is_empty() {
            return Err(ProviderError::Config("base_url is empty".into()));
        }
        if config.model.trim().is_empty() {
            return Err(ProviderError::Config("model is empty".into()));
        }
        let token = if config.token_env.is_empty() { None } else { std::env::var(&config.token_env).ok() };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = RateLimiter::per_minute(config.requests_per_minute);
        Ok(HttpProvider { config, token, agent, limiter })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ProviderRequest) -> serde_json::Value {
        let mut body = serde_json::Map::new();
        for (k, v) in self.config.decode.iter().chain(&request.decode) {
            body.insert(k.clone(), v.clone());
        }
        body.insert("model".into(), self.config.model.clone().into());
        body.insert("messages".into(), serde_json::json!([{ "role": "user", "content": request.prompt }]));
        serde_json::Value::Object(body)
    }
}

fn reply_text(value: &serde_json::Value) -> Option<String> {
    value.pointer("/choices/0/message/content").and_then(|v| v.as_str()).map(str::to_string)
}

impl Provider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: &ProviderRequest) -> Result<ProviderReply, ProviderError> {
        self.limiter.acquire();
        let start = Instant::now();
        let mut req = self.agent.post(&self.url()).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(self.body(request)).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let latency = start.elapsed();
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transport(format!("status {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(ProviderError::Rejected { status, body: text });
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::Transport(format!("malformed reply: {e}")))?;
        let content = reply_text(&value)
            .ok_or_else(|| ProviderError::Transport("reply has no choices[0].message.content".into()))?;
        Ok(ProviderReply { text: content, status, latency })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the canned `(status, body)` replies in order and returns the raw requests.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = vec![];
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen.push(head + &String::from_utf8(buf).unwrap());
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
            seen
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn request(prompt: &str) -> ProviderRequest {
        ProviderRequest {
            prompt: prompt.into(),
            decode: DecodeOptions::new(),
            context: RequestContext::Rating { item_ids: vec![], replication: 0 },
        }
    }

    #[test]
    fn http_provider_speaks_chat_completions() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":" 5\n"}}]}"#.to_string();
        let (url, server) = mock_server(vec![(200, ok), (503, "{}".into()), (401, "nope".into())]);
        std::env::set_var("SDRKIT_TEST_TOKEN_A", "secret-token");
        let mut decode = DecodeOptions::new();
        decode.insert("temperature".into(), serde_json::json!(0.7));
        let p = HttpProvider::new(HttpConfig {
            base_url: url,
            model: "test-model".into(),
            token_env: "SDRKIT_TEST_TOKEN_A".into(),
            decode,
            ..HttpConfig::default()
        })
        .unwrap();
        let reply = p.complete(&request("hello\nworld")).unwrap();
        assert_eq!(reply.text, " 5\n");
        assert_eq!(reply.status, 200);
        let err = p.complete(&request("x")).unwrap_err();
        assert!(err.is_transient(), "{err}");
        let err = p.complete(&request("x")).unwrap_err();
        assert_eq!(err, ProviderError::Rejected { status: 401, body: "nope".into() });
        let seen = server.join().unwrap();
        let first = &seen[0];
        assert!(first.starts_with("POST /v1/chat/completions"));
        assert!(first.contains("authorization: Bearer secret-token") || first.contains("Authorization: Bearer secret-token"));
        let body: serde_json::Value = serde_json::from_str(first.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["messages"], serde_json::json!([{ "role": "user", "content": "hello\nworld" }]));
    }

    #[test]
    fn http_provider_requires_endpoint() {
        assert!(matches!(HttpProvider::new(HttpConfig::default()), Err(ProviderError::Config(_))));
    }

    #[test]
    fn rate_limiter_spaces_calls() {
        let lim = RateLimiter::new(Duration::from_millis(20));
        let start = Instant::now();
        for _ in 0..4 {
            lim.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(60));
        let free = RateLimiter::per_minute(0);
        let start = Instant::now();
        for _ in 0..100 {
            free.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
