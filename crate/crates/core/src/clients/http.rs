use std::fs;
use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    net, Answerer, ClientConfig, ClientError, Detection, Detector, DimGuard, FrameRef, RetryPolicy,
    Semaphore, Sleep, Summarizer, TextEncoder, ThreadSleep, ENV_API_BASE,
};

/// Blocking JSON-over-HTTP client for a hosted model endpoint.
///
/// Chat roles (summarize, answer) POST `{model, messages: [{role, content}]}`
/// where `content` interleaves text parts and base64 image parts; the reply
/// is `{content}`. The detector POSTs `{model, image}` and expects
/// `{detections: [{box, score, embedding}]}`; the text encoder POSTs
/// `{model, text}` and expects `{embedding}`.
pub struct HttpClient {
    endpoint: String,
    model: String,
    token: Option<String>,
    agent: ureq::Agent,
    policy: RetryPolicy,
    sleeper: Arc<dyn Sleep>,
    in_flight: Semaphore,
    detect_dim: DimGuard,
    embed_dim: DimGuard,
    retries: AtomicU64,
    requests: AtomicU64,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            token: None,
            agent: agent(Duration::from_secs(120)),
            policy: RetryPolicy::default(),
            sleeper: Arc::new(ThreadSleep),
            in_flight: Semaphore::new(4),
            detect_dim: DimGuard::default(),
            embed_dim: DimGuard::default(),
            retries: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        }
    }

    /// Builds a client from its config. Without an explicit endpoint,
    /// `role_path` (e.g. `/chat`) is appended to `$EVIDENCE_API_BASE`.
    pub fn from_config(cfg: &ClientConfig, role_path: &str) -> Result<Self, ClientError> {
        cfg.validate()?;
        let endpoint = match &cfg.endpoint {
            Some(e) => e.clone(),
            None => {
                let base = std::env::var(ENV_API_BASE).map_err(|_| {
                    ClientError::InvalidArgument(format!(
                        "no endpoint configured and ${ENV_API_BASE} is unset"
                    ))
                })?;
                format!("{}{}", base.trim_end_matches('/'), role_path)
            }
        };
        let token = std::env::var(&cfg.auth_env).ok().filter(|t| !t.is_empty());
        let mut client = Self::new(endpoint, cfg.model.clone())
            .with_timeout(cfg.timeout())
            .with_retry(RetryPolicy {
                max_retries: cfg.max_retries,
                ..RetryPolicy::default()
            });
        client.token = token;
        Ok(client)
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = agent(timeout);
        self
    }

    pub fn with_retry(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Arc<dyn Sleep>) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.in_flight = Semaphore::new(n);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Total retries performed over the client's lifetime.
    pub fn retries_used(&self) -> u64 {
        self.retries.load(Ordering::SeqCst)
    }

    /// Total HTTP requests sent, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn post_once(&self, body: &Value) -> Result<Value, ClientError> {
        let _permit = self.in_flight.acquire();
        net::record_attempt()?;
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_transport)?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Http { status, body: text });
        }
        serde_json::from_str(&text)
            .map_err(|e| ClientError::Protocol(format!("reply is not JSON ({e}): {text}")))
    }

    fn post(&self, body: Value) -> Result<Value, ClientError> {
        let (value, retries) = self.policy.run(self.sleeper.as_ref(), || self.post_once(&body))?;
        self.retries.fetch_add(u64::from(retries), Ordering::SeqCst);
        Ok(value)
    }

    fn chat(&self, text: &str, frames: &[FrameRef]) -> Result<String, ClientError> {
        let mut content = vec![json!({"type": "text", "text": text})];
        for f in frames {
            let (mime, data) = encode_image(f)?;
            content.push(json!({"type": "image", "mime_type": mime, "data": data}));
        }
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
        });
        #[derive(Deserialize)]
        struct Reply {
            content: String,
        }
        let reply: Reply = decode(self.post(body)?)?;
        Ok(reply.content)
    }
}

fn map_transport(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Timeout(_) => ClientError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ClientError::Timeout,
        other => ClientError::Transport(other.to_string()),
    }
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ClientError> {
    serde_json::from_value(v).map_err(|e| ClientError::Protocol(format!("unexpected reply shape: {e}")))
}

/// Reads the frame and, when it carries a box, crops to that region.
fn encode_image(frame: &FrameRef) -> Result<(&'static str, String), ClientError> {
    let bytes = fs::read(&frame.path).map_err(|e| {
        ClientError::InvalidArgument(format!("cannot read frame {}: {e}", frame.path.display()))
    })?;
    let b64 = base64::engine::general_purpose::STANDARD;
    let Some(bbox) = frame.bbox else {
        let mime = match frame.path.extension().and_then(|e| e.to_str()) {
            Some("png") => "image/png",
            _ => "image/jpeg",
        };
        return Ok((mime, b64.encode(bytes)));
    };
    let img = image::load_from_memory(&bytes).map_err(|e| {
        ClientError::InvalidArgument(format!("cannot decode {}: {e}", frame.path.display()))
    })?;
    let (w, h) = (img.width() as f32, img.height() as f32);
    let x0 = (bbox.x0 * w).floor() as u32;
    let y0 = (bbox.y0 * h).floor() as u32;
    let x1 = ((bbox.x1 * w).ceil() as u32).clamp(x0 + 1, img.width().max(x0 + 1));
    let y1 = ((bbox.y1 * h).ceil() as u32).clamp(y0 + 1, img.height().max(y0 + 1));
    let crop = img.crop_imm(x0, y0, x1 - x0, y1 - y0);
    let mut out = Cursor::new(Vec::new());
    crop.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ClientError::InvalidArgument(format!("cannot encode crop: {e}")))?;
    Ok(("image/png", b64.encode(out.into_inner())))
}

impl Summarizer for HttpClient {
    fn summarize(&self, frames: &[FrameRef], instruction: &str) -> Result<String, ClientError> {
        if frames.is_empty() {
            return Err(ClientError::InvalidArgument("summarize needs at least one frame".into()));
        }
        self.chat(instruction, frames)
    }
}

impl Answerer for HttpClient {
    fn answer_chat(&self, prompt: &str, frames: &[FrameRef]) -> Result<String, ClientError> {
        self.chat(prompt, frames)
    }
}

impl Detector for HttpClient {
    fn detect(&self, image: &FrameRef) -> Result<Vec<Detection>, ClientError> {
        let (_, data) = encode_image(image)?;
        #[derive(Deserialize)]
        struct Reply {
            detections: Vec<Detection>,
        }
        let reply: Reply = decode(self.post(json!({"model": self.model, "image": data}))?)?;
        for d in &reply.detections {
            self.detect_dim.check("detector", d.embedding.len())?;
        }
        Ok(reply.detections)
    }
}

impl TextEncoder for HttpClient {
    fn embed_text(&self, term: &str) -> Result<Vec<f32>, ClientError> {
        if term.trim().is_empty() {
            return Err(ClientError::InvalidArgument("cannot embed an empty term".into()));
        }
        #[derive(Deserialize)]
        struct Reply {
            embedding: Vec<f32>,
        }
        let reply: Reply = decode(self.post(json!({"model": self.model, "text": term}))?)?;
        self.embed_dim.check("text encoder", reply.embedding.len())?;
        Ok(reply.embedding)
    }
}
