use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, warn};

use super::media::{decode_audio, decode_image};
use super::{
    Embedding, PatchMatrix, Provider, ProviderConfig, ProviderError, ReportPrompt, PATCH_DIM,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    /// Connection-level failure (DNS, refused, reset).
    Io(String),
}

/// Fault classes a test transport can inject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultKind {
    Status(u16),
    Timeout,
    Io,
}

/// Blocking JSON POST.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportError>;
}

/// [`Transport`] backed by `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
        timeout: Duration,
    ) -> Result<TransportResponse, TransportError> {
        let mut req = self.agent.post(url).header("Accept", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let req = req.config().timeout_global(Some(timeout)).build();
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let body = resp
                    .body_mut()
                    .read_to_vec()
                    .map_err(|e| classify_ureq(&e))?;
                Ok(TransportResponse { status, body })
            }
            Err(e) => Err(classify_ureq(&e)),
        }
    }
}

fn classify_ureq(e: &ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}

/// Exponential backoff between attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub initial_backoff: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            initial_backoff: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        Self {
            initial_backoff: Duration::ZERO,
            factor: 2.0,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = retry.saturating_sub(1).min(30) as i32;
        self.initial_backoff.mul_f64(self.factor.powi(exp))
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *p == 0 {
            p = self.cv.wait(p).unwrap_or_else(|e| e.into_inner());
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut p = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *p += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    output: Option<Value>,
    #[serde(default)]
    error: Option<Value>,
}

/// Remote provider speaking the JSON contract in `docs/provider_contract.md`.
pub struct HttpProvider {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limiter: Semaphore,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Self::with_transport(config, Arc::new(UreqTransport::default()))
    }

    pub fn with_transport(
        config: ProviderConfig,
        transport: Arc<dyn Transport>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        let limiter = Semaphore::new(config.max_concurrent_requests);
        Ok(Self {
            config,
            transport,
            retry: RetryPolicy::default(),
            limiter,
        })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn api_key(&self) -> Result<String, ProviderError> {
        std::env::var(&self.config.api_key_ref)
            .map_err(|_| ProviderError::MissingCredential(self.config.api_key_ref.clone()))
    }

    /// Sends one task request, retrying transient failures.
    fn call(&self, task: &str, payload: Value) -> Result<Value, ProviderError> {
        let key = self.api_key()?;
        let mut body = json!({
            "model_id": self.config.model_id,
            "task": task,
        });
        if let (Value::Object(b), Value::Object(p)) = (&mut body, payload) {
            b.extend(p);
        }
        let timeout = Duration::from_secs_f64(self.config.timeout);
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.transport
                    .post_json(&self.config.endpoint_url, Some(&key), &body, timeout)
            };
            let transient = match result {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    return parse_output(&resp.body);
                }
                Ok(resp) if resp.status >= 500 => ProviderError::Http {
                    status: resp.status,
                    attempts: attempt,
                },
                Ok(resp) => {
                    return Err(ProviderError::Http {
                        status: resp.status,
                        attempts: attempt,
                    });
                }
                Err(TransportError::Timeout) => ProviderError::Timeout { attempts: attempt },
                Err(TransportError::Io(message)) => ProviderError::Transport {
                    message,
                    attempts: attempt,
                },
            };
            if attempt >= max_attempts {
                warn!(task, attempts = attempt, error = %transient, "provider call failed");
                return Err(transient);
            }
            let delay = self.retry.delay(attempt);
            debug!(task, attempt, ?delay, error = %transient, "retrying provider call");
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
        }
    }

    fn call_text(&self, task: &str, payload: Value) -> Result<String, ProviderError> {
        match self.call(task, payload)? {
            Value::String(s) if !s.trim().is_empty() => Ok(s),
            Value::String(_) => Err(ProviderError::EmptyOutput),
            other => Err(ProviderError::Protocol(format!(
                "expected string output, got {}",
                type_name(&other)
            ))),
        }
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn parse_output(body: &[u8]) -> Result<Value, ProviderError> {
    let resp: WireResponse = serde_json::from_slice(body)
        .map_err(|e| ProviderError::Protocol(format!("invalid JSON response: {e}")))?;
    if let Some(err) = resp.error {
        let msg = match err {
            Value::String(s) => s,
            other => other.to_string(),
        };
        return Err(ProviderError::Protocol(format!("provider error: {msg}")));
    }
    resp.output
        .ok_or_else(|| ProviderError::Protocol("response has neither output nor error".into()))
}

fn parse_vector(v: &Value) -> Result<Vec<f32>, ProviderError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ProviderError::Protocol("expected an array of numbers".into()))?;
    arr.iter()
        .map(|x| {
            x.as_f64()
                .map(|f| f as f32)
                .ok_or_else(|| ProviderError::Protocol("non-numeric vector element".into()))
        })
        .collect()
}

fn parse_matrix(v: &Value, dim: usize) -> Result<Vec<Embedding>, ProviderError> {
    let rows = v
        .as_array()
        .ok_or_else(|| ProviderError::Protocol("expected an array of vectors".into()))?;
    if rows.is_empty() {
        return Err(ProviderError::EmptyOutput);
    }
    rows.iter()
        .map(|r| {
            let values = parse_vector(r)?;
            if values.len() != dim {
                return Err(ProviderError::DimMismatch {
                    expected: dim,
                    actual: values.len(),
                });
            }
            Embedding::normalized(values)
        })
        .collect()
}

fn non_empty(text: &str) -> Result<(), ProviderError> {
    if text.trim().is_empty() {
        Err(ProviderError::EmptyInput)
    } else {
        Ok(())
    }
}

impl Provider for HttpProvider {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn caption_image(&self, image: &[u8]) -> Result<String, ProviderError> {
        decode_image(image)?;
        self.call_text(
            "caption_image",
            json!({"payload": BASE64.encode(image), "payload_encoding": "base64"}),
        )
    }

    fn transcribe_audio(&self, audio: &[u8]) -> Result<String, ProviderError> {
        decode_audio(audio)?;
        self.call_text(
            "transcribe_audio",
            json!({"payload": BASE64.encode(audio), "payload_encoding": "base64"}),
        )
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, ProviderError> {
        non_empty(text)?;
        let out = self.call(
            "embed_text",
            json!({"payload": text, "payload_encoding": "text"}),
        )?;
        Embedding::normalized(parse_vector(&out)?)
    }

    fn embed_page(&self, page_id: &str, image: &[u8]) -> Result<PatchMatrix, ProviderError> {
        decode_image(image)?;
        let out = self.call(
            "embed_page",
            json!({
                "payload": BASE64.encode(image),
                "payload_encoding": "base64",
                "page_id": page_id,
            }),
        )?;
        PatchMatrix::new(page_id, parse_matrix(&out, PATCH_DIM)?)
    }

    fn embed_query_tokens(&self, text: &str) -> Result<Vec<Embedding>, ProviderError> {
        non_empty(text)?;
        let out = self.call(
            "embed_query_tokens",
            json!({"payload": text, "payload_encoding": "text"}),
        )?;
        parse_matrix(&out, PATCH_DIM)
    }

    fn generate_report(&self, prompt: &ReportPrompt) -> Result<String, ProviderError> {
        self.call_text(
            "generate_report",
            json!({"payload": prompt.rendered, "payload_encoding": "text"}),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Replays scripted faults, then succeeds with `output`.
    struct ScriptedTransport {
        faults: Vec<FaultKind>,
        output: Value,
        calls: AtomicUsize,
    }

    impl ScriptedTransport {
        fn new(faults: Vec<FaultKind>, output: Value) -> Self {
            Self {
                faults,
                output,
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Transport for ScriptedTransport {
        fn post_json(
            &self,
            _url: &str,
            bearer: Option<&str>,
            body: &Value,
            _timeout: Duration,
        ) -> Result<TransportResponse, TransportError> {
            assert_eq!(bearer, Some("secret-value"));
            assert_eq!(body["model_id"], "m1");
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            match self.faults.get(n) {
                Some(FaultKind::Status(s)) => Ok(TransportResponse {
                    status: *s,
                    body: b"{}".to_vec(),
                }),
                Some(FaultKind::Timeout) => Err(TransportError::Timeout),
                Some(FaultKind::Io) => Err(TransportError::Io("connection reset".into())),
                None => Ok(TransportResponse {
                    status: 200,
                    body: serde_json::to_vec(&json!({"output": self.output})).unwrap(),
                }),
            }
        }
    }

    const KEY_VAR: &str = "SITEINSPECT_HTTP_TEST_KEY";

    fn provider(
        faults: Vec<FaultKind>,
        output: Value,
        retries: u32,
    ) -> (HttpProvider, Arc<ScriptedTransport>) {
        std::env::set_var(KEY_VAR, "secret-value");
        let t = Arc::new(ScriptedTransport::new(faults, output));
        let cfg = ProviderConfig {
            endpoint_url: "http://localhost:9/v1".into(),
            api_key_ref: KEY_VAR.into(),
            model_id: "m1".into(),
            timeout: 1.0,
            max_retries: retries,
            max_concurrent_requests: 2,
        };
        let p = HttpProvider::with_transport(cfg, t.clone())
            .unwrap()
            .with_retry_policy(RetryPolicy::no_delay());
        (p, t)
    }

    #[test]
    fn transient_failures_are_invisible() {
        let (p, t) = provider(
            vec![FaultKind::Status(503), FaultKind::Timeout],
            json!([3.0, 4.0]),
            2,
        );
        let e = p.embed_text("x").unwrap();
        assert_eq!(e.values(), &[0.6, 0.8]);
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn fails_after_exactly_max_retries_plus_one() {
        let (p, t) = provider(vec![FaultKind::Status(502); 10], json!("x"), 3);
        match p.embed_text("x") {
            Err(ProviderError::Http { status, attempts }) => {
                assert_eq!((status, attempts), (502, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);

        let (p, t) = provider(vec![FaultKind::Timeout; 10], json!("x"), 1);
        assert!(matches!(
            p.embed_text("x"),
            Err(ProviderError::Timeout { attempts: 2 })
        ));
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn client_errors_fail_immediately() {
        let (p, t) = provider(vec![FaultKind::Status(404)], json!("x"), 5);
        assert!(matches!(
            p.embed_text("x"),
            Err(ProviderError::Http {
                status: 404,
                attempts: 1
            })
        ));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_text_output_is_an_error() {
        let (p, _) = provider(vec![], json!("   "), 0);
        let prompt = ReportPrompt {
            rendered: "r".into(),
            time: None,
            location: None,
            observation: "o".into(),
            evidence: vec![],
        };
        assert!(matches!(
            p.generate_report(&prompt),
            Err(ProviderError::EmptyOutput)
        ));
    }

    #[test]
    fn wrong_dim_patches_rejected() {
        let (p, _) = provider(vec![], json!([[1.0, 0.0]]), 0);
        assert!(matches!(
            p.embed_query_tokens("construction"),
            Err(ProviderError::DimMismatch { .. })
        ));
    }

    #[test]
    fn backoff_doubles_from_half_second() {
        let r = RetryPolicy::default();
        assert_eq!(r.delay(1), Duration::from_millis(500));
        assert_eq!(r.delay(2), Duration::from_millis(1000));
        assert_eq!(r.delay(3), Duration::from_millis(2000));
    }

    #[test]
    fn error_body_is_surfaced() {
        assert!(matches!(
            parse_output(br#"{"error":"model overloaded"}"#),
            Err(ProviderError::Protocol(m)) if m.contains("overloaded")
        ));
        assert!(parse_output(b"not json").is_err());
    }

    struct SlowTransport {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Transport for SlowTransport {
        fn post_json(
            &self,
            _: &str,
            _: Option<&str>,
            _: &Value,
            _: Duration,
        ) -> Result<TransportResponse, TransportError> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(TransportResponse {
                status: 200,
                body: br#"{"output":"caption"}"#.to_vec(),
            })
        }
    }

    #[test]
    fn concurrency_is_capped() {
        std::env::set_var(KEY_VAR, "secret-value");
        let t = Arc::new(SlowTransport {
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let cfg = ProviderConfig {
            endpoint_url: "http://localhost:9/v1".into(),
            api_key_ref: KEY_VAR.into(),
            model_id: "m1".into(),
            timeout: 1.0,
            max_retries: 0,
            max_concurrent_requests: 2,
        };
        let p = Arc::new(HttpProvider::with_transport(cfg, t.clone()).unwrap());
        std::thread::scope(|s| {
            for _ in 0..8 {
                let p = p.clone();
                s.spawn(move || p.embed_text("a").err());
            }
        });
        assert!(t.peak.load(Ordering::SeqCst) <= 2);
        assert!(t.peak.load(Ordering::SeqCst) >= 1);
    }
}
