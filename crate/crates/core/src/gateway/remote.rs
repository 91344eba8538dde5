use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{CompletionBackend, CompletionResult, FinishReason, GatewayError, GenerationConfig};
use crate::prompt::PromptText;

/// Environment variable holding the API credential.
pub const API_KEY_ENV: &str = "EXFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSettings {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub max_retries: u32,
    #[serde(with = "secs")]
    pub initial_backoff: Duration,
    #[serde(with = "secs")]
    pub max_backoff: Duration,
    /// Minimum spacing between request starts; zero disables rate limiting.
    #[serde(with = "secs")]
    pub min_interval: Duration,
}

impl Default for RemoteSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/completions".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(8),
            min_interval: Duration::ZERO,
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    stop: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

enum Failure {
    Transient(String),
    Fatal(String),
}

/// JSON-over-HTTP completion client with bounded exponential backoff.
pub struct RemoteBackend {
    settings: RemoteSettings,
    client: reqwest::blocking::Client,
    next_slot: Mutex<Instant>,
}

impl RemoteBackend {
    /// Builds a client; the API key falls back to [`API_KEY_ENV`].
    pub fn new(mut settings: RemoteSettings) -> Result<Self, GatewayError> {
        if settings.api_key.is_none() {
            settings.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| GatewayError::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self {
            settings,
            client,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    pub fn settings(&self) -> &RemoteSettings {
        &self.settings
    }

    fn wait_for_slot(&self) {
        if self.settings.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + self.settings.min_interval;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn attempt(&self, prompt: &PromptText, config: &GenerationConfig) -> Result<Choice, Failure> {
        self.wait_for_slot();
        let body = CompletionRequest {
            model: &config.model_id,
            prompt: &prompt.body,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            stop: &config.stop_sequence,
        };
        let mut request = self.client.post(&self.settings.endpoint).json(&body);
        if let Some(key) = &self.settings.api_key {
            request = request.bearer_auth(key);
        }
        let response = request
            .send()
            .map_err(|e| Failure::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
            return Err(Failure::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {}", truncate(&text, 300))));
        }
        let parsed: CompletionResponse = response
            .json()
            .map_err(|e| Failure::Transient(format!("malformed response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Failure::Transient("response has no choices".into()))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.settings
            .initial_backoff
            .saturating_mul(factor)
            .min(self.settings.max_backoff)
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl CompletionBackend for RemoteBackend {
    fn backend_id(&self) -> String {
        "remote".into()
    }

    fn complete(
        &self,
        prompt: &PromptText,
        config: &GenerationConfig,
    ) -> Result<CompletionResult, GatewayError> {
        if config.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidConfig(
                "remote backend requires a model id".into(),
            ));
        }
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(prompt, config) {
                Ok(choice) => {
                    let finish_reason = match choice.finish_reason.as_deref() {
                        Some("stop") | None => FinishReason::Stop,
                        Some("length") => FinishReason::Length,
                        Some(other) => FinishReason::BackendOther(other.to_string()),
                    };
                    debug!(attempts, "completion received");
                    return Ok(CompletionResult {
                        text: choice.text,
                        finish_reason,
                        latency: started.elapsed(),
                        backend_id: format!("remote:{}", config.model_id),
                        created_at: Utc::now(),
                    });
                }
                Err(Failure::Fatal(message)) => {
                    return Err(GatewayError::BackendUnavailable { attempts, message })
                }
                Err(Failure::Transient(message)) => {
                    if attempts > self.settings.max_retries {
                        return Err(GatewayError::BackendUnavailable { attempts, message });
                    }
                    let delay = self.backoff(attempts);
                    warn!(attempts, ?delay, %message, "transient completion failure, retrying");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
