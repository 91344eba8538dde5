//! Completion backends: a remote HTTP API and a record/replay cassette.
//!
//! [`Gateway`] wraps any [`CompletionBackend`] with config validation, a cap
//! on in-flight calls, stop-sequence stripping and call counting.

mod remote;
mod replay;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest;
use crate::limit::ConcurrencyLimit;
use crate::prompt::{PromptText, STOP_SEQUENCE};

pub use remote::{RemoteBackend, RemoteSettings, API_KEY_ENV};
pub use replay::{
    count_file_entries, CassetteEntry, CassetteStore, RecordingBackend, ReplayBackend,
    ReplayCassette,
};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("no cassette entry for prompt {prompt_digest} / config {config_digest}")]
    CassetteMiss {
        prompt_digest: String,
        config_digest: String,
    },
    #[error("cassette storage: {0}")]
    Storage(String),
}

/// Completion parameters.
///
/// `sample` distinguishes independent draws for the same prompt and
/// settings (grid repeats, retry attempts). It keys replay cassettes and is
/// never sent to a remote API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop_sequence: String,
    pub model_id: String,
    #[serde(default)]
    pub sample: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            stop_sequence: STOP_SEQUENCE.to_string(),
            model_id: String::new(),
            sample: 0,
        }
    }
}

impl GenerationConfig {
    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_sample(mut self, sample: u32) -> Self {
        self.sample = sample;
        self
    }

    pub fn with_model(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidConfig(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidConfig("max_tokens must be at least 1".into()));
        }
        if self.stop_sequence.is_empty() {
            return Err(GatewayError::InvalidConfig("stop sequence is empty".into()));
        }
        Ok(())
    }

    /// Digest over a normalized rendering; temperature is fixed to four
    /// decimals so `0.75` and `0.7500000001` share a key.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct Normalized<'a> {
            temperature: String,
            max_tokens: u32,
            stop: &'a str,
            model: &'a str,
            sample: u32,
        }
        digest::json_digest(&Normalized {
            temperature: format!("{:.4}", self.temperature),
            max_tokens: self.max_tokens,
            stop: &self.stop_sequence,
            model: &self.model_id,
            sample: self.sample,
        })
    }
}

pub fn prompt_digest(prompt: &PromptText) -> String {
    digest::sha256_hex(prompt.body.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    BackendOther(String),
}

impl fmt::Display for FinishReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinishReason::Stop => f.write_str("stop"),
            FinishReason::Length => f.write_str("length"),
            FinishReason::BackendOther(other) => write!(f, "other({other})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    /// The continuation, stop sequence excluded.
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(with = "millis")]
    pub latency: Duration,
    pub backend_id: String,
    pub created_at: DateTime<Utc>,
}

impl CompletionResult {
    /// A result authored by hand, e.g. for a fixture cassette.
    pub fn fixture(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            latency: Duration::ZERO,
            backend_id: "fixture".into(),
            created_at: DateTime::<Utc>::UNIX_EPOCH,
        }
    }

    /// Cuts `text` at the first occurrence of `stop`.
    fn strip_stop(mut self, stop: &str) -> Self {
        if let Some(at) = self.text.find(stop) {
            self.text.truncate(at);
            self.finish_reason = FinishReason::Stop;
        }
        self
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

pub trait CompletionBackend: Send + Sync {
    fn backend_id(&self) -> String;

    fn complete(
        &self,
        prompt: &PromptText,
        config: &GenerationConfig,
    ) -> Result<CompletionResult, GatewayError>;
}

/// Shareable front for a backend.
pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    limit: ConcurrencyLimit,
    calls: AtomicUsize,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.backend_id())
            .field("max_in_flight", &self.limit.max())
            .field("calls", &self.call_count())
            .finish()
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        Self::with_max_in_flight(backend, DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_max_in_flight(backend: Arc<dyn CompletionBackend>, max_in_flight: usize) -> Self {
        Self {
            backend,
            limit: ConcurrencyLimit::new(max_in_flight),
            calls: AtomicUsize::new(0),
        }
    }

    /// Convenience: a replay gateway over an in-memory cassette.
    pub fn replay(cassette: ReplayCassette) -> Self {
        Self::new(Arc::new(ReplayBackend::new(Arc::new(CassetteStore::in_memory(
            cassette,
        )))))
    }

    pub fn backend_id(&self) -> String {
        self.backend.backend_id()
    }

    pub fn max_in_flight(&self) -> usize {
        self.limit.max()
    }

    /// Number of `complete` calls that reached the backend.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Sends one prompt. The prompt's stop sequence overrides the config's.
    pub fn complete(
        &self,
        prompt: &PromptText,
        config: &GenerationConfig,
    ) -> Result<CompletionResult, GatewayError> {
        let config = GenerationConfig {
            stop_sequence: prompt.stop_sequence.clone(),
            ..config.clone()
        };
        config.validate()?;
        let _permit = self.limit.acquire();
        self.calls.fetch_add(1, Ordering::SeqCst);
        let result = self.backend.complete(prompt, &config)?;
        Ok(result.strip_stop(&config.stop_sequence))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(body: &str) -> PromptText {
        PromptText {
            body: body.into(),
            stop_sequence: STOP_SEQUENCE.into(),
        }
    }

    #[test]
    fn config_validation() {
        assert!(GenerationConfig::default().validate().is_ok());
        assert!(GenerationConfig::default().with_temperature(1.5).validate().is_err());
        assert!(GenerationConfig::default().with_temperature(-0.1).validate().is_err());
        let c = GenerationConfig {
            max_tokens: 0,
            ..GenerationConfig::default()
        };
        assert!(c.validate().is_err());
        let c = GenerationConfig {
            stop_sequence: String::new(),
            ..GenerationConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_digest_normalizes_temperature_and_tracks_sample() {
        let a = GenerationConfig::default().with_temperature(0.75);
        let b = GenerationConfig::default().with_temperature(0.750_000_01);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.clone().with_sample(1).digest());
    }

    #[test]
    fn invalid_config_rejected_before_backend() {
        let gw = Gateway::replay(ReplayCassette::default());
        let err = gw
            .complete(&prompt("x"), &GenerationConfig::default().with_temperature(2.0))
            .unwrap_err();
        assert!(matches!(err, GatewayError::InvalidConfig(_)));
        assert_eq!(gw.call_count(), 0);
    }

    #[test]
    fn stop_sequence_is_stripped() {
        let mut cassette = ReplayCassette::default();
        let config = GenerationConfig::default();
        let mut result = CompletionResult::fixture("body\n\"\"\"Exercise 3\nmore");
        result.finish_reason = FinishReason::Length;
        cassette.record(&prompt("p"), &config, result);
        let gw = Gateway::replay(cassette);
        let out = gw.complete(&prompt("p"), &config).unwrap();
        assert_eq!(out.text, "body\n");
        assert_eq!(out.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn empty_cassette_misses_with_digest() {
        let gw = Gateway::replay(ReplayCassette::default());
        let p = prompt("anything");
        match gw.complete(&p, &GenerationConfig::default()) {
            Err(GatewayError::CassetteMiss { prompt_digest: d, .. }) => {
                assert_eq!(d, prompt_digest(&p))
            }
            other => panic!("expected miss, got {other:?}"),
        }
        assert_eq!(gw.call_count(), 1);
    }
}
