//! TOML configuration shared by the CLI and the service.
//!
//! ```toml
//! store = "exforge-store"
//! budget = 5
//!
//! [backend]
//! kind = "replay"            # replay | remote | record
//! cassette = "fixtures.jsonl"
//! max_in_flight = 4
//!
//! [backend.remote]
//! endpoint = "https://api.openai.com/v1/completions"
//! timeout = 120.0
//!
//! [generation]
//! model_id = "code-davinci-001"
//! max_tokens = 1024
//!
//! [limits]
//! wall_clock_timeout = 10.0
//!
//! [server]
//! port = 8080
//! assets = "ui/dist"
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use exforge_core::gateway::{RemoteSettings, DEFAULT_MAX_IN_FLIGHT, DEFAULT_MAX_TOKENS};
use exforge_core::sandbox::{ExecLimits, SandboxSettings};
use exforge_core::rubric::DEFAULT_BUDGET;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Serve completions from a cassette; no network.
    #[default]
    Replay,
    /// Call the remote completion API.
    Remote,
    /// Call the remote API and append every result to the cassette.
    Record,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "replay" => Ok(Self::Replay),
            "remote" => Ok(Self::Remote),
            "record" => Ok(Self::Record),
            other => Err(format!("unknown backend `{other}` (expected replay, remote or record)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Cassette file; defaults to `cassettes/default.jsonl` in the store.
    pub cassette: Option<PathBuf>,
    pub max_in_flight: usize,
    pub remote: RemoteSettings,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Replay,
            cassette: None,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            remote: RemoteSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationDefaults {
    pub model_id: String,
    pub max_tokens: u32,
}

impl Default for GenerationDefaults {
    fn default() -> Self {
        Self {
            model_id: "code-davinci-001".into(),
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    /// Directory of built workbench assets served at `/`.
    pub assets: Option<PathBuf>,
    /// Shared bearer token; requests without it get 401 when set.
    pub token: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            assets: None,
            token: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store: PathBuf,
    /// Extra prime files (`<id>.txt`) merged over the built-in ones.
    pub primes_dir: Option<PathBuf>,
    /// Attempt budget for the regenerate and backfill loops.
    pub budget: u32,
    pub backend: BackendConfig,
    pub generation: GenerationDefaults,
    pub limits: ExecLimits,
    pub sandbox: SandboxSettings,
    pub server: ServerConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            store: PathBuf::from("exforge-store"),
            primes_dir: None,
            budget: DEFAULT_BUDGET,
            backend: BackendConfig::default(),
            generation: GenerationDefaults::default(),
            limits: ExecLimits::default(),
            sandbox: SandboxSettings::default(),
            server: ServerConfig::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}
