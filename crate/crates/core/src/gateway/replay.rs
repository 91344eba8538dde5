use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{prompt_digest, CompletionBackend, CompletionResult, GatewayError, GenerationConfig};
use crate::prompt::PromptText;

/// One recorded completion, keyed by prompt and config digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub prompt_digest: String,
    pub config_digest: String,
    pub result: CompletionResult,
}

/// Ordered recorded completions. A key appears at most once.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayCassette {
    pub entries: Vec<CassetteEntry>,
}

impl ReplayCassette {
    pub fn lookup(&self, prompt: &PromptText, config: &GenerationConfig) -> Option<&CompletionResult> {
        self.lookup_digests(&prompt_digest(prompt), &config.digest())
    }

    pub fn lookup_digests(&self, prompt_digest: &str, config_digest: &str) -> Option<&CompletionResult> {
        self.entries
            .iter()
            .find(|e| e.prompt_digest == prompt_digest && e.config_digest == config_digest)
            .map(|e| &e.result)
    }

    /// Adds an entry, replacing an existing one with the same key in place.
    /// Returns true when an entry was replaced.
    pub fn record(
        &mut self,
        prompt: &PromptText,
        config: &GenerationConfig,
        result: CompletionResult,
    ) -> bool {
        // the gateway keys on the prompt's own stop sequence
        let config = GenerationConfig {
            stop_sequence: prompt.stop_sequence.clone(),
            ..config.clone()
        };
        let entry = CassetteEntry {
            prompt_digest: prompt_digest(prompt),
            config_digest: config.digest(),
            result,
        };
        self.insert(entry)
    }

    fn insert(&mut self, entry: CassetteEntry) -> bool {
        match self.entries.iter_mut().find(|e| {
            e.prompt_digest == entry.prompt_digest && e.config_digest == entry.config_digest
        }) {
            Some(slot) => {
                *slot = entry;
                true
            }
            None => {
                self.entries.push(entry);
                false
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses JSON-lines text; later duplicates of a key replace earlier ones.
    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut cassette = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::Storage(format!("line {}: {e}", n + 1)))?;
            cassette.insert(entry);
        }
        Ok(cassette)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// A cassette shared between threads, optionally backed by a JSON-lines file.
///
/// Reads are concurrent; writes are serialized. New keys are appended to the
/// file; replacing a key rewrites the file through a temp file and rename.
#[derive(Debug)]
pub struct CassetteStore {
    path: Option<PathBuf>,
    cassette: RwLock<ReplayCassette>,
    write: Mutex<()>,
}

impl CassetteStore {
    pub fn in_memory(cassette: ReplayCassette) -> Self {
        Self {
            path: None,
            cassette: RwLock::new(cassette),
            write: Mutex::new(()),
        }
    }

    /// Opens a cassette file, treating a missing file as empty.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let cassette = match fs::read_to_string(&path) {
            Ok(text) => ReplayCassette::from_jsonl(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => ReplayCassette::default(),
            Err(e) => return Err(storage(&path, e)),
        };
        Ok(Self {
            path: Some(path),
            cassette: RwLock::new(cassette),
            write: Mutex::new(()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn lookup(&self, prompt: &PromptText, config: &GenerationConfig) -> Option<CompletionResult> {
        self.read().lookup(prompt, config).cloned()
    }

    pub fn snapshot(&self) -> ReplayCassette {
        self.read().clone()
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().is_empty()
    }

    pub fn record(
        &self,
        prompt: &PromptText,
        config: &GenerationConfig,
        result: CompletionResult,
    ) -> Result<(), GatewayError> {
        let _guard = self.write.lock().unwrap_or_else(|e| e.into_inner());
        let mut next = self.snapshot();
        let replaced = next.record(prompt, config, result);
        if let Some(path) = &self.path {
            if replaced {
                rewrite(path, &next)?;
            } else {
                append(path, next.entries.last().expect("just pushed"))?;
            }
        }
        *self.cassette.write().unwrap_or_else(|e| e.into_inner()) = next;
        Ok(())
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, ReplayCassette> {
        self.cassette.read().unwrap_or_else(|e| e.into_inner())
    }
}

fn storage(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Storage(format!("{}: {e}", path.display()))
}

fn append(path: &Path, entry: &CassetteEntry) -> Result<(), GatewayError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| storage(parent, e))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| storage(path, e))?;
    let mut line = serde_json::to_string(entry).expect("entry serializes");
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| storage(path, e))?;
    file.sync_data().map_err(|e| storage(path, e))
}

fn rewrite(path: &Path, cassette: &ReplayCassette) -> Result<(), GatewayError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| storage(dir, e))?;
    tmp.write_all(cassette.to_jsonl().as_bytes())
        .map_err(|e| storage(path, e))?;
    tmp.as_file().sync_data().map_err(|e| storage(path, e))?;
    tmp.persist(path).map_err(|e| storage(path, e))?;
    Ok(())
}

/// Counts the entries of a cassette file without loading it into a store.
pub fn count_file_entries(path: &Path) -> Result<usize, GatewayError> {
    let file = fs::File::open(path).map_err(|e| storage(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .map_while(Result::ok)
        .filter(|l| !l.trim().is_empty())
        .count())
}

/// Serves completions from a cassette; a missing key is an error.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    cassette: Arc<CassetteStore>,
}

impl ReplayBackend {
    pub fn new(cassette: Arc<CassetteStore>) -> Self {
        Self { cassette }
    }

    pub fn cassette(&self) -> &Arc<CassetteStore> {
        &self.cassette
    }
}

impl CompletionBackend for ReplayBackend {
    fn backend_id(&self) -> String {
        "replay".into()
    }

    fn complete(
        &self,
        prompt: &PromptText,
        config: &GenerationConfig,
    ) -> Result<CompletionResult, GatewayError> {
        self.cassette
            .lookup(prompt, config)
            .ok_or_else(|| GatewayError::CassetteMiss {
                prompt_digest: prompt_digest(prompt),
                config_digest: config.digest(),
            })
    }
}

/// Forwards to a live backend and records every result.
pub struct RecordingBackend {
    live: Arc<dyn CompletionBackend>,
    cassette: Arc<CassetteStore>,
}

impl RecordingBackend {
    pub fn new(live: Arc<dyn CompletionBackend>, cassette: Arc<CassetteStore>) -> Self {
        Self { live, cassette }
    }
}

impl CompletionBackend for RecordingBackend {
    fn backend_id(&self) -> String {
        format!("record:{}", self.live.backend_id())
    }

    fn complete(
        &self,
        prompt: &PromptText,
        config: &GenerationConfig,
    ) -> Result<CompletionResult, GatewayError> {
        let mut result = self.live.complete(prompt, config)?;
        if let Some(at) = result.text.find(&config.stop_sequence) {
            result.text.truncate(at);
            result.finish_reason = super::FinishReason::Stop;
        }
        self.cassette.record(prompt, config, result.clone())?;
        Ok(result)
    }
}
