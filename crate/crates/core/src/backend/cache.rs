//! Write-through response cache with record / replay / passthrough modes.
//!
//! The cache file is append-only JSON lines, one record per (key, result).
//! Each record carries a SHA-256 digest over its key, kind and payload text;
//! a record whose digest does not match is reported as corruption when the
//! file is opened. A torn final line (no trailing newline) is treated as an
//! interrupted write: it is ignored, and truncated away in record mode.
//!
//! Keys deliberately exclude `n_samples`: sample `i` of an `n = 3` request and
//! sample `i` of an `n = 5` request share a key, so a cache recorded with many
//! samples serves every smaller sample count.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_request, fan_out, Backend, BackendDescriptor, BackendError, CompletionResult, GenerationParams,
    TokenLogprob,
};

const KEY_DOMAIN: &str = "stancekit-cache-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Serve hits, call the live backend on misses and persist the results.
    Record,
    /// Serve only from the cache; a miss is an error.
    Replay,
    /// Bypass the cache entirely.
    Passthrough,
}

impl FromStr for CacheMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "record" => Ok(CacheMode::Record),
            "replay" => Ok(CacheMode::Replay),
            "passthrough" => Ok(CacheMode::Passthrough),
            other => Err(format!("unknown cache mode {other:?} (expected record, replay or passthrough)")),
        }
    }
}

impl fmt::Display for CacheMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CacheMode::Record => "record",
            CacheMode::Replay => "replay",
            CacheMode::Passthrough => "passthrough",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Completion,
    Logprobs,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn completion(
        backend: &BackendDescriptor,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Self {
        let mut h = KeyHasher::new(RequestKind::Completion, backend, prompt);
        h.field(&params.temperature.to_bits().to_le_bytes());
        h.field(&params.max_tokens.to_le_bytes());
        let stops = params.stop.clone().unwrap_or_default();
        h.field(&(stops.len() as u64).to_le_bytes());
        for s in &stops {
            h.field(s.as_bytes());
        }
        h.field(&[params.want_logprobs as u8]);
        match params.seed_hint {
            Some(seed) => h.field(&[&[1u8][..], &seed.to_le_bytes()[..]].concat()),
            None => h.field(&[0u8]),
        }
        h.field(&sample_index.to_le_bytes());
        h.finish()
    }

    pub fn logprobs(backend: &BackendDescriptor, prompt: &str) -> Self {
        KeyHasher::new(RequestKind::Logprobs, backend, prompt).finish()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Length-prefixed field hashing so that field boundaries cannot be forged.
struct KeyHasher(Sha256);

impl KeyHasher {
    fn new(kind: RequestKind, backend: &BackendDescriptor, prompt: &str) -> Self {
        let mut h = KeyHasher(Sha256::new());
        h.field(KEY_DOMAIN.as_bytes());
        h.field(match kind {
            RequestKind::Completion => b"completion",
            RequestKind::Logprobs => b"logprobs",
        });
        h.field(backend.backend.as_bytes());
        h.field(backend.model.as_bytes());
        h.field(prompt.as_bytes());
        h
    }

    fn field(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    fn finish(self) -> CacheKey {
        CacheKey(hex::encode(self.0.finalize()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Payload {
    Completion(CompletionResult),
    Logprobs { logprobs: Vec<TokenLogprob> },
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    key: String,
    kind: RequestKind,
    backend: String,
    model: String,
    /// Payload JSON, kept as text so the digest covers the exact stored bytes.
    payload: String,
    digest: String,
}

fn record_digest(key: &str, kind: RequestKind, backend: &str, model: &str, payload: &str) -> String {
    let mut h = Sha256::new();
    for part in [key, &format!("{kind:?}"), backend, model, payload] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub records: usize,
    pub completions: usize,
    pub logprobs: usize,
    pub duplicates: usize,
    pub torn_tail: bool,
    /// Record counts per `backend/model`.
    pub models: BTreeMap<String, usize>,
}

struct Loaded {
    entries: HashMap<String, Payload>,
    stats: CacheStats,
    /// Byte length of the intact prefix of the file.
    intact_len: u64,
}

fn load(path: &Path) -> Result<Loaded, BackendError> {
    let mut loaded = Loaded {
        entries: HashMap::new(),
        stats: CacheStats::default(),
        intact_len: 0,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(loaded),
        Err(e) => return Err(BackendError::CacheIo(format!("{}: {e}", path.display()))),
    };
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut line_no = 0usize;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| BackendError::CacheIo(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let complete = line.ends_with('\n');
        if line.trim().is_empty() {
            loaded.intact_len += n as u64;
            continue;
        }
        let parsed = parse_record(line.trim_end_matches(['\n', '\r']));
        match parsed {
            Ok((record, payload)) => {
                loaded.intact_len += n as u64;
                loaded.stats.records += 1;
                match record.kind {
                    RequestKind::Completion => loaded.stats.completions += 1,
                    RequestKind::Logprobs => loaded.stats.logprobs += 1,
                }
                *loaded
                    .stats
                    .models
                    .entry(format!("{}/{}", record.backend, record.model))
                    .or_default() += 1;
                match loaded.entries.entry(record.key) {
                    Entry::Occupied(_) => loaded.stats.duplicates += 1,
                    Entry::Vacant(slot) => {
                        slot.insert(payload);
                    }
                }
            }
            Err(_) if !complete => {
                log::warn!("{}: ignoring torn final record at line {line_no}", path.display());
                loaded.stats.torn_tail = true;
                break;
            }
            Err(why) => {
                return Err(BackendError::CacheCorrupt(format!("{}:{line_no}: {why}", path.display())));
            }
        }
    }
    Ok(loaded)
}

fn parse_record(line: &str) -> Result<(Record, Payload), String> {
    let record: Record = serde_json::from_str(line).map_err(|e| format!("unparseable record: {e}"))?;
    let expected = record_digest(&record.key, record.kind, &record.backend, &record.model, &record.payload);
    if expected != record.digest {
        return Err("digest mismatch".into());
    }
    let payload: Payload =
        serde_json::from_str(&record.payload).map_err(|e| format!("unparseable payload: {e}"))?;
    let kind_ok = matches!(
        (&payload, record.kind),
        (Payload::Completion(_), RequestKind::Completion) | (Payload::Logprobs { .. }, RequestKind::Logprobs)
    );
    if !kind_ok {
        return Err("payload does not match record kind".into());
    }
    Ok((record, payload))
}

/// Wraps a backend with the record/replay cache.
pub struct CachedBackend<B> {
    inner: B,
    mode: CacheMode,
    path: PathBuf,
    entries: RwLock<HashMap<String, Payload>>,
    writer: Mutex<Option<File>>,
    hits: AtomicUsize,
    live_calls: AtomicUsize,
}

impl<B: Backend> CachedBackend<B> {
    pub fn open(inner: B, path: impl Into<PathBuf>, mode: CacheMode) -> Result<Self, BackendError> {
        let path = path.into();
        let (entries, writer) = match mode {
            CacheMode::Passthrough => (HashMap::new(), None),
            CacheMode::Replay => (load(&path)?.entries, None),
            CacheMode::Record => {
                let loaded = load(&path)?;
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir).map_err(|e| BackendError::CacheIo(format!("{}: {e}", dir.display())))?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| BackendError::CacheIo(format!("{}: {e}", path.display())))?;
                if loaded.stats.torn_tail {
                    file.set_len(loaded.intact_len)
                        .map_err(|e| BackendError::CacheIo(format!("{}: {e}", path.display())))?;
                }
                (loaded.entries, Some(file))
            }
        };
        Ok(Self {
            inner,
            mode,
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(writer),
            hits: AtomicUsize::new(0),
            live_calls: AtomicUsize::new(0),
        })
    }

    /// Reads and verifies a cache file without opening it for use.
    pub fn inspect(path: &Path) -> Result<CacheStats, BackendError> {
        Ok(load(path)?.stats)
    }

    pub fn mode(&self) -> CacheMode {
        self.mode
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Requests forwarded to the wrapped backend.
    pub fn live_calls(&self) -> usize {
        self.live_calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn lookup(&self, key: &CacheKey) -> Option<Payload> {
        let hit = self
            .entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(key.as_str())
            .cloned();
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        hit
    }

    /// Inserts unless another writer got there first; returns the stored payload.
    fn store(&self, key: &CacheKey, kind: RequestKind, payload: Payload) -> Result<Payload, BackendError> {
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = entries.get(key.as_str()) {
            return Ok(existing.clone());
        }
        let payload_text =
            serde_json::to_string(&payload).map_err(|e| BackendError::CacheIo(format!("serialize: {e}")))?;
        let d = self.inner.descriptor();
        let record = Record {
            key: key.as_str().to_string(),
            kind,
            digest: record_digest(key.as_str(), kind, &d.backend, &d.model, &payload_text),
            backend: d.backend,
            model: d.model,
            payload: payload_text,
        };
        let mut line = serde_json::to_string(&record).map_err(|e| BackendError::CacheIo(format!("serialize: {e}")))?;
        line.push('\n');
        {
            let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(file) = writer.as_mut() {
                file.write_all(line.as_bytes())
                    .and_then(|_| file.flush())
                    .map_err(|e| BackendError::CacheIo(format!("{}: {e}", self.path.display())))?;
            }
        }
        entries.insert(key.as_str().to_string(), payload.clone());
        Ok(payload)
    }

    fn store_completion(&self, key: &CacheKey, result: CompletionResult) -> Result<CompletionResult, BackendError> {
        let index = result.sample_index;
        match self.store(key, RequestKind::Completion, Payload::Completion(result))? {
            Payload::Completion(mut r) => {
                r.sample_index = index;
                Ok(r)
            }
            Payload::Logprobs { .. } => Err(BackendError::CacheCorrupt(format!("key {key} holds log-probabilities"))),
        }
    }

    fn as_completion(key: &CacheKey, payload: Payload, sample_index: u32) -> Result<CompletionResult, BackendError> {
        match payload {
            Payload::Completion(mut r) => {
                r.sample_index = sample_index;
                Ok(r)
            }
            Payload::Logprobs { .. } => Err(BackendError::CacheCorrupt(format!("key {key} holds log-probabilities"))),
        }
    }

    fn live_one(
        &self,
        key: &CacheKey,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<CompletionResult, BackendError> {
        self.live_calls.fetch_add(1, Ordering::SeqCst);
        let result = self.inner.complete_one(prompt, params, sample_index)?;
        self.store_completion(key, result)
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn descriptor(&self) -> BackendDescriptor {
        self.inner.descriptor()
    }

    fn complete_one(
        &self,
        prompt: &str,
        params: &GenerationParams,
        sample_index: u32,
    ) -> Result<CompletionResult, BackendError> {
        if self.mode == CacheMode::Passthrough {
            self.live_calls.fetch_add(1, Ordering::SeqCst);
            return self.inner.complete_one(prompt, params, sample_index);
        }
        check_request(prompt, params)?;
        let key = CacheKey::completion(&self.inner.descriptor(), prompt, params, sample_index);
        match (self.lookup(&key), self.mode) {
            (Some(p), _) => Self::as_completion(&key, p, sample_index),
            (None, CacheMode::Replay) => Err(BackendError::CacheMiss(key.to_string())),
            (None, _) => self.live_one(&key, prompt, params, sample_index),
        }
    }

    fn complete_many(
        &self,
        prompt: &str,
        params: &GenerationParams,
    ) -> Vec<Result<CompletionResult, BackendError>> {
        if self.mode == CacheMode::Passthrough {
            self.live_calls.fetch_add(params.n_samples as usize, Ordering::SeqCst);
            return self.inner.complete_many(prompt, params);
        }
        if let Err(e) = check_request(prompt, params) {
            return vec![Err(e); params.n_samples.max(1) as usize];
        }
        let descriptor = self.inner.descriptor();
        let keys: Vec<CacheKey> = (0..params.n_samples)
            .map(|i| CacheKey::completion(&descriptor, prompt, params, i))
            .collect();
        let cached: Vec<Option<Payload>> = keys.iter().map(|k| self.lookup(k)).collect();
        let missing = cached.iter().filter(|c| c.is_none()).count();

        if self.mode == CacheMode::Record && missing == keys.len() {
            // Nothing cached yet: let the inner backend batch the request.
            self.live_calls.fetch_add(keys.len(), Ordering::SeqCst);
            return self
                .inner
                .complete_many(prompt, params)
                .into_iter()
                .zip(&keys)
                .enumerate()
                .map(|(i, (r, key))| {
                    r.and_then(|mut r| {
                        r.sample_index = i as u32;
                        self.store_completion(key, r)
                    })
                })
                .collect();
        }

        let cached = Mutex::new(cached.into_iter().map(Some).collect::<Vec<_>>());
        fan_out(keys.len(), self.inner.max_in_flight(), |i| {
            let slot = cached.lock().unwrap_or_else(|e| e.into_inner())[i].take().flatten();
            let key = &keys[i];
            match slot {
                Some(p) => Self::as_completion(key, p, i as u32),
                None if self.mode == CacheMode::Replay => Err(BackendError::CacheMiss(key.to_string())),
                None => self.live_one(key, prompt, params, i as u32),
            }
        })
    }

    fn teacher_forced_logprobs(&self, prompt: &str) -> Result<Vec<TokenLogprob>, BackendError> {
        if self.mode == CacheMode::Passthrough {
            self.live_calls.fetch_add(1, Ordering::SeqCst);
            return self.inner.teacher_forced_logprobs(prompt);
        }
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        let key = CacheKey::logprobs(&self.inner.descriptor(), prompt);
        let payload = match (self.lookup(&key), self.mode) {
            (Some(p), _) => p,
            (None, CacheMode::Replay) => return Err(BackendError::CacheMiss(key.to_string())),
            (None, _) => {
                self.live_calls.fetch_add(1, Ordering::SeqCst);
                let logprobs = self.inner.teacher_forced_logprobs(prompt)?;
                self.store(&key, RequestKind::Logprobs, Payload::Logprobs { logprobs })?
            }
        };
        match payload {
            Payload::Logprobs { logprobs } => Ok(logprobs),
            Payload::Completion(_) => Err(BackendError::CacheCorrupt(format!("key {key} holds a completion"))),
        }
    }

    fn max_in_flight(&self) -> usize {
        self.inner.max_in_flight()
    }
}
