//! Sentence embedding backends.
//!
//! Every backend maps raw sentences to pooled, fixed-dimension vectors.
//! Three are provided:
//!
//! * [`StubBackend`]: hashed bag-of-words mean, deterministic, for tests.
//! * [`CacheBackend`]: lookups in a JSONL file of precomputed vectors.
//! * [`RemoteBackend`]: an HTTP embedding service (`POST /embed`, `GET /health`).
//!
//! Callers go through [`embed_batch`], which enforces the shared contract
//! (nonempty input, one vector per sentence, consistent dimension).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, normalize, CorpusError};
use crate::hash::stable_hash64;

pub const DEFAULT_DIM: usize = 768;

/// Overrides the remote backend's per-request timeout, in seconds.
pub const HTTP_TIMEOUT_ENV: &str = "SEMDIST_HTTP_TIMEOUT_SECS";

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("sentence {index} is empty")]
    EmptySentence { index: usize },
    #[error("embedding has a non-finite component")]
    NonFinite,
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding dimension {found} does not match expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("backend returned {found} vectors for {expected} sentences")]
    CountMismatch { expected: usize, found: usize },
    #[error("sentence not in cache: {text:?}")]
    CacheMiss { text: String },
    #[error("cache: {0}")]
    Cache(#[from] CorpusError),
    #[error("{url}: {message} (after {attempts} attempt(s){})", status.map(|s| format!(", last status {s}")).unwrap_or_default())]
    Transport {
        url: String,
        attempts: u32,
        status: Option<u16>,
        message: String,
    },
    #[error("{url}: malformed response: {message}")]
    Protocol { url: String, message: String },
    #[error("invalid backend specification {0:?}")]
    InvalidSpec(String),
}

impl EmbedError {
    /// True for failures of the embedding service or the network, as opposed
    /// to bad input or contract violations.
    pub fn is_transport(&self) -> bool {
        matches!(self, EmbedError::Transport { .. } | EmbedError::Protocol { .. })
    }
}

/// A pooled sentence vector. Components are finite and the norm is nonzero.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SentenceEmbedding {
    values: Vec<f64>,
}

impl SentenceEmbedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(EmbedError::ZeroNorm);
        }
        Ok(SentenceEmbedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbedError> {
        SentenceEmbedding::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl<'de> Deserialize<'de> for SentenceEmbedding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        SentenceEmbedding::new(values).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Stub,
    Cache,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub dim: usize,
    /// Model name, stub parameters, or cache path.
    pub identity: String,
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.identity)
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Embeds sentences without contract checks. Use [`embed_batch`].
    fn embed_unchecked(&self, sentences: &[&str]) -> Result<Vec<SentenceEmbedding>, EmbedError>;
}

/// One embedding per sentence, in input order.
pub fn embed_batch(
    backend: &dyn EmbeddingBackend,
    sentences: &[&str],
) -> Result<Vec<SentenceEmbedding>, EmbedError> {
    if let Some(index) = sentences.iter().position(|s| s.trim().is_empty()) {
        return Err(EmbedError::EmptySentence { index });
    }
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let out = backend.embed_unchecked(sentences)?;
    if out.len() != sentences.len() {
        return Err(EmbedError::CountMismatch {
            expected: sentences.len(),
            found: out.len(),
        });
    }
    let expected = backend.descriptor().dim;
    if let Some(bad) = out.iter().find(|e| e.dim() != expected) {
        return Err(EmbedError::DimMismatch {
            expected,
            found: bad.dim(),
        });
    }
    Ok(out)
}

/// Parses `stub:seed=N,dim=D`, `cache:PATH`, or `http://HOST[:PORT]`
/// (optionally prefixed with `http:`).
pub fn open_backend(spec: &str) -> Result<Box<dyn EmbeddingBackend>, EmbedError> {
    if let Some(params) = spec.strip_prefix("stub") {
        let params = params.strip_prefix(':').unwrap_or(params);
        let mut seed = 0u64;
        let mut dim = DEFAULT_DIM;
        for kv in params.split(',').filter(|s| !s.is_empty()) {
            let (key, value) = kv
                .split_once('=')
                .ok_or_else(|| EmbedError::InvalidSpec(spec.to_owned()))?;
            let bad = |_| EmbedError::InvalidSpec(spec.to_owned());
            match key.trim() {
                "seed" => seed = value.trim().parse().map_err(bad)?,
                "dim" => dim = value.trim().parse().map_err(bad)?,
                _ => return Err(EmbedError::InvalidSpec(spec.to_owned())),
            }
        }
        if dim == 0 {
            return Err(EmbedError::InvalidSpec(spec.to_owned()));
        }
        return Ok(Box::new(StubBackend::new(seed, dim)));
    }
    if let Some(path) = spec.strip_prefix("cache:") {
        return Ok(Box::new(CacheBackend::open(Path::new(path))?));
    }
    let url = if spec.starts_with("http://") || spec.starts_with("https://") {
        spec.to_owned()
    } else if let Some(rest) = spec.strip_prefix("http:").filter(|r| !r.is_empty()) {
        if rest.starts_with("http://") || rest.starts_with("https://") {
            rest.to_owned()
        } else {
            format!("http://{rest}")
        }
    } else {
        return Err(EmbedError::InvalidSpec(spec.to_owned()));
    };
    Ok(Box::new(RemoteBackend::connect(&url, RemoteConfig::from_env())?))
}

/// Deterministic unit vector for a token.
///
/// A ChaCha8 generator seeded from a stable hash of `(seed, token)` draws
/// `dim` standard normals, which are then scaled to unit length.
pub fn stub_token_vector(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(&[&seed.to_le_bytes(), token.as_bytes()]));
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Bag-of-words stand-in for a contextual encoder: the mean of the
/// normalized tokens' [`stub_token_vector`]s. Word order is ignored.
#[derive(Debug, Clone)]
pub struct StubBackend {
    seed: u64,
    descriptor: BackendDescriptor,
}

impl StubBackend {
    pub fn new(seed: u64, dim: usize) -> Self {
        StubBackend {
            seed,
            descriptor: BackendDescriptor {
                kind: BackendKind::Stub,
                dim,
                identity: format!("stub:seed={seed},dim={dim}"),
            },
        }
    }

    fn embed_one(&self, sentence: &str) -> Result<SentenceEmbedding, EmbedError> {
        let tokens = normalize(sentence);
        let dim = self.descriptor.dim;
        let mut sum = vec![0.0; dim];
        for token in tokens.tokens() {
            for (acc, x) in sum.iter_mut().zip(stub_token_vector(token, self.seed, dim)) {
                *acc += x;
            }
        }
        let n = tokens.len() as f64;
        SentenceEmbedding::new(sum.into_iter().map(|x| x / n).collect())
    }
}

impl EmbeddingBackend for StubBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_unchecked(&self, sentences: &[&str]) -> Result<Vec<SentenceEmbedding>, EmbedError> {
        sentences.par_iter().map(|s| self.embed_one(s)).collect()
    }
}

/// Precomputed embeddings keyed by exact raw sentence text.
pub type EmbeddingCache = BTreeMap<String, SentenceEmbedding>;

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    text: String,
    vector: SentenceEmbedding,
}

fn check_cache_dims<'a>(entries: impl Iterator<Item = &'a SentenceEmbedding>) -> Result<Option<usize>, EmbedError> {
    let mut dim = None;
    for e in entries {
        match dim {
            None => dim = Some(e.dim()),
            Some(d) if d != e.dim() => {
                return Err(EmbedError::DimMismatch {
                    expected: d,
                    found: e.dim(),
                })
            }
            _ => {}
        }
    }
    Ok(dim)
}

/// Writes entries sorted by text, one `{"text", "vector"}` object per line.
pub fn write_cache(path: &Path, entries: &EmbeddingCache) -> Result<(), EmbedError> {
    check_cache_dims(entries.values())?;
    let records: Vec<CacheRecord> = entries
        .iter()
        .map(|(text, vector)| CacheRecord {
            text: text.clone(),
            vector: vector.clone(),
        })
        .collect();
    Ok(corpus::write_jsonl(path, &records)?)
}

/// Embeds each distinct text once, producing entries for [`write_cache`].
pub fn build_cache<'a, I>(backend: &dyn EmbeddingBackend, texts: I) -> Result<EmbeddingCache, EmbedError>
where
    I: IntoIterator<Item = &'a str>,
{
    let distinct: BTreeSet<&str> = texts.into_iter().collect();
    let texts: Vec<&str> = distinct.into_iter().collect();
    let vectors = embed_batch(backend, &texts)?;
    Ok(texts.into_iter().map(str::to_owned).zip(vectors).collect())
}

pub fn read_cache(path: &Path) -> Result<EmbeddingCache, EmbedError> {
    let records: Vec<CacheRecord> = corpus::read_jsonl(path)?;
    check_cache_dims(records.iter().map(|r| &r.vector))?;
    Ok(records.into_iter().map(|r| (r.text, r.vector)).collect())
}

#[derive(Debug, Clone)]
pub struct CacheBackend {
    entries: HashMap<String, SentenceEmbedding>,
    descriptor: BackendDescriptor,
}

impl CacheBackend {
    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let entries = read_cache(path)?;
        Ok(Self::from_entries(path.to_owned(), entries))
    }

    pub fn from_entries(path: PathBuf, entries: EmbeddingCache) -> Self {
        let dim = entries.values().next().map_or(0, SentenceEmbedding::dim);
        CacheBackend {
            entries: entries.into_iter().collect(),
            descriptor: BackendDescriptor {
                kind: BackendKind::Cache,
                dim,
                identity: format!("cache:{}", path.display()),
            },
        }
    }
}

impl EmbeddingBackend for CacheBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_unchecked(&self, sentences: &[&str]) -> Result<Vec<SentenceEmbedding>, EmbedError> {
        sentences
            .iter()
            .map(|s| {
                self.entries
                    .get(*s)
                    .cloned()
                    .ok_or_else(|| EmbedError::CacheMiss { text: (*s).to_owned() })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub timeout: Duration,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub retry_backoff: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            timeout: Duration::from_secs(30),
            batch_size: 32,
            max_in_flight: 4,
            max_attempts: 3,
            retry_backoff: Duration::from_millis(250),
        }
    }
}

impl RemoteConfig {
    /// Default configuration with the timeout taken from
    /// [`HTTP_TIMEOUT_ENV`] when set.
    pub fn from_env() -> Self {
        let mut config = RemoteConfig::default();
        if let Some(secs) = std::env::var(HTTP_TIMEOUT_ENV).ok().and_then(|v| v.parse::<f64>().ok()) {
            if secs > 0.0 {
                config.timeout = Duration::from_secs_f64(secs);
            }
        }
        config
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub model: String,
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
    pub dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    config: RemoteConfig,
    descriptor: BackendDescriptor,
}

impl RemoteBackend {
    /// Queries `GET /health` for the served model and dimension.
    pub fn connect(base_url: &str, config: RemoteConfig) -> Result<Self, EmbedError> {
        let base_url = base_url.trim_end_matches('/').to_owned();
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let url = format!("{base_url}/health");
        let health: HealthResponse = with_retries(&url, &config, || agent.get(&url).call())?;
        if health.status != "ok" || health.dim == 0 {
            return Err(EmbedError::Protocol {
                url,
                message: format!("unhealthy service: status {:?}, dim {}", health.status, health.dim),
            });
        }
        Ok(RemoteBackend {
            descriptor: BackendDescriptor {
                kind: BackendKind::Remote,
                dim: health.dim,
                identity: health.model,
            },
            base_url,
            agent,
            config,
        })
    }

    fn embed_chunk(&self, texts: &[&str]) -> Result<Vec<SentenceEmbedding>, EmbedError> {
        let url = format!("{}/embed", self.base_url);
        let body = EmbedRequest {
            texts: texts.iter().map(|s| (*s).to_owned()).collect(),
        };
        let resp: EmbedResponse = with_retries(&url, &self.config, || self.agent.post(&url).send_json(&body))?;
        let protocol = |message: String| EmbedError::Protocol {
            url: url.clone(),
            message,
        };
        if resp.dim != self.descriptor.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.descriptor.dim,
                found: resp.dim,
            });
        }
        if resp.model != self.descriptor.identity {
            return Err(protocol(format!(
                "model changed from {:?} to {:?}",
                self.descriptor.identity, resp.model
            )));
        }
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::CountMismatch {
                expected: texts.len(),
                found: resp.vectors.len(),
            });
        }
        resp.vectors
            .into_iter()
            .map(|v| SentenceEmbedding::new(v.into_iter().map(f64::from).collect()))
            .collect()
    }
}

fn with_retries<T, F>(url: &str, config: &RemoteConfig, mut call: F) -> Result<T, EmbedError>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut() -> Result<ureq::Response, ureq::Error>,
{
    let max_attempts = config.max_attempts.max(1);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let (status, message, retryable) = match call() {
            Ok(resp) => {
                return resp.into_json::<T>().map_err(|e| EmbedError::Protocol {
                    url: url.to_owned(),
                    message: e.to_string(),
                })
            }
            Err(ureq::Error::Status(code, resp)) => {
                let message = resp
                    .into_json::<ErrorResponse>()
                    .map(|e| e.error)
                    .unwrap_or_else(|_| format!("HTTP {code}"));
                (Some(code), message, code == 503 || code == 429)
            }
            Err(ureq::Error::Transport(t)) => (None, t.to_string(), true),
        };
        if !retryable || attempts >= max_attempts {
            return Err(EmbedError::Transport {
                url: url.to_owned(),
                attempts,
                status,
                message,
            });
        }
        std::thread::sleep(config.retry_backoff * attempts);
    }
}

impl EmbeddingBackend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_unchecked(&self, sentences: &[&str]) -> Result<Vec<SentenceEmbedding>, EmbedError> {
        let chunks: Vec<&[&str]> = sentences.chunks(self.config.batch_size.max(1)).collect();
        let mut out = Vec::with_capacity(sentences.len());
        for wave in chunks.chunks(self.config.max_in_flight.max(1)) {
            let results: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| scope.spawn(move || self.embed_chunk(chunk)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding request thread panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}
