//! Corpus data model, text normalization, and JSONL persistence.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"id": "u1", "reference": "this is a cat", "hypothesis": "this is the cat"}
//! ```
//!
//! `hypothesis` is optional. Any other fields (`frame`, `entities`, ...) are
//! carried through load/save untouched.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),
    #[error("utterance {0:?} has an empty id")]
    EmptyId(String),
    #[error("utterance {0:?} has an empty reference after normalization")]
    EmptyReference(String),
    #[error("utterance {0:?} has no hypothesis")]
    MissingHypothesis(String),
    #[error("utterance {0:?} not found in {1}")]
    UnknownId(String, String),
}

/// A whitespace-tokenized, case-folded sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedSentence {
    tokens: Vec<String>,
    source: String,
}

impl NormalizedSentence {
    /// Builds a sentence directly from tokens. Each token is normalized and
    /// split again, so the result always satisfies the tokenization rules.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let joined = tokens
            .iter()
            .map(|t| t.as_ref())
            .collect::<Vec<_>>()
            .join(" ");
        normalize(&joined)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined with single spaces.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

impl fmt::Display for NormalizedSentence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

/// Canonical composition, lowercase, whitespace split. Punctuation stays
/// attached to its token.
pub fn normalize(text: &str) -> NormalizedSentence {
    // Lowercasing can decompose some characters, so recompose afterwards.
    let folded: String = text.nfc().collect::<String>().to_lowercase().nfc().collect();
    NormalizedSentence {
        tokens: folded.split_whitespace().map(str::to_owned).collect(),
        source: text.to_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Open,
    Assistant,
    #[default]
    Other,
}

/// One reference transcription and (optionally) one hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePair {
    pub id: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    /// Extension fields preserved opaquely (`frame`, `entities`, ...).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl UtterancePair {
    pub fn new(id: impl Into<String>, reference: impl Into<String>, hypothesis: Option<String>) -> Self {
        UtterancePair {
            id: id.into(),
            reference: reference.into(),
            hypothesis,
            extra: serde_json::Map::new(),
        }
    }

    pub fn hypothesis_text(&self) -> Result<&str, CorpusError> {
        self.hypothesis
            .as_deref()
            .ok_or_else(|| CorpusError::MissingHypothesis(self.id.clone()))
    }

    pub fn normalized_reference(&self) -> NormalizedSentence {
        normalize(&self.reference)
    }

    pub fn normalized_hypothesis(&self) -> Result<NormalizedSentence, CorpusError> {
        self.hypothesis_text().map(normalize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub domain: DomainTag,
    pairs: Vec<UtterancePair>,
}

impl Corpus {
    /// Validates ids and references.
    pub fn new(name: impl Into<String>, pairs: Vec<UtterancePair>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for pair in &pairs {
            validate_pair(pair)?;
            if !seen.insert(pair.id.as_str()) {
                return Err(CorpusError::DuplicateId(pair.id.clone()));
            }
        }
        Ok(Corpus {
            name: name.into(),
            domain: DomainTag::Other,
            pairs,
        })
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    pub fn pairs(&self) -> &[UtterancePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtterancePair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    /// Same ids and references, hypotheses replaced in corpus order.
    pub fn with_hypotheses<I>(&self, name: impl Into<String>, hypotheses: I) -> Self
    where
        I: IntoIterator<Item = String>,
    {
        let pairs = self
            .pairs
            .iter()
            .zip(hypotheses)
            .map(|(p, h)| UtterancePair {
                hypothesis: Some(h),
                ..p.clone()
            })
            .collect();
        Corpus {
            name: name.into(),
            domain: self.domain,
            pairs,
        }
    }

    /// Takes hypotheses from `other`, matched by id. Every id of `self` must
    /// be present in `other`.
    pub fn join_hypotheses(&self, other: &Corpus) -> Result<Corpus, CorpusError> {
        let by_id: std::collections::HashMap<&str, &UtterancePair> =
            other.pairs.iter().map(|p| (p.id.as_str(), p)).collect();
        let mut hyps = Vec::with_capacity(self.len());
        for pair in &self.pairs {
            let found = by_id
                .get(pair.id.as_str())
                .ok_or_else(|| CorpusError::UnknownId(pair.id.clone(), other.name.clone()))?;
            hyps.push(found.hypothesis_text()?.to_owned());
        }
        Ok(self.with_hypotheses(other.name.clone(), hyps))
    }
}

fn validate_pair(pair: &UtterancePair) -> Result<(), CorpusError> {
    if pair.id.is_empty() {
        return Err(CorpusError::EmptyId(pair.reference.clone()));
    }
    if normalize(&pair.reference).is_empty() {
        return Err(CorpusError::EmptyReference(pair.id.clone()));
    }
    Ok(())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Reads a JSONL file of arbitrary records, skipping blank lines. Errors
/// carry the 1-based line number.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for record in records {
        // Serializing plain data structures cannot fail.
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads a corpus; its name is the file stem.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let pairs: Vec<UtterancePair> = read_jsonl(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, pairs)
}

pub fn save_hypotheses(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    write_jsonl(path, corpus.pairs())
}
