//! Cosine semantic distance between reference and hypothesis embeddings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError};
use crate::embedding::{embed_batch, BackendDescriptor, EmbedError, EmbeddingBackend, SentenceEmbedding};

#[derive(Debug, Error)]
pub enum SemDistError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("utterance {id:?}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl SemDistError {
    pub fn embed_error(&self) -> Option<&EmbedError> {
        match self {
            SemDistError::Utterance { source, .. } | SemDistError::Embed(source) => Some(source),
            _ => None,
        }
    }
}

/// `1 - cos(e_ref, e_hyp)`, in `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SemDistScore(f64);

impl SemDistScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

const PAIRWISE_MIN_DIM: usize = 256;
const PAIRWISE_BLOCK: usize = 32;

fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() >= PAIRWISE_MIN_DIM {
        let products: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
        pairwise_sum(&products)
    } else {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// Cosine distance between two embeddings.
///
/// Symmetric and invariant to positive scaling of either argument. The
/// cosine is clipped to `[-1, 1]` to absorb rounding; the distance itself is
/// never clipped to `[0, 1]`.
pub fn semdist(e_ref: &SentenceEmbedding, e_hyp: &SentenceEmbedding) -> Result<SemDistScore, SemDistError> {
    if e_ref.dim() != e_hyp.dim() {
        return Err(SemDistError::DimMismatch(e_ref.dim(), e_hyp.dim()));
    }
    let (a, b) = (e_ref.values(), e_hyp.values());
    let ab = dot(a, b);
    let aa = dot(a, a);
    let bb = dot(b, b);
    // sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): exact for a == b.
    let denom = if aa.is_finite() && bb.is_finite() && (aa * bb).is_normal() {
        (aa * bb).sqrt()
    } else {
        aa.sqrt() * bb.sqrt()
    };
    let cos = (ab / denom).clamp(-1.0, 1.0);
    Ok(SemDistScore(1.0 - cos))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub semdist: SemDistScore,
}

#[derive(Debug, Clone)]
pub struct CorpusScores {
    pub scores: Vec<ScoreRecord>,
    /// Unweighted mean over utterances.
    pub mean: f64,
    pub backend: BackendDescriptor,
}

/// Sequential mean in input order, so the result does not depend on how the
/// scores were computed.
pub fn mean_score(scores: &[ScoreRecord]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.semdist.value()).sum::<f64>() / scores.len() as f64
}

/// Scores every pair of a corpus. Raw (unnormalized) text is sent to the
/// backend; each distinct sentence is embedded once.
pub fn score_corpus(corpus: &Corpus, backend: &dyn EmbeddingBackend) -> Result<CorpusScores, SemDistError> {
    let mut texts: Vec<&str> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut owner: Vec<&str> = Vec::new();
    let mut pairs = Vec::with_capacity(corpus.len());
    for pair in corpus.pairs() {
        let hyp = pair.hypothesis_text()?;
        let mut slots = [0usize; 2];
        for (slot, text) in slots.iter_mut().zip([pair.reference.as_str(), hyp]) {
            if text.trim().is_empty() {
                return Err(SemDistError::Utterance {
                    id: pair.id.clone(),
                    source: EmbedError::EmptySentence { index: texts.len() },
                });
            }
            *slot = *index.entry(text).or_insert_with(|| {
                texts.push(text);
                owner.push(pair.id.as_str());
                texts.len() - 1
            });
        }
        pairs.push((pair.id.as_str(), slots[0], slots[1]));
    }

    let embeddings = embed_batch(backend, &texts).map_err(|e| match &e {
        EmbedError::CacheMiss { text } => match index.get(text.as_str()) {
            Some(&i) => SemDistError::Utterance {
                id: owner[i].to_owned(),
                source: e,
            },
            None => SemDistError::Embed(e),
        },
        EmbedError::EmptySentence { index } => SemDistError::Utterance {
            id: owner[*index].to_owned(),
            source: e,
        },
        _ => SemDistError::Embed(e),
    })?;

    let scores = pairs
        .into_iter()
        .map(|(id, r, h)| {
            Ok(ScoreRecord {
                id: id.to_owned(),
                semdist: semdist(&embeddings[r], &embeddings[h])?,
            })
        })
        .collect::<Result<Vec<_>, SemDistError>>()?;
    Ok(CorpusScores {
        mean: mean_score(&scores),
        scores,
        backend: backend.descriptor().clone(),
    })
}
