//! WER-preserving hypothesis perturbation.
//!
//! Given a baseline hypothesis set and its per-utterance error counts, build
//! a new hypothesis set with the same corpus WER:
//!
//! * worse mode reproduces each utterance's exact S/I/D signature with
//!   random vocabulary words and random deletions;
//! * better mode spends the same number of edits on meaning-preserving
//!   changes: adjacent-word swaps (two substitutions each) and article
//!   insertions, with a function-word substitution as the last resort.
//!
//! Every output is checked with [`align`](crate::align::align_tokens)
//! and resampled on mismatch. Randomness comes from a per-utterance seed
//! derived from the recipe seed and the utterance id, so results do not
//! depend on scheduling.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{align_tokens, Alignment, EditOp, ErrorCounts};
use crate::corpus::{normalize, Corpus};
use crate::hash::stable_hash64;

pub const ARTICLES: [&str; 3] = ["a", "an", "the"];
pub const DEFAULT_MAX_RETRIES: usize = 100;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PerturbError {
    #[error("utterance {id:?}: budget S+D={needed} exceeds reference length {len}")]
    InfeasibleBudget { id: String, needed: usize, len: usize },
    #[error("utterance {id:?}: no perturbation matched the budget after {attempts} attempts")]
    Unsatisfiable { id: String, attempts: usize },
    #[error("worse mode needs a nonempty substitution vocabulary")]
    EmptyVocabulary,
    #[error("recipe mode is {found:?}, expected {expected:?}")]
    WrongMode { expected: Mode, found: Mode },
    #[error("{corpus} utterances but {alignments} alignments")]
    AlignmentCount { corpus: usize, alignments: usize },
    #[error("alignment for utterance {0:?} does not match its reference")]
    AlignmentMismatch(String),
    #[error("perturbation failed for {} utterance(s): {}", .0.len(), .0.join(", "))]
    SetFailed(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Worse,
    Better,
}

/// Per-utterance error budget, copied from the baseline alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerturbationBudget {
    #[serde(rename = "S")]
    pub substitutions: usize,
    #[serde(rename = "I")]
    pub insertions: usize,
    #[serde(rename = "D")]
    pub deletions: usize,
}

impl PerturbationBudget {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    fn matches(&self, counts: &ErrorCounts) -> bool {
        self.substitutions == counts.substitutions
            && self.insertions == counts.insertions
            && self.deletions == counts.deletions
    }
}

impl From<ErrorCounts> for PerturbationBudget {
    fn from(c: ErrorCounts) -> Self {
        PerturbationBudget {
            substitutions: c.substitutions,
            insertions: c.insertions,
            deletions: c.deletions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationRecipe {
    pub mode: Mode,
    pub seed: u64,
    /// Sorted, deduplicated, normalized words.
    pub vocabulary: Vec<String>,
    pub max_retries: usize,
}

impl PerturbationRecipe {
    pub fn new(mode: Mode, seed: u64, vocabulary: impl IntoIterator<Item = String>) -> Self {
        let vocabulary: BTreeSet<String> = vocabulary.into_iter().collect();
        PerturbationRecipe {
            mode,
            seed,
            vocabulary: vocabulary.into_iter().collect(),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }

    fn rng_for(&self, id: &str, salt: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stable_hash64(&[&self.seed.to_le_bytes(), id.as_bytes(), salt.as_bytes()]))
    }
}

/// Every distinct normalized token of the corpus references, sorted.
pub fn reference_vocabulary(corpus: &Corpus) -> Vec<String> {
    let set: BTreeSet<String> = corpus
        .pairs()
        .iter()
        .flat_map(|p| p.normalized_reference().tokens().to_vec())
        .collect();
    set.into_iter().collect()
}

/// A verified perturbation of one reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perturbed {
    /// Whitespace tokens; untouched reference words keep their surface form.
    pub tokens: Vec<String>,
    pub counts: ErrorCounts,
    /// Attempts that failed verification before this one.
    pub retries: usize,
}

impl Perturbed {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

fn surface_tokens(reference: &str) -> Vec<String> {
    // Same boundaries as `normalize`, case preserved.
    reference.split_whitespace().map(str::to_owned).collect()
}

fn folded(tokens: &[String]) -> Vec<String> {
    normalize(&tokens.join(" ")).tokens().to_vec()
}

fn unchanged(reference: &[String]) -> Perturbed {
    Perturbed {
        counts: ErrorCounts {
            ref_len: reference.len(),
            ..ErrorCounts::default()
        },
        tokens: reference.to_vec(),
        retries: 0,
    }
}

/// Same S/I/D signature as `budget`, realized with random words.
///
/// Substitution and deletion positions are distinct reference indices;
/// insertions go to random positions of the edited sequence.
pub fn generate_worse(
    id: &str,
    reference: &str,
    budget: PerturbationBudget,
    recipe: &PerturbationRecipe,
) -> Result<Perturbed, PerturbError> {
    generate_worse_with_template(id, reference, budget, recipe, None)
}

/// [`generate_worse`], plus a fallback for budgets that random placement
/// keeps missing: once half of the attempts have failed, edits are placed
/// where `template` (the baseline alignment that produced `budget`) has
/// them, filled with words absent from the reference. Such a hypothesis
/// aligns along the template's path, so its counts equal the budget.
pub fn generate_worse_with_template(
    id: &str,
    reference: &str,
    budget: PerturbationBudget,
    recipe: &PerturbationRecipe,
    template: Option<&Alignment>,
) -> Result<Perturbed, PerturbError> {
    if recipe.mode != Mode::Worse {
        return Err(PerturbError::WrongMode {
            expected: Mode::Worse,
            found: recipe.mode,
        });
    }
    let surface = surface_tokens(reference);
    let norm = folded(&surface);
    let n = surface.len();
    if budget.substitutions + budget.deletions > n {
        return Err(PerturbError::InfeasibleBudget {
            id: id.to_owned(),
            needed: budget.substitutions + budget.deletions,
            len: n,
        });
    }
    if budget.total() == 0 {
        return Ok(unchanged(&surface));
    }
    if recipe.vocabulary.is_empty() {
        return Err(PerturbError::EmptyVocabulary);
    }

    let template = template.filter(|t| budget.matches(&t.counts) && t.counts.ref_len == n);
    let words = WordPool::new(&recipe.vocabulary, &norm);
    let mut rng = recipe.rng_for(id, "worse");
    let attempts = recipe.max_retries + 1;
    for attempt in 0..attempts {
        let candidate = match template {
            Some(t) if attempt * 2 >= attempts => template_attempt(&surface, t, &words, &mut rng),
            _ => worse_attempt(&surface, &norm, budget, &words, &mut rng),
        };
        let Some(candidate) = candidate else {
            continue;
        };
        let counts = align_tokens(&norm, &folded(&candidate)).counts;
        if budget.matches(&counts) {
            return Ok(Perturbed {
                tokens: candidate,
                counts,
                retries: attempt,
            });
        }
    }
    Err(PerturbError::Unsatisfiable {
        id: id.to_owned(),
        attempts,
    })
}

/// Substitution and insertion words. Words outside the reference are
/// preferred; the full vocabulary is the fallback when there are none.
struct WordPool<'a> {
    novel: Vec<&'a String>,
    all: &'a [String],
}

impl<'a> WordPool<'a> {
    fn new(vocabulary: &'a [String], reference: &[String]) -> Self {
        WordPool {
            novel: vocabulary.iter().filter(|w| !reference.contains(w)).collect(),
            all: vocabulary,
        }
    }

    fn insertion(&self, rng: &mut ChaCha8Rng) -> Option<String> {
        match self.novel.choose(rng) {
            Some(w) => Some((*w).clone()),
            None => self.all.choose(rng).cloned(),
        }
    }

    fn substitute(&self, original: &str, rng: &mut ChaCha8Rng) -> Option<String> {
        if let Some(w) = self.novel.choose(rng) {
            return Some((*w).clone());
        }
        let choices: Vec<&String> = self.all.iter().filter(|w| *w != original).collect();
        choices.choose(rng).map(|w| (*w).clone())
    }
}

fn worse_attempt(
    surface: &[String],
    norm: &[String],
    budget: PerturbationBudget,
    words: &WordPool<'_>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<String>> {
    let mut order: Vec<usize> = (0..surface.len()).collect();
    order.shuffle(rng);
    let (subs, rest) = order.split_at(budget.substitutions);
    let dels = &rest[..budget.deletions];

    let mut out = Vec::with_capacity(surface.len() + budget.insertions);
    for (i, tok) in surface.iter().enumerate() {
        if dels.contains(&i) {
            continue;
        }
        if subs.contains(&i) {
            out.push(words.substitute(&norm[i], rng)?);
        } else {
            out.push(tok.clone());
        }
    }
    for _ in 0..budget.insertions {
        let at = rng.gen_range(0..=out.len());
        out.insert(at, words.insertion(rng)?);
    }
    Some(out)
}

fn template_attempt(
    surface: &[String],
    template: &Alignment,
    words: &WordPool<'_>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<String>> {
    let mut out = Vec::with_capacity(template.ops.len());
    let mut i = 0;
    for op in &template.ops {
        match op {
            EditOp::Match(_) => {
                out.push(surface[i].clone());
                i += 1;
            }
            EditOp::Substitution { reference, .. } => {
                out.push(words.substitute(reference, rng)?);
                i += 1;
            }
            EditOp::Deletion(_) => i += 1,
            EditOp::Insertion(_) => out.push(words.insertion(rng)?),
        }
    }
    Some(out)
}

/// Spends `budget.total()` edits on adjacent swaps and article insertions.
///
/// Each swap of two distinct neighbours costs two substitutions, so
/// `budget.substitutions / 2` swaps are attempted; the remaining edits
/// become article insertions. When those keep failing verification, the
/// later attempts trade one insertion for a substitution of a word by an
/// article. Only the total edit count is checked against the budget.
pub fn generate_better(
    id: &str,
    reference: &str,
    budget: PerturbationBudget,
    recipe: &PerturbationRecipe,
) -> Result<Perturbed, PerturbError> {
    if recipe.mode != Mode::Better {
        return Err(PerturbError::WrongMode {
            expected: Mode::Better,
            found: recipe.mode,
        });
    }
    better_with_total(id, reference, budget.substitutions / 2, budget.total(), recipe, "better")
}

fn better_with_total(
    id: &str,
    reference: &str,
    max_swaps: usize,
    total: usize,
    recipe: &PerturbationRecipe,
    salt: &str,
) -> Result<Perturbed, PerturbError> {
    let surface = surface_tokens(reference);
    let norm = folded(&surface);
    if total == 0 {
        return Ok(unchanged(&surface));
    }
    let mut rng = recipe.rng_for(id, salt);
    let attempts = recipe.max_retries + 1;
    let max_swaps = max_swaps.min(total / 2);
    for attempt in 0..attempts {
        // Fewer swaps on later attempts; swaps interact with each other and
        // with inserted articles, insertions alone never do.
        let swaps = max_swaps.saturating_sub(attempt * (max_swaps + 1) / attempts);
        let fallback = attempt * 2 >= attempts;
        let Some((candidate, swapped)) = better_attempt(&surface, &norm, swaps, total, fallback, &mut rng) else {
            continue;
        };
        let cand_norm = folded(&candidate);
        let alignment = align_tokens(&norm, &cand_norm);
        if alignment.counts.errors() == total && better_inventory_ok(&alignment, &swapped) {
            return Ok(Perturbed {
                tokens: candidate,
                counts: alignment.counts,
                retries: attempt,
            });
        }
    }
    Err(PerturbError::Unsatisfiable {
        id: id.to_owned(),
        attempts,
    })
}

fn better_attempt(
    surface: &[String],
    norm: &[String],
    swaps: usize,
    total: usize,
    fallback: bool,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<String>, Vec<(String, String)>)> {
    let mut done_swaps = 0;
    let mut out = surface.to_vec();
    let mut swapped = Vec::new();

    let mut starts: Vec<usize> = (0..surface.len().saturating_sub(1))
        .filter(|&i| norm[i] != norm[i + 1])
        .collect();
    starts.shuffle(rng);
    let mut taken = vec![false; surface.len()];
    for i in starts {
        if done_swaps == swaps {
            break;
        }
        if taken[i] || taken[i + 1] {
            continue;
        }
        taken[i] = true;
        taken[i + 1] = true;
        out.swap(i, i + 1);
        swapped.push((norm[i].clone(), norm[i + 1].clone()));
        swapped.push((norm[i + 1].clone(), norm[i].clone()));
        done_swaps += 1;
    }

    let mut remaining = total - 2 * done_swaps;
    if fallback && remaining > 0 {
        // Replace an untouched non-article word with an article.
        let candidates: Vec<usize> = (0..surface.len())
            .filter(|&i| !taken[i] && !ARTICLES.contains(&norm[i].as_str()))
            .collect();
        if let Some(&i) = candidates.choose(rng) {
            out[i] = (*ARTICLES.choose(rng)?).to_owned();
            remaining -= 1;
        }
    }
    for _ in 0..remaining {
        let at = rng.gen_range(0..=out.len());
        out.insert(at, (*ARTICLES.choose(rng)?).to_owned());
    }
    Some((out, swapped))
}

/// Better-mode outputs may only contain swap-induced substitutions, article
/// insertions, and substitutions by an article.
fn better_inventory_ok(alignment: &Alignment, swapped: &[(String, String)]) -> bool {
    alignment.ops.iter().all(|op| match op {
        EditOp::Match(_) => true,
        EditOp::Insertion(w) => ARTICLES.contains(&w.as_str()),
        EditOp::Deletion(_) => false,
        EditOp::Substitution { reference, hypothesis } => {
            ARTICLES.contains(&hypothesis.as_str())
                || swapped.iter().any(|(r, h)| r == reference && h == hypothesis)
        }
    })
}

/// One line of the perturbation manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub mode: Mode,
    pub seed: u64,
    /// Baseline budget for this utterance.
    pub budget: PerturbationBudget,
    /// Edits actually realized; differs from the budget total only for
    /// better-mode utterances touched by corpus-level reallocation.
    pub edits: usize,
    pub retries: usize,
    pub hypothesis: String,
}

#[derive(Debug, Clone)]
pub struct GeneratedSet {
    pub corpus: Corpus,
    pub manifest: Vec<ManifestEntry>,
}

/// Builds a new hypothesis set from a baseline set and its alignments.
///
/// Worse mode matches every utterance's S/I/D signature. Better mode matches
/// the corpus edit total: an utterance whose full budget cannot be realized
/// takes the largest total that can be, and the shortfall is handed out one
/// edit at a time to the longest references.
pub fn generate_set(
    corpus_a: &Corpus,
    alignments: &[Alignment],
    recipe: &PerturbationRecipe,
    name: &str,
) -> Result<GeneratedSet, PerturbError> {
    if corpus_a.len() != alignments.len() {
        return Err(PerturbError::AlignmentCount {
            corpus: corpus_a.len(),
            alignments: alignments.len(),
        });
    }
    for (pair, al) in corpus_a.pairs().iter().zip(alignments) {
        if al.counts.ref_len != pair.normalized_reference().len() {
            return Err(PerturbError::AlignmentMismatch(pair.id.clone()));
        }
    }
    let items: Vec<(&str, &str, PerturbationBudget)> = corpus_a
        .pairs()
        .iter()
        .zip(alignments)
        .map(|(p, a)| (p.id.as_str(), p.reference.as_str(), PerturbationBudget::from(a.counts)))
        .collect();

    let outcomes: Vec<Result<Perturbed, PerturbError>> = items
        .par_iter()
        .zip(alignments)
        .map(|(&(id, reference, budget), al)| match recipe.mode {
            Mode::Worse => generate_worse_with_template(id, reference, budget, recipe, Some(al)),
            Mode::Better => generate_better(id, reference, budget, recipe),
        })
        .collect();

    let results = match recipe.mode {
        Mode::Worse => {
            let failed: Vec<String> = outcomes
                .iter()
                .zip(&items)
                .filter(|(r, _)| r.is_err())
                .map(|(_, (id, _, _))| (*id).to_owned())
                .collect();
            if !failed.is_empty() {
                return Err(PerturbError::SetFailed(failed));
            }
            outcomes.into_iter().map(Result::unwrap).collect()
        }
        Mode::Better => reallocate(&items, outcomes, recipe)?,
    };

    let manifest = items
        .iter()
        .zip(&results)
        .map(|(&(id, _, budget), p)| ManifestEntry {
            id: id.to_owned(),
            mode: recipe.mode,
            seed: recipe.seed,
            budget,
            edits: p.counts.errors(),
            retries: p.retries,
            hypothesis: p.text(),
        })
        .collect();
    let corpus = corpus_a.with_hypotheses(name, results.iter().map(Perturbed::text));
    Ok(GeneratedSet { corpus, manifest })
}

fn reallocate(
    items: &[(&str, &str, PerturbationBudget)],
    outcomes: Vec<Result<Perturbed, PerturbError>>,
    recipe: &PerturbationRecipe,
) -> Result<Vec<Perturbed>, PerturbError> {
    let mut deficit = 0usize;
    let mut results = Vec::with_capacity(items.len());
    for (&(id, reference, budget), outcome) in items.iter().zip(outcomes) {
        let p = match outcome {
            Ok(p) => p,
            Err(PerturbError::Unsatisfiable { .. }) => {
                let mut fallback = None;
                for total in (0..budget.total()).rev() {
                    if let Ok(p) = better_with_total(id, reference, 0, total, recipe, "reduced") {
                        deficit += budget.total() - total;
                        fallback = Some(p);
                        break;
                    }
                }
                fallback.expect("zero-edit output always verifies")
            }
            Err(e) => return Err(e),
        };
        results.push(p);
    }
    if deficit == 0 {
        return Ok(results);
    }

    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(results[i].counts.ref_len));
    let mut progressed = true;
    while deficit > 0 && progressed {
        progressed = false;
        for &i in &order {
            if deficit == 0 {
                break;
            }
            let (id, reference, _) = items[i];
            let total = results[i].counts.errors() + 1;
            let salt = format!("realloc{total}");
            if let Ok(p) = better_with_total(id, reference, 0, total, recipe, &salt) {
                results[i] = p;
                deficit -= 1;
                progressed = true;
            }
        }
    }
    if deficit > 0 {
        let failed = items
            .iter()
            .zip(&results)
            .filter(|((_, _, b), p)| b.total() != p.counts.errors())
            .map(|((id, _, _), _)| (*id).to_owned())
            .collect();
        return Err(PerturbError::SetFailed(failed));
    }
    Ok(results)
}
