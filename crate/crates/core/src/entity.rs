//! Micro-averaged entity F1 over (type, normalized text) multisets.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Add;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, normalize, CorpusError};

#[derive(Debug, Error)]
pub enum EntityError {
    #[error("entity with empty type")]
    EmptyType,
    #[error("entity of type {0:?} has empty text")]
    EmptyText(String),
    #[error("gold has {gold} utterances but prediction has {predicted}")]
    LengthMismatch { gold: usize, predicted: usize },
    #[error("utterance {0:?} is missing from the {1} annotations")]
    MissingId(String, &'static str),
    #[error("{1} annotations contain unknown utterance {0:?}")]
    UnknownId(String, &'static str),
    #[error("duplicate utterance id {0:?} in entity annotations")]
    DuplicateId(String),
    #[error("utterance {id:?}: {source}")]
    Utterance {
        id: String,
        #[source]
        source: Box<EntityError>,
    },
    #[error(transparent)]
    Io(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    #[serde(rename = "type")]
    pub entity_type: String,
    pub text: String,
}

impl Entity {
    pub fn new(entity_type: impl Into<String>, text: impl Into<String>) -> Self {
        Entity {
            entity_type: entity_type.into(),
            text: text.into(),
        }
    }
}

/// Multiset of entities keyed by (type, normalized text).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntitySet {
    counts: BTreeMap<(String, String), usize>,
}

impl EntitySet {
    pub fn new<I: IntoIterator<Item = Entity>>(entities: I) -> Result<Self, EntityError> {
        let mut counts = BTreeMap::new();
        for e in entities {
            if e.entity_type.trim().is_empty() {
                return Err(EntityError::EmptyType);
            }
            let text = normalize(&e.text);
            if text.is_empty() {
                return Err(EntityError::EmptyText(e.entity_type));
            }
            *counts.entry((e.entity_type, text.joined())).or_insert(0) += 1;
        }
        Ok(EntitySet { counts })
    }

    pub fn len(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, usize)> {
        self.counts.iter().map(|((t, x), &n)| (t.as_str(), x.as_str(), n))
    }

    /// Size of the multiset intersection.
    pub fn overlap(&self, other: &EntitySet) -> usize {
        self.counts
            .iter()
            .map(|(k, &n)| n.min(other.counts.get(k).copied().unwrap_or(0)))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityCounts {
    pub tp: usize,
    pub pred_total: usize,
    pub gold_total: usize,
}

impl EntityCounts {
    pub fn between(gold: &EntitySet, predicted: &EntitySet) -> Self {
        EntityCounts {
            tp: gold.overlap(predicted),
            pred_total: predicted.len(),
            gold_total: gold.len(),
        }
    }
}

impl Add for EntityCounts {
    type Output = EntityCounts;

    fn add(self, rhs: EntityCounts) -> EntityCounts {
        EntityCounts {
            tp: self.tp + rhs.tp,
            pred_total: self.pred_total + rhs.pred_total,
            gold_total: self.gold_total + rhs.gold_total,
        }
    }
}

impl std::iter::Sum for EntityCounts {
    fn sum<I: Iterator<Item = EntityCounts>>(iter: I) -> Self {
        iter.fold(EntityCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntityScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: EntityCounts,
    /// Set when neither side has any entity; all scores are then 1.0.
    pub no_entities: bool,
}

impl EntityScores {
    pub fn from_counts(counts: EntityCounts) -> Self {
        if counts.pred_total == 0 && counts.gold_total == 0 {
            return EntityScores {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                counts,
                no_entities: true,
            };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(counts.tp, counts.pred_total);
        let recall = ratio(counts.tp, counts.gold_total);
        let f1 = if counts.tp == 0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EntityScores {
            precision,
            recall,
            f1,
            counts,
            no_entities: false,
        }
    }
}

pub fn entity_f1(gold: &[EntitySet], predicted: &[EntitySet]) -> Result<EntityScores, EntityError> {
    if gold.len() != predicted.len() {
        return Err(EntityError::LengthMismatch {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let counts = gold
        .iter()
        .zip(predicted)
        .map(|(g, p)| EntityCounts::between(g, p))
        .sum();
    Ok(EntityScores::from_counts(counts))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub id: String,
    pub entities: Vec<Entity>,
}

/// Reads `{"id", "entities": [{"type", "text"}]}` lines into an id-keyed map.
pub fn load_entity_annotations(path: &Path) -> Result<BTreeMap<String, EntitySet>, EntityError> {
    let records: Vec<EntityAnnotation> = corpus::read_jsonl(path)?;
    let mut out = BTreeMap::new();
    for r in records {
        let set = EntitySet::new(r.entities).map_err(|e| EntityError::Utterance {
            id: r.id.clone(),
            source: Box::new(e),
        })?;
        if out.insert(r.id.clone(), set).is_some() {
            return Err(EntityError::DuplicateId(r.id));
        }
    }
    Ok(out)
}

/// Pairs gold and predicted sets in the order of `ids`. Both maps must
/// cover exactly those ids.
pub fn pair_by_id(
    ids: &[&str],
    gold: &BTreeMap<String, EntitySet>,
    predicted: &BTreeMap<String, EntitySet>,
) -> Result<(Vec<EntitySet>, Vec<EntitySet>), EntityError> {
    let wanted: BTreeSet<&str> = ids.iter().copied().collect();
    for (map, side) in [(gold, "gold"), (predicted, "predicted")] {
        if let Some(extra) = map.keys().find(|k| !wanted.contains(k.as_str())) {
            return Err(EntityError::UnknownId(extra.clone(), side));
        }
    }
    let mut g = Vec::with_capacity(ids.len());
    let mut p = Vec::with_capacity(ids.len());
    for id in ids {
        g.push(gold.get(*id).cloned().ok_or_else(|| EntityError::MissingId(id.to_string(), "gold"))?);
        p.push(
            predicted
                .get(*id)
                .cloned()
                .ok_or_else(|| EntityError::MissingId(id.to_string(), "predicted"))?,
        );
    }
    Ok((g, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(items: &[(&str, &str)]) -> EntitySet {
        EntitySet::new(items.iter().map(|(t, x)| Entity::new(*t, *x))).unwrap()
    }

    #[test]
    fn single_match() {
        let s = entity_f1(&[set(&[("PERSON", "john")])], &[set(&[("PERSON", "john")])]).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        assert!(!s.no_entities);
    }

    #[test]
    fn empty_prediction() {
        let s = entity_f1(&[set(&[("PERSON", "john")])], &[set(&[])]).unwrap();
        assert_eq!(s.counts, EntityCounts { tp: 0, pred_total: 0, gold_total: 1 });
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn half_overlap() {
        let s = entity_f1(&[set(&[("PER", "a"), ("LOC", "b")])], &[set(&[("PER", "a"), ("LOC", "c")])]).unwrap();
        assert_eq!(s.counts.tp, 1);
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn nothing_anywhere() {
        let s = entity_f1(&[set(&[]), set(&[])], &[set(&[]), set(&[])]).unwrap();
        assert_eq!(s.f1, 1.0);
        assert!(s.no_entities);
    }

    #[test]
    fn text_is_normalized_and_multiset() {
        let g = set(&[("PERSON", "John"), ("PERSON", "john")]);
        let p = set(&[("PERSON", "JOHN")]);
        assert_eq!(g.len(), 2);
        assert_eq!(g.overlap(&p), 1);
        assert!(EntitySet::new([Entity::new("PERSON", "  ")]).is_err());
        assert!(EntitySet::new([Entity::new("", "x")]).is_err());
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            entity_f1(&[set(&[])], &[]),
            Err(EntityError::LengthMismatch { gold: 1, predicted: 0 })
        ));
    }

    #[test]
    fn pairing_by_id() {
        let mut g = BTreeMap::new();
        g.insert("a".to_owned(), set(&[("X", "1")]));
        g.insert("b".to_owned(), set(&[]));
        let mut p = g.clone();
        let (gs, ps) = pair_by_id(&["b", "a"], &g, &p).unwrap();
        assert_eq!(gs[1], set(&[("X", "1")]));
        assert_eq!(gs, ps);
        p.remove("a");
        assert!(matches!(pair_by_id(&["b", "a"], &g, &p), Err(EntityError::MissingId(id, "predicted")) if id == "a"));
    }

    pub fn arb_sets(n: usize) -> impl Strategy<Value = Vec<Vec<(String, String)>>> {
        proptest::collection::vec(
            proptest::collection::vec(("(PER|LOC|ORG)", "[ab]{1,2}"), 0..5),
            n,
        )
    }

    fn build(raw: &[Vec<(String, String)>]) -> Vec<EntitySet> {
        raw.iter()
            .map(|v| EntitySet::new(v.iter().map(|(t, x)| Entity::new(t.clone(), x.clone()))).unwrap())
            .collect()
    }

    /// List-based multiset matching over utterance-tagged items.
    fn concatenated_tp(gold: &[Vec<(String, String)>], pred: &[Vec<(String, String)>]) -> usize {
        let mut pool: Vec<(usize, &str, &str)> = pred
            .iter()
            .enumerate()
            .flat_map(|(i, v)| v.iter().map(move |(t, x)| (i, t.as_str(), x.as_str())))
            .collect();
        let mut tp = 0;
        for (i, v) in gold.iter().enumerate() {
            for (t, x) in v {
                if let Some(pos) = pool.iter().position(|&(j, pt, px)| j == i && pt == t && px == x) {
                    pool.swap_remove(pos);
                    tp += 1;
                }
            }
        }
        tp
    }

    proptest! {
        #[test]
        fn micro_equals_concatenated((g, p) in (1usize..8).prop_flat_map(|n| (arb_sets(n), arb_sets(n)))) {
            let s = entity_f1(&build(&g), &build(&p)).unwrap();
            let tp = concatenated_tp(&g, &p);
            let gold_total: usize = g.iter().map(Vec::len).sum();
            let pred_total: usize = p.iter().map(Vec::len).sum();
            prop_assert_eq!(s.counts, EntityCounts { tp, pred_total, gold_total });
            let expected = if gold_total + pred_total == 0 {
                1.0
            } else if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (gold_total + pred_total) as f64
            };
            prop_assert!((s.f1 - expected).abs() < 1e-12);
        }

        #[test]
        fn swap_sides((g, p) in (1usize..8).prop_flat_map(|n| (arb_sets(n), arb_sets(n)))) {
            let a = entity_f1(&build(&g), &build(&p)).unwrap();
            let b = entity_f1(&build(&p), &build(&g)).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
        }

        #[test]
        fn perfect_iff_equal((g, p) in (1usize..6).prop_flat_map(|n| (arb_sets(n), arb_sets(n))), same in any::<bool>()) {
            let gs = build(&g);
            let ps = if same { gs.clone() } else { build(&p) };
            let s = entity_f1(&gs, &ps).unwrap();
            prop_assert_eq!(s.f1 == 1.0, gs == ps);
        }
    }
}
