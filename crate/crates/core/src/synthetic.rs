//! Seeded synthetic corpora for self-checks and demos.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::align::{align_tokens, ErrorCounts};
use crate::corpus::{Corpus, CorpusError, UtterancePair};
use crate::hash::stable_hash64;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("reference length range {0}..={1} is empty or starts at 0")]
    BadLengths(usize, usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Lowercase word pool; contains no articles.
pub const WORDS: &[&str] = &[
    "account", "address", "after", "again", "alarm", "album", "all", "almost", "also", "always", "answer", "apple",
    "april", "arrive", "ask", "aunt", "away", "baby", "back", "bake", "bank", "battery", "beach", "because", "bed",
    "before", "bell", "best", "bike", "bill", "birthday", "black", "blue", "boat", "book", "bottle", "box", "bread",
    "breakfast", "bright", "bring", "brother", "brown", "bus", "busy", "buy", "cake", "call", "camera", "can", "car",
    "card", "careful", "carry", "cat", "chair", "change", "cheap", "check", "chicken", "child", "city", "class",
    "clean", "clock", "close", "cloud", "coat", "coffee", "cold", "color", "come", "cook", "cool", "corner", "could",
    "country", "cousin", "cup", "dad", "dance", "dark", "date", "daughter", "day", "dinner", "doctor", "dog", "door",
    "down", "drink", "drive", "early", "east", "easy", "eat", "egg", "email", "end", "evening", "every", "family",
    "far", "farm", "fast", "father", "film", "find", "fine", "finish", "fire", "first", "fish", "flight", "floor",
    "flower", "follow", "food", "forecast", "forget", "fresh", "friday", "friend", "from", "front", "fruit", "full",
    "game", "garden", "gate", "gift", "give", "glass", "go", "good", "green", "group", "guitar", "hair", "half",
    "hall", "happy", "hard", "hat", "have", "head", "hear", "heat", "help", "here", "high", "hold", "holiday", "home",
    "hope", "horse", "hot", "hotel", "hour", "house", "how", "hungry", "idea", "inside", "island", "jacket", "job",
    "join", "juice", "jump", "keep", "key", "kitchen", "know", "lake", "lamp", "large", "last", "late", "laugh",
    "leave", "left", "lesson", "letter", "light", "like", "list", "listen", "little", "live", "long", "look", "loud",
    "love", "lunch", "make", "map", "market", "meet", "meeting", "message", "milk", "minute", "monday", "money",
    "month", "moon", "morning", "mother", "mountain", "move", "movie", "music", "name", "near", "need", "never",
    "new", "news", "next", "nice", "night", "noon", "north", "note", "number", "office", "old", "open", "orange",
    "order", "outside", "page", "paint", "paper", "park", "party", "pay", "pen", "people", "phone", "photo",
    "picture", "pizza", "place", "plan", "play", "please", "pocket", "post", "price", "quick", "quiet", "radio",
    "rain", "read", "ready", "red", "remind", "remember", "rest", "restaurant", "ride", "right", "river", "road",
    "room", "run", "salt", "saturday", "school", "sea", "search", "second", "see", "send", "set", "shirt", "shoe",
    "shop", "short", "show", "side", "simple", "sing", "sister", "sleep", "slow", "small", "snow", "soft", "song",
    "soon", "south", "speak", "spring", "start", "station", "stay", "stop", "store", "street", "strong", "study",
    "summer", "sun", "sunday", "table", "take", "talk", "tall", "taxi", "tea", "teacher", "team", "tell", "text",
    "thank", "ticket", "time", "timer", "today", "together", "tomorrow", "tonight", "town", "train", "travel",
    "tree", "turn", "uncle", "under", "until", "visit", "voice", "volume", "wait", "walk", "wall", "want", "warm",
    "wash", "watch", "water", "weather", "week", "west", "white", "window", "winter", "with", "word", "work", "write",
    "year", "yellow", "yesterday", "young",
];

fn rng_for(seed: u64, id: &str, salt: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash64(&[&seed.to_le_bytes(), id.as_bytes(), salt.as_bytes()]))
}

/// `n` references of `min_len..=max_len` words drawn from [`WORDS`], with ids
/// `utt0000`, `utt0001`, ...
pub fn references(name: &str, n: usize, seed: u64, min_len: usize, max_len: usize) -> Result<Corpus, SyntheticError> {
    if min_len == 0 || min_len > max_len {
        return Err(SyntheticError::BadLengths(min_len, max_len));
    }
    let pairs = (0..n)
        .map(|i| {
            let id = format!("utt{i:04}");
            let mut rng = rng_for(seed, &id, "reference");
            let len = rng.gen_range(min_len..=max_len);
            let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
            UtterancePair::new(id, words.join(" "), None)
        })
        .collect();
    Ok(Corpus::new(name, pairs)?)
}

fn distinct_positions(rng: &mut ChaCha8Rng, len: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, len, k).into_vec()
}

/// Applies deletions, substitutions and insertions. `insert_after[j]` holds
/// words placed after reference position `j`; `front` words go first.
fn assemble(
    tokens: &[String],
    deleted: &[usize],
    substituted: &[(usize, String)],
    front: &[String],
    insert_after: &[(usize, String)],
) -> Vec<String> {
    let mut out: Vec<String> = front.to_vec();
    for (j, tok) in tokens.iter().enumerate() {
        if !deleted.contains(&j) {
            match substituted.iter().find(|(p, _)| *p == j) {
                Some((_, w)) => out.push(w.clone()),
                None => out.push(tok.clone()),
            }
        }
        out.extend(insert_after.iter().filter(|(p, _)| *p == j).map(|(_, w)| w.clone()));
    }
    out
}

fn simulate_one(tokens: &[String], rng: &mut ChaCha8Rng, max_each: usize) -> (Vec<String>, ErrorCounts) {
    let n = tokens.len();
    let s = rng.gen_range(0..=max_each.min(n));
    let d = rng.gen_range(0..=max_each.min(n - s));
    let i = rng.gen_range(0..=max_each);
    let positions = distinct_positions(rng, n, s + d);
    let (sub_pos, del_pos) = positions.split_at(s);
    let substituted: Vec<(usize, String)> = sub_pos
        .iter()
        .map(|&p| {
            let others: Vec<&String> = tokens.iter().filter(|t| **t != tokens[p]).collect();
            let word = match others.choose(rng) {
                Some(w) => (*w).clone(),
                None => loop {
                    let w = *WORDS.choose(rng).unwrap();
                    if w != tokens[p] {
                        break w.to_owned();
                    }
                },
            };
            (p, word)
        })
        .collect();
    let insert_after: Vec<(usize, String)> = (0..i)
        .map(|_| {
            let p = rng.gen_range(0..n);
            (p, tokens[p].clone())
        })
        .collect();
    let hyp = assemble(tokens, del_pos, &substituted, &[], &insert_after);
    let planned = ErrorCounts {
        substitutions: s,
        insertions: i,
        deletions: d,
        ref_len: n,
    };
    (hyp, planned)
}

/// Recognizer-like baseline hypotheses with up to `max_each` substitutions,
/// insertions and deletions per utterance: substitutes come from the same
/// sentence, insertions repeat a neighbouring word, and deletions drop words.
/// Every output's alignment stays within `max_each` on each count; an
/// utterance that never satisfies that is left unchanged.
pub fn simulate_recognizer(refs: &Corpus, name: &str, seed: u64, max_each: usize) -> Corpus {
    let hyps = refs.pairs().iter().map(|pair| {
        let tokens = pair.normalized_reference().tokens().to_vec();
        let mut rng = rng_for(seed, &pair.id, "recognizer");
        let mut fallback = None;
        for attempt in 0..200 {
            let (hyp, planned) = simulate_one(&tokens, &mut rng, max_each);
            if hyp.is_empty() {
                continue;
            }
            let got = align_tokens(&tokens, &hyp).counts;
            if got == planned {
                return hyp.join(" ");
            }
            let within = got.substitutions <= max_each && got.insertions <= max_each && got.deletions <= max_each;
            if within && fallback.is_none() && attempt >= 100 {
                fallback = Some(hyp.join(" "));
            }
        }
        fallback.unwrap_or_else(|| tokens.join(" "))
    });
    refs.with_hypotheses(name, hyps)
}

/// Hypotheses whose error rates spread over `0..=max_rate`: each utterance
/// draws a target rate, rounds it to an edit count and applies a random mix
/// of edits using words absent from its reference. At least one word is kept.
pub fn error_rate_sweep(refs: &Corpus, name: &str, seed: u64, max_rate: f64) -> Corpus {
    let hyps = refs.pairs().iter().map(|pair| {
        let tokens = pair.normalized_reference().tokens().to_vec();
        let n = tokens.len();
        let mut rng = rng_for(seed, &pair.id, "sweep");
        let rate = rng.gen_range(0.0..=max_rate);
        let edits = (rate * n as f64).round() as usize;
        let novel: Vec<&str> = WORDS.iter().copied().filter(|w| !tokens.iter().any(|t| t == w)).collect();
        let (mut s, mut i, mut d) = (0, 0, 0);
        for _ in 0..edits {
            match rng.gen_range(0..3) {
                0 if s + d < n => s += 1,
                1 if s + d + 1 < n => d += 1,
                _ => i += 1,
            }
        }
        let positions = distinct_positions(&mut rng, n, s + d);
        let (sub_pos, del_pos) = positions.split_at(s);
        let substituted: Vec<(usize, String)> = sub_pos
            .iter()
            .map(|&p| (p, novel.choose(&mut rng).unwrap().to_string()))
            .collect();
        let mut front = Vec::new();
        let mut insert_after = Vec::new();
        for _ in 0..i {
            let w = novel.choose(&mut rng).unwrap().to_string();
            match rng.gen_range(0..=n) {
                0 => front.push(w),
                p => insert_after.push((p - 1, w)),
            }
        }
        assemble(&tokens, del_pos, &substituted, &front, &insert_after).join(" ")
    });
    refs.with_hypotheses(name, hyps)
}
