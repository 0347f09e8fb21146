//! Decoupled intent/slot trees and the frame-level NLU metrics.
//!
//! Serialized form:
//!
//! ```text
//! [IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO [IN:CREATE_CALL [SL:METHOD call ] [SL:CONTACT John ] ] ] ]
//! ```
//!
//! A node is `'[' ('IN:' | 'SL:') LABEL (token | node)* ']'`. Intents hold
//! slots, slots hold intents, and the root is an intent.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, normalize, CorpusError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("at byte {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("frame metrics need at least one pair")]
    Empty,
}

#[derive(Debug, Error)]
pub enum FrameFileError {
    #[error(transparent)]
    Io(#[from] CorpusError),
    #[error("utterance {id:?}, {field}: {source}")]
    Frame {
        id: String,
        field: &'static str,
        #[source]
        source: FrameError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Intent,
    Slot,
}

impl NodeKind {
    fn prefix(self) -> &'static str {
        match self {
            NodeKind::Intent => "IN:",
            NodeKind::Slot => "SL:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FrameItem {
    Token(String),
    Node(SemanticNode),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SemanticNode {
    pub kind: NodeKind,
    pub label: String,
    /// Tokens and child nodes in their serialized order.
    pub items: Vec<FrameItem>,
}

impl SemanticNode {
    pub fn new(kind: NodeKind, label: impl Into<String>, items: Vec<FrameItem>) -> Self {
        SemanticNode {
            kind,
            label: label.into(),
            items,
        }
    }

    pub fn children(&self) -> impl Iterator<Item = &SemanticNode> {
        self.items.iter().filter_map(|i| match i {
            FrameItem::Node(n) => Some(n),
            FrameItem::Token(_) => None,
        })
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.items.iter().filter_map(|i| match i {
            FrameItem::Token(t) => Some(t.as_str()),
            FrameItem::Node(_) => None,
        })
    }

    /// Same tree with every token case-folded as in WER scoring.
    pub fn normalized(&self) -> SemanticNode {
        self.map_items(&|item| match item {
            FrameItem::Token(t) => Some(FrameItem::Token(normalize(t).joined())),
            FrameItem::Node(n) => Some(FrameItem::Node(n.normalized())),
        })
    }

    fn map_items(&self, f: &dyn Fn(&FrameItem) -> Option<FrameItem>) -> SemanticNode {
        SemanticNode {
            kind: self.kind,
            label: self.label.clone(),
            items: self.items.iter().filter_map(f).collect(),
        }
    }

    fn write(&self, out: &mut String) {
        out.push('[');
        out.push_str(self.kind.prefix());
        out.push_str(&self.label);
        for item in &self.items {
            out.push(' ');
            match item {
                FrameItem::Token(t) => out.push_str(t),
                FrameItem::Node(n) => n.write(out),
            }
        }
        out.push_str(" ]");
    }

    /// Canonical serialization with single spaces.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        self.write(&mut out);
        out
    }
}

impl fmt::Display for SemanticNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.serialize())
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, FrameError> {
        Err(FrameError::Parse {
            pos: self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn node(&mut self, parent: Option<NodeKind>) -> Result<SemanticNode, FrameError> {
        if !self.rest().starts_with('[') {
            return self.err("expected '['");
        }
        self.pos += 1;
        let kind = if self.rest().starts_with("IN:") {
            NodeKind::Intent
        } else if self.rest().starts_with("SL:") {
            NodeKind::Slot
        } else {
            return self.err("expected 'IN:' or 'SL:'");
        };
        match (parent, kind) {
            (None, NodeKind::Slot) => return self.err("root must be an intent"),
            (Some(NodeKind::Slot), NodeKind::Slot) => return self.err("slot nested directly in a slot"),
            (Some(NodeKind::Intent), NodeKind::Intent) => return self.err("intent nested directly in an intent"),
            _ => {}
        }
        self.pos += 3;
        let label_len = self
            .rest()
            .find(|c: char| !(c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(self.rest().len());
        if label_len == 0 {
            return self.err("empty label");
        }
        let label = self.rest()[..label_len].to_owned();
        self.pos += label_len;
        match self.rest().chars().next() {
            Some(c) if c.is_whitespace() || c == ']' => {}
            Some(c) => return self.err(format!("invalid label character {c:?}")),
            None => return self.err("unterminated node"),
        }

        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.rest().chars().next() {
                None => return self.err("unterminated node"),
                Some(']') => {
                    self.pos += 1;
                    return Ok(SemanticNode { kind, label, items });
                }
                Some('[') => items.push(FrameItem::Node(self.node(Some(kind))?)),
                Some(_) => {
                    let len = self
                        .rest()
                        .find(|c: char| c.is_whitespace() || c == '[' || c == ']')
                        .unwrap_or(self.rest().len());
                    items.push(FrameItem::Token(self.rest()[..len].to_owned()));
                    self.pos += len;
                }
            }
        }
    }
}

pub fn parse_frame(serialized: &str) -> Result<SemanticNode, FrameError> {
    let mut p = Parser { src: serialized, pos: 0 };
    p.skip_ws();
    let root = p.node(None)?;
    p.skip_ws();
    if !p.rest().is_empty() {
        return p.err("trailing input after root node");
    }
    Ok(root)
}

pub fn top_intent(tree: &SemanticNode) -> &str {
    &tree.label
}

/// Removes all text tokens, keeping labels and structure.
pub fn drop_slot_text(tree: &SemanticNode) -> SemanticNode {
    tree.map_items(&|item| match item {
        FrameItem::Token(_) => None,
        FrameItem::Node(n) => Some(FrameItem::Node(drop_slot_text(n))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub intent: bool,
    pub em: bool,
    pub em_tree: bool,
}

pub fn compare_frames(gold: &SemanticNode, predicted: &SemanticNode) -> FrameOutcome {
    FrameOutcome {
        intent: top_intent(gold) == top_intent(predicted),
        em: gold.normalized() == predicted.normalized(),
        em_tree: drop_slot_text(gold) == drop_slot_text(predicted),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub intent_acc: f64,
    pub em: f64,
    pub em_tree: f64,
    pub n: usize,
}

impl FrameMetrics {
    pub fn from_outcomes(outcomes: &[FrameOutcome]) -> Result<Self, FrameError> {
        if outcomes.is_empty() {
            return Err(FrameError::Empty);
        }
        let n = outcomes.len();
        let frac = |f: fn(&FrameOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n as f64;
        Ok(FrameMetrics {
            intent_acc: frac(|o| o.intent),
            em: frac(|o| o.em),
            em_tree: frac(|o| o.em_tree),
            n,
        })
    }
}

pub fn frame_metrics(pairs: &[(SemanticNode, SemanticNode)]) -> Result<FrameMetrics, FrameError> {
    let outcomes: Vec<FrameOutcome> = pairs.iter().map(|(g, p)| compare_frames(g, p)).collect();
    FrameMetrics::from_outcomes(&outcomes)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub id: String,
    pub gold_frame: String,
    pub pred_frame: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFrames {
    pub id: String,
    pub gold: SemanticNode,
    pub predicted: SemanticNode,
}

/// Reads `{"id", "gold_frame", "pred_frame"}` lines and parses both trees.
pub fn load_frame_annotations(path: &Path) -> Result<Vec<ParsedFrames>, FrameFileError> {
    let records: Vec<FrameAnnotation> = corpus::read_jsonl(path)?;
    records
        .into_iter()
        .map(|r| {
            let parse = |field: &'static str, text: &str| {
                parse_frame(text).map_err(|source| FrameFileError::Frame {
                    id: r.id.clone(),
                    field,
                    source,
                })
            };
            Ok(ParsedFrames {
                gold: parse("gold_frame", &r.gold_frame)?,
                predicted: parse("pred_frame", &r.pred_frame)?,
                id: r.id.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub const FIGURE: &str = "[IN:CREATE_REMINDER [SL:PERSON_REMINDED me ] [SL:TODO [IN:CREATE_CALL [SL:METHOD call ] [SL:CONTACT John ] ] ] ]";

    fn tok(s: &str) -> FrameItem {
        FrameItem::Token(s.to_owned())
    }

    fn slot(label: &str, items: Vec<FrameItem>) -> FrameItem {
        FrameItem::Node(SemanticNode::new(NodeKind::Slot, label, items))
    }

    fn intent(label: &str, items: Vec<FrameItem>) -> SemanticNode {
        SemanticNode::new(NodeKind::Intent, label, items)
    }

    #[test]
    fn parses_reminder_example() {
        let expected = intent(
            "CREATE_REMINDER",
            vec![
                slot("PERSON_REMINDED", vec![tok("me")]),
                slot(
                    "TODO",
                    vec![FrameItem::Node(intent(
                        "CREATE_CALL",
                        vec![slot("METHOD", vec![tok("call")]), slot("CONTACT", vec![tok("John")])],
                    ))],
                ),
            ],
        );
        let tree = parse_frame(FIGURE).unwrap();
        assert_eq!(tree, expected);
        assert_eq!(tree.serialize(), FIGURE);
        assert_eq!(top_intent(&tree), "CREATE_REMINDER");
    }

    #[test]
    fn minimal_and_whitespace_variants() {
        let bare = parse_frame("[IN:A ]").unwrap();
        assert_eq!(bare, intent("A", vec![]));
        assert_eq!(top_intent(&bare), "A");
        let loose = parse_frame("  [IN:A\t[SL:B  x\ny]]  ").unwrap();
        assert_eq!(loose.serialize(), "[IN:A [SL:B x y ] ]");
    }

    #[test]
    fn parse_errors() {
        let cases = [
            ("[SL:X y ]", 1),
            ("[IN:A [IN:B ] ]", 7),
            ("[IN:A [SL:B [SL:C ] ] ]", 13),
            ("[IN:A", 5),
            ("[IN:a ]", 4),
            ("[IN: ]", 4),
            ("[XX:A ]", 1),
            ("[IN:A-B ]", 5),
            ("[IN:A ] ]", 8),
            ("", 0),
        ];
        for (input, pos) in cases {
            match parse_frame(input) {
                Err(FrameError::Parse { pos: got, .. }) => assert_eq!(got, pos, "{input:?}"),
                other => panic!("{input:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn drop_text_keeps_shape() {
        let tree = parse_frame(FIGURE).unwrap();
        let dropped = drop_slot_text(&tree);
        assert_eq!(
            dropped.serialize(),
            "[IN:CREATE_REMINDER [SL:PERSON_REMINDED ] [SL:TODO [IN:CREATE_CALL [SL:METHOD ] [SL:CONTACT ] ] ] ]"
        );
        assert_eq!(drop_slot_text(&dropped), dropped);
    }

    #[test]
    fn metric_examples() {
        let g = parse_frame(FIGURE).unwrap();
        let same = frame_metrics(&[(g.clone(), g.clone())]).unwrap();
        assert_eq!((same.intent_acc, same.em, same.em_tree), (1.0, 1.0, 1.0));

        let other_contact = parse_frame(&FIGURE.replace("John", "Joan")).unwrap();
        let cased = parse_frame(&FIGURE.replace("John", "JOHN")).unwrap();
        let m = frame_metrics(&[(g.clone(), other_contact), (g.clone(), cased)]).unwrap();
        assert_eq!((m.intent_acc, m.em, m.em_tree), (1.0, 0.5, 1.0));
        assert!(m.em < m.em_tree);

        assert_eq!(frame_metrics(&[]), Err(FrameError::Empty));
    }

    #[test]
    fn child_order_matters() {
        let a = parse_frame("[IN:A [SL:X x ] [SL:Y y ] ]").unwrap();
        let b = parse_frame("[IN:A [SL:Y y ] [SL:X x ] ]").unwrap();
        assert!(!compare_frames(&a, &b).em_tree);
        assert!(compare_frames(&a, &b).intent);
    }

    pub fn arb_label() -> impl Strategy<Value = String> {
        "[A-Z][A-Z0-9_]{0,6}"
    }

    fn arb_items(kind: NodeKind, depth: u32) -> BoxedStrategy<Vec<FrameItem>> {
        let token = "[a-zA-Z']{1,6}".prop_map(FrameItem::Token);
        if depth == 0 {
            return proptest::collection::vec(token, 0..3).boxed();
        }
        let child_kind = match kind {
            NodeKind::Intent => NodeKind::Slot,
            NodeKind::Slot => NodeKind::Intent,
        };
        let child = (arb_label(), arb_items(child_kind, depth - 1))
            .prop_map(move |(label, items)| FrameItem::Node(SemanticNode::new(child_kind, label, items)));
        proptest::collection::vec(prop_oneof![2 => token, 1 => child], 0..4).boxed()
    }

    pub fn arb_tree() -> impl Strategy<Value = SemanticNode> {
        (arb_label(), arb_items(NodeKind::Intent, 3)).prop_map(|(l, items)| intent(&l, items))
    }

    proptest! {
        #[test]
        fn round_trip(t in arb_tree()) {
            let text = t.serialize();
            let parsed = parse_frame(&text).unwrap();
            prop_assert_eq!(&parsed, &t);
            prop_assert_eq!(parsed.serialize(), text);
        }

        #[test]
        fn drop_is_idempotent(t in arb_tree()) {
            let once = drop_slot_text(&t);
            prop_assert_eq!(drop_slot_text(&once), once.clone());
            prop_assert_eq!(once.tokens().count(), 0);
        }

        #[test]
        fn em_implies_em_tree(a in arb_tree(), b in arb_tree(), same in any::<bool>()) {
            let b = if same { a.clone() } else { b };
            let o = compare_frames(&a, &b);
            prop_assert!(!o.em || o.em_tree);
        }
    }
}
