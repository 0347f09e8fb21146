//! Per-utterance records, WER/SemDist correlation and corpus reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{self, align, AlignError, ErrorCounts};
use crate::corpus::{Corpus, CorpusError};
use crate::distance::CorpusScores;
use crate::entity::{EntityCounts, EntityScores};
use crate::frame::{FrameMetrics, FrameOutcome};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("pearson needs equal-length samples, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("pearson needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("correlation undefined: {0} has zero variance")]
    ZeroVariance(&'static str),
    #[error("a report needs at least one utterance")]
    EmptyReport,
    #[error("utterance {id:?}: {source}")]
    Wer {
        id: String,
        #[source]
        source: AlignError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("scores do not match the corpus at position {position}: expected {expected:?}, found {found:?}")]
    ScoreMismatch {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("{field} is present for some utterances but missing for {id:?}")]
    PartialField { field: &'static str, id: String },
    #[error("report {set:?}: {field} does not match its utterance records")]
    Inconsistent { set: String, field: &'static str },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

/// Sample Pearson correlation, computed with centered sums.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, AnalyticsError> {
    if xs.len() != ys.len() {
        return Err(AnalyticsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(AnalyticsError::TooFewPoints(n));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(AnalyticsError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(AnalyticsError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub wer: f64,
    pub error_counts: ErrorCounts,
    pub semdist: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<FrameOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<EntityCounts>,
}

impl UtteranceRecord {
    pub fn new(id: impl Into<String>, error_counts: ErrorCounts, semdist: f64) -> Result<Self, AnalyticsError> {
        let id = id.into();
        let wer = align::wer(&error_counts)
            .map_err(|source| AnalyticsError::Wer { id: id.clone(), source })?
            .as_f64();
        Ok(UtteranceRecord {
            id,
            wer,
            error_counts,
            semdist,
            frame: None,
            entities: None,
        })
    }
}

/// Aligns every pair and joins it with its SemDist score.
pub fn utterance_records(corpus: &Corpus, scores: &CorpusScores) -> Result<Vec<UtteranceRecord>, AnalyticsError> {
    corpus
        .pairs()
        .iter()
        .enumerate()
        .map(|(position, pair)| {
            let score = scores.scores.get(position);
            if score.map(|s| s.id.as_str()) != Some(pair.id.as_str()) {
                return Err(AnalyticsError::ScoreMismatch {
                    position,
                    expected: pair.id.clone(),
                    found: score.map(|s| s.id.clone()).unwrap_or_default(),
                });
            }
            let al = align(&pair.normalized_reference(), &pair.normalized_hypothesis()?);
            UtteranceRecord::new(pair.id.clone(), al.counts, score.unwrap().semdist.value())
        })
        .collect()
}

/// Scatter population: utterances with `min_exclusive < wer <= max_inclusive`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterFilter {
    pub min_exclusive: f64,
    pub max_inclusive: f64,
}

impl Default for ScatterFilter {
    fn default() -> Self {
        ScatterFilter {
            min_exclusive: 0.0,
            max_inclusive: 1.0,
        }
    }
}

impl ScatterFilter {
    pub fn accepts(&self, wer: f64) -> bool {
        wer > self.min_exclusive && wer <= self.max_inclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub id: String,
    pub wer: f64,
    pub semdist: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub set_name: String,
    pub n: usize,
    pub error_counts: ErrorCounts,
    pub corpus_wer: f64,
    pub corpus_semdist: f64,
    pub intent_acc: Option<f64>,
    pub em: Option<f64>,
    pub em_tree: Option<f64>,
    pub ner_f1: Option<f64>,
    pub pearson_r: Option<f64>,
    pub pearson_r_all: Option<f64>,
    pub n_scatter: usize,
    pub scatter_filter: ScatterFilter,
    pub backend: String,
    pub decisions: Vec<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: ReportSummary,
    pub records: Vec<UtteranceRecord>,
}

fn all_or_none<T: Copy>(
    records: &[UtteranceRecord],
    field: &'static str,
    get: impl Fn(&UtteranceRecord) -> Option<T>,
) -> Result<Option<Vec<T>>, AnalyticsError> {
    let values: Vec<Option<T>> = records.iter().map(&get).collect();
    if values.iter().all(Option::is_none) {
        return Ok(None);
    }
    match values.iter().position(Option::is_none) {
        Some(i) => Err(AnalyticsError::PartialField {
            field,
            id: records[i].id.clone(),
        }),
        None => Ok(Some(values.into_iter().flatten().collect())),
    }
}

fn summarize(
    set_name: &str,
    backend: &str,
    records: &[UtteranceRecord],
    filter: ScatterFilter,
) -> Result<(ReportSummary, Vec<ScatterRow>), AnalyticsError> {
    if records.is_empty() {
        return Err(AnalyticsError::EmptyReport);
    }
    let n = records.len();
    let error_counts: ErrorCounts = records.iter().map(|r| r.error_counts).sum();
    let corpus_wer = align::wer(&error_counts)
        .map_err(|source| AnalyticsError::Wer {
            id: set_name.to_owned(),
            source,
        })?
        .as_f64();
    let corpus_semdist = records.iter().map(|r| r.semdist).sum::<f64>() / n as f64;

    let mut decisions = vec![
        "corpus_wer: pooled errors over pooled reference words".to_owned(),
        "corpus_semdist: unweighted mean over utterances".to_owned(),
        format!(
            "pearson_r: utterances with {} < wer <= {}; pearson_r_all: all utterances",
            filter.min_exclusive, filter.max_inclusive
        ),
    ];
    let mut diagnostics = Vec::new();

    let (mut intent_acc, mut em, mut em_tree) = (None, None, None);
    if let Some(outcomes) = all_or_none(records, "frame", |r| r.frame)? {
        let m = FrameMetrics::from_outcomes(&outcomes).expect("records are nonempty");
        intent_acc = Some(m.intent_acc);
        em = Some(m.em);
        em_tree = Some(m.em_tree);
        decisions.push("em: exact tree match with normalized tokens; em_tree: slot text dropped".to_owned());
    }

    let mut ner_f1 = None;
    if let Some(counts) = all_or_none(records, "entities", |r| r.entities)? {
        let scores = EntityScores::from_counts(counts.into_iter().sum());
        ner_f1 = Some(scores.f1);
        decisions.push("ner_f1: micro-averaged over (type, normalized text) multisets".to_owned());
        if scores.no_entities {
            diagnostics.push("no entities on either side; ner_f1 defined as 1".to_owned());
        }
    }

    let scatter: Vec<ScatterRow> = records
        .iter()
        .filter(|r| filter.accepts(r.wer))
        .map(|r| ScatterRow {
            id: r.id.clone(),
            wer: r.wer,
            semdist: r.semdist,
        })
        .collect();

    let mut correlation = |label: &str, xs: Vec<f64>, ys: Vec<f64>| match pearson(&xs, &ys) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(format!("{label} undefined: {e}"));
            None
        }
    };
    let pearson_r = correlation(
        "pearson_r",
        scatter.iter().map(|r| r.wer).collect(),
        scatter.iter().map(|r| r.semdist).collect(),
    );
    let pearson_r_all = correlation(
        "pearson_r_all",
        records.iter().map(|r| r.wer).collect(),
        records.iter().map(|r| r.semdist).collect(),
    );

    let above_one = records.iter().filter(|r| r.semdist > 1.0).count();
    if above_one > 0 {
        diagnostics.push(format!("{above_one} utterances with semdist > 1"));
    }

    let summary = ReportSummary {
        set_name: set_name.to_owned(),
        n,
        error_counts,
        corpus_wer,
        corpus_semdist,
        intent_acc,
        em,
        em_tree,
        ner_f1,
        pearson_r,
        pearson_r_all,
        n_scatter: scatter.len(),
        scatter_filter: filter,
        backend: backend.to_owned(),
        decisions,
        diagnostics,
    };
    Ok((summary, scatter))
}

pub fn build_report(
    set_name: &str,
    backend: &str,
    records: Vec<UtteranceRecord>,
    filter: ScatterFilter,
) -> Result<(EvalReport, Vec<ScatterRow>), AnalyticsError> {
    let (summary, scatter) = summarize(set_name, backend, &records, filter)?;
    Ok((EvalReport { summary, records }, scatter))
}

/// Recomputes every aggregate from the records and compares exactly.
pub fn check_consistency(report: &EvalReport) -> Result<(), AnalyticsError> {
    let s = &report.summary;
    let (fresh, _) = summarize(&s.set_name, &s.backend, &report.records, s.scatter_filter)?;
    let fields: [(&'static str, bool); 10] = [
        ("n", fresh.n == s.n),
        ("error_counts", fresh.error_counts == s.error_counts),
        ("corpus_wer", fresh.corpus_wer == s.corpus_wer),
        ("corpus_semdist", fresh.corpus_semdist == s.corpus_semdist),
        (
            "frame metrics",
            (fresh.intent_acc, fresh.em, fresh.em_tree) == (s.intent_acc, s.em, s.em_tree),
        ),
        ("ner_f1", fresh.ner_f1 == s.ner_f1),
        ("pearson_r", fresh.pearson_r == s.pearson_r),
        ("pearson_r_all", fresh.pearson_r_all == s.pearson_r_all),
        ("n_scatter", fresh.n_scatter == s.n_scatter),
        ("diagnostics", fresh.diagnostics == s.diagnostics),
    ];
    match fields.iter().find(|(_, ok)| !ok) {
        Some((field, _)) => Err(AnalyticsError::Inconsistent {
            set: s.set_name.clone(),
            field,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Markdown => "md",
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

fn fixed(v: Option<f64>, decimals: usize) -> String {
    v.map(|x| format!("{x:.decimals$}")).unwrap_or_default()
}

struct Column {
    header: &'static str,
    cell: fn(&ReportSummary) -> String,
    shown: fn(&ReportSummary) -> bool,
}

const COLUMNS: [Column; 10] = [
    Column {
        header: "Set",
        cell: |s| s.set_name.clone(),
        shown: |_| true,
    },
    Column {
        header: "N",
        cell: |s| s.n.to_string(),
        shown: |_| true,
    },
    Column {
        header: "WER (%)",
        cell: |s| pct(Some(s.corpus_wer)),
        shown: |_| true,
    },
    Column {
        header: "SemDist",
        cell: |s| fixed(Some(s.corpus_semdist), 4),
        shown: |_| true,
    },
    Column {
        header: "IntentAcc (%)",
        cell: |s| pct(s.intent_acc),
        shown: |s| s.intent_acc.is_some(),
    },
    Column {
        header: "EM (%)",
        cell: |s| pct(s.em),
        shown: |s| s.em.is_some(),
    },
    Column {
        header: "EM Tree (%)",
        cell: |s| pct(s.em_tree),
        shown: |s| s.em_tree.is_some(),
    },
    Column {
        header: "NER-F1",
        cell: |s| fixed(s.ner_f1, 3),
        shown: |s| s.ner_f1.is_some(),
    },
    Column {
        header: "Pearson r",
        cell: |s| fixed(s.pearson_r, 4),
        shown: |_| true,
    },
    Column {
        header: "Pearson r (all)",
        cell: |s| fixed(s.pearson_r_all, 4),
        shown: |_| true,
    },
];

/// Renders reports in a deterministic text form after checking each one
/// against its records. Percentages use 2 decimals, SemDist and Pearson r 4,
/// NER-F1 3. Optional metric columns appear when any report has them.
pub fn render(reports: &[EvalReport], format: Format) -> Result<String, AnalyticsError> {
    for report in reports {
        check_consistency(report)?;
    }
    let summaries: Vec<&ReportSummary> = reports.iter().map(|r| &r.summary).collect();
    let columns: Vec<&Column> = COLUMNS
        .iter()
        .filter(|c| summaries.iter().any(|s| (c.shown)(s)))
        .collect();
    match format {
        Format::Json => {
            let mut out = serde_json::to_string_pretty(reports).expect("reports serialize");
            out.push('\n');
            Ok(out)
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(columns.iter().map(|c| c.header))?;
            for s in &summaries {
                w.write_record(columns.iter().map(|c| (c.cell)(s)))?;
            }
            Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 cells"))
        }
        Format::Markdown => {
            let mut out = String::new();
            let row = |out: &mut String, cells: Vec<String>| {
                let _ = writeln!(out, "| {} |", cells.join(" | "));
            };
            row(&mut out, columns.iter().map(|c| c.header.to_owned()).collect());
            row(&mut out, columns.iter().map(|_| "---".to_owned()).collect());
            for s in &summaries {
                row(&mut out, columns.iter().map(|c| (c.cell)(s)).collect());
            }
            Ok(out)
        }
    }
}

/// Scatter CSV with header `id,wer,semdist`.
pub fn render_scatter(rows: &[ScatterRow]) -> Result<String, AnalyticsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "wer", "semdist"])?;
    for r in rows {
        w.write_record([r.id.clone(), r.wer.to_string(), r.semdist.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 cells"))
}
