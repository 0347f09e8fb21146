use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use semdist::align::{self, align, corpus_wer, Alignment, EditOp, ErrorCounts, WerRatio};
use semdist::analytics::{build_report, render, render_scatter, utterance_records, Format, ScatterFilter};
use semdist::corpus::{load_corpus, save_hypotheses, write_jsonl, Corpus};
use semdist::distance::score_corpus;
use semdist::embedding::{build_cache, open_backend, write_cache};
use semdist::entity::{entity_f1, load_entity_annotations, pair_by_id, EntityCounts, EntitySet};
use semdist::frame::{compare_frames, load_frame_annotations, FrameMetrics, FrameOutcome};
use semdist::perturb::{generate_set, reference_vocabulary, Mode, PerturbationRecipe};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::{Cli, CorpusInput, FormatArg, ModeArg, NerArgs, NluArgs, PerturbArgs, ReportArgs, SemdistArgs, WerArgs};

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Writes `<stem>.config.json` recording the full invocation.
fn write_config(dir: &Path, stem: &str, cli: &Cli) -> Result<(), CliError> {
    let echo = json!({
        "tool": "semdist",
        "version": env!("CARGO_PKG_VERSION"),
        "jobs": cli.jobs,
        "command": &cli.command,
    });
    write_json(&dir.join(format!("{stem}.config.json")), &echo)
}

fn load_input(input: &CorpusInput) -> Result<Corpus, CliError> {
    let refs = load_corpus(&input.refs)?;
    Ok(match &input.hyps {
        Some(path) => refs.join_hypotheses(&load_corpus(path)?)?,
        None => refs,
    })
}

fn alignments_of(corpus: &Corpus) -> Result<Vec<Alignment>, CliError> {
    corpus
        .pairs()
        .iter()
        .map(|p| Ok(align(&p.normalized_reference(), &p.normalized_hypothesis()?)))
        .collect()
}

fn counts_text(c: &ErrorCounts) -> String {
    format!("S={} I={} D={} N={}", c.substitutions, c.insertions, c.deletions, c.ref_len)
}

#[derive(Serialize)]
struct AlignmentRecord<'a> {
    id: &'a str,
    #[serde(flatten)]
    counts: ErrorCounts,
    wer: f64,
    ops: Vec<(&'static str, Option<&'a str>, Option<&'a str>)>,
}

pub fn wer(cli: &Cli, args: &WerArgs) -> Result<(), CliError> {
    let corpus = load_input(&args.input)?;
    let alignments = alignments_of(&corpus)?;
    let total: ErrorCounts = alignments.iter().map(|a| a.counts).sum();
    let ratio = corpus_wer(&alignments)?;
    println!(
        "corpus WER: {ratio} ({}, {} utterances)",
        counts_text(&total),
        corpus.len()
    );
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_json(
            &dir.join("wer.json"),
            &json!({
                "set": corpus.name,
                "n": corpus.len(),
                "error_counts": total,
                "wer": ratio.as_f64(),
                "wer_percent": format!("{:.2}", ratio.percent()),
            }),
        )?;
        if args.alignments {
            let records: Vec<AlignmentRecord> = corpus
                .pairs()
                .iter()
                .zip(&alignments)
                .map(|(p, a)| {
                    Ok(AlignmentRecord {
                        id: &p.id,
                        counts: a.counts,
                        wer: align::wer(&a.counts)?.as_f64(),
                        ops: a.ops.iter().map(|op: &EditOp| (op.kind(), op.ref_token(), op.hyp_token())).collect(),
                    })
                })
                .collect::<Result<_, CliError>>()?;
            write_jsonl(&dir.join("alignments.jsonl"), &records)?;
        }
        write_config(dir, "wer", cli)?;
    }
    Ok(())
}

pub fn semdist(cli: &Cli, args: &SemdistArgs) -> Result<(), CliError> {
    let corpus = load_input(&args.input)?;
    let backend = open_backend(&args.backend)?;
    let scores = score_corpus(&corpus, backend.as_ref())?;
    println!(
        "mean SemDist: {:.4} over {} utterances (backend {})",
        scores.mean,
        scores.scores.len(),
        scores.backend.identity
    );
    if let Some(path) = &args.write_cache {
        let texts = corpus
            .pairs()
            .iter()
            .flat_map(|p| [p.reference.as_str(), p.hypothesis.as_deref().unwrap_or_default()]);
        let cache = build_cache(backend.as_ref(), texts)?;
        write_cache(path, &cache)?;
    }
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_jsonl(&dir.join("scores.jsonl"), &scores.scores)?;
        write_json(
            &dir.join("semdist.json"),
            &json!({
                "set": corpus.name,
                "n": scores.scores.len(),
                "mean": scores.mean,
                "backend": scores.backend.identity,
                "dim": scores.backend.dim,
            }),
        )?;
        write_config(dir, "semdist", cli)?;
    }
    Ok(())
}

fn same_rate(a: &WerRatio, b: &WerRatio) -> bool {
    a.errors == b.errors && a.ref_len == b.ref_len
}

pub fn perturb(cli: &Cli, args: &PerturbArgs) -> Result<(), CliError> {
    let refs = load_corpus(&args.refs)?;
    let baseline = refs.join_hypotheses(&load_corpus(&args.hyps)?)?;
    let alignments = alignments_of(&baseline)?;
    let (mode, default_name) = match args.mode {
        ModeArg::Worse => (Mode::Worse, "worse"),
        ModeArg::Better => (Mode::Better, "better"),
    };
    let name = args.name.clone().unwrap_or_else(|| default_name.to_owned());
    let mut recipe = PerturbationRecipe::new(mode, args.seed, reference_vocabulary(&refs));
    recipe.max_retries = args.max_retries;
    let generated = generate_set(&baseline, &alignments, &recipe, &name)?;

    let before = corpus_wer(&alignments)?;
    let after = corpus_wer(&alignments_of(&generated.corpus)?)?;
    println!("baseline WER ({}): {before} ({} errors / {} words)", baseline.name, before.errors, before.ref_len);
    println!("perturbed WER ({name}): {after} ({} errors / {} words)", after.errors, after.ref_len);
    if !same_rate(&before, &after) {
        return Err(CliError::Contract(format!("corpus WER changed from {before} to {after}")));
    }

    create_dir(&args.out_dir)?;
    save_hypotheses(&generated.corpus, &args.out_dir.join(format!("{name}.jsonl")))?;
    write_jsonl(&args.out_dir.join(format!("{name}.manifest.jsonl")), &generated.manifest)?;
    write_config(&args.out_dir, &name, cli)
}

pub fn nlu_eval(cli: &Cli, args: &NluArgs) -> Result<(), CliError> {
    let parsed = load_frame_annotations(&args.frames)?;
    let outcomes: Vec<FrameOutcome> = parsed.iter().map(|p| compare_frames(&p.gold, &p.predicted)).collect();
    let m = FrameMetrics::from_outcomes(&outcomes)?;
    println!(
        "IntentAcc {:.2}%  EM {:.2}%  EM Tree {:.2}%  (n={})",
        100.0 * m.intent_acc,
        100.0 * m.em,
        100.0 * m.em_tree,
        m.n
    );
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("nlu.json"), &m)?;
        let records: Vec<serde_json::Value> = parsed
            .iter()
            .zip(&outcomes)
            .map(|(p, o)| json!({"id": p.id, "intent": o.intent, "em": o.em, "em_tree": o.em_tree}))
            .collect();
        write_jsonl(&dir.join("nlu.jsonl"), &records)?;
        write_config(dir, "nlu", cli)?;
    }
    Ok(())
}

pub fn ner_eval(cli: &Cli, args: &NerArgs) -> Result<(), CliError> {
    let gold = load_entity_annotations(&args.gold)?;
    let pred = load_entity_annotations(&args.pred)?;
    let ids: Vec<&str> = gold.keys().map(String::as_str).collect();
    let (g, p) = pair_by_id(&ids, &gold, &pred)?;
    let s = entity_f1(&g, &p)?;
    println!(
        "NER-F1 {:.3} (P {:.3}, R {:.3}; tp {}, predicted {}, gold {})",
        s.f1, s.precision, s.recall, s.counts.tp, s.counts.pred_total, s.counts.gold_total
    );
    if s.no_entities {
        println!("note: no entities on either side; F1 defined as 1");
    }
    if let Some(dir) = &args.out_dir {
        create_dir(dir)?;
        write_json(&dir.join("ner.json"), &s)?;
        write_config(dir, "ner", cli)?;
    }
    Ok(())
}

fn split_assignment(raw: &str, flag: &str) -> Result<(String, PathBuf), CliError> {
    match raw.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), PathBuf::from(path))),
        _ => Err(CliError::Input(format!("{flag} expects NAME=FILE, got {raw:?}"))),
    }
}

fn assignments(raw: &[String], flag: &str, sets: &[String]) -> Result<HashMap<String, PathBuf>, CliError> {
    let mut out = HashMap::new();
    for item in raw {
        let (name, path) = split_assignment(item, flag)?;
        if !sets.contains(&name) {
            return Err(CliError::Input(format!("{flag} names unknown set {name:?}")));
        }
        if out.insert(name.clone(), path).is_some() {
            return Err(CliError::Input(format!("{flag} given twice for set {name:?}")));
        }
    }
    Ok(out)
}

fn frame_outcomes(path: &Path, corpus: &Corpus) -> Result<Vec<FrameOutcome>, CliError> {
    let mut by_id: BTreeMap<String, FrameOutcome> = BTreeMap::new();
    for p in load_frame_annotations(path)? {
        let outcome = compare_frames(&p.gold, &p.predicted);
        if by_id.insert(p.id.clone(), outcome).is_some() {
            return Err(CliError::Input(format!("{}: duplicate utterance id {:?}", path.display(), p.id)));
        }
    }
    if let Some(extra) = by_id.keys().find(|id| corpus.get(id).is_none()) {
        return Err(CliError::Input(format!("{}: unknown utterance {extra:?}", path.display())));
    }
    corpus
        .pairs()
        .iter()
        .map(|pair| {
            by_id
                .get(&pair.id)
                .copied()
                .ok_or_else(|| CliError::Input(format!("{}: no frames for utterance {:?}", path.display(), pair.id)))
        })
        .collect()
}

fn entity_counts(
    gold: &BTreeMap<String, EntitySet>,
    pred_path: &Path,
    corpus: &Corpus,
) -> Result<Vec<EntityCounts>, CliError> {
    let pred = load_entity_annotations(pred_path)?;
    let ids: Vec<&str> = corpus.pairs().iter().map(|p| p.id.as_str()).collect();
    let (g, p) = pair_by_id(&ids, gold, &pred)?;
    Ok(g.iter().zip(&p).map(|(g, p)| EntityCounts::between(g, p)).collect())
}

pub fn report(cli: &Cli, args: &ReportArgs) -> Result<(), CliError> {
    let refs = load_corpus(&args.refs)?;
    let sets: Vec<(String, PathBuf)> = args
        .sets
        .iter()
        .map(|s| split_assignment(s, "--set"))
        .collect::<Result<_, _>>()?;
    let names: Vec<String> = sets.iter().map(|(n, _)| n.clone()).collect();
    for (i, name) in names.iter().enumerate() {
        if names[..i].contains(name) {
            return Err(CliError::Input(format!("--set given twice for {name:?}")));
        }
    }
    let frames = assignments(&args.frames, "--frames", &names)?;
    let entities = assignments(&args.entities, "--entities", &names)?;
    let gold_entities = args.entities_gold.as_deref().map(load_entity_annotations).transpose()?;
    let filter = ScatterFilter {
        min_exclusive: args.min_wer,
        max_inclusive: args.max_wer,
    };
    let backend = open_backend(&args.backend)?;

    create_dir(&args.out_dir)?;
    let mut reports = Vec::new();
    for (name, path) in &sets {
        let corpus = refs.join_hypotheses(&load_corpus(path)?)?;
        let scores = score_corpus(&corpus, backend.as_ref())?;
        let mut records = utterance_records(&corpus, &scores)?;
        if let Some(frame_path) = frames.get(name) {
            for (r, o) in records.iter_mut().zip(frame_outcomes(frame_path, &corpus)?) {
                r.frame = Some(o);
            }
        }
        if let (Some(gold), Some(pred_path)) = (&gold_entities, entities.get(name)) {
            for (r, c) in records.iter_mut().zip(entity_counts(gold, pred_path, &corpus)?) {
                r.entities = Some(c);
            }
        }
        let (report, scatter) = build_report(name, &scores.backend.identity, records, filter)?;
        write_text(&args.out_dir.join(format!("scatter-{name}.csv")), &render_scatter(&scatter)?)?;
        reports.push(report);
    }

    for format in &args.format {
        let format = match format {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
            FormatArg::Markdown => Format::Markdown,
        };
        let text = render(&reports, format)?;
        write_text(&args.out_dir.join(format!("report.{}", format.extension())), &text)?;
    }
    print!("{}", render(&reports, Format::Markdown)?);
    write_config(&args.out_dir, "report", cli)
}
