use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semdist::corpus::{load_corpus, save_hypotheses, Corpus, UtterancePair};
use semdist::synthetic;
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semdist")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_lines(path: &Path, lines: &[&str]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn cat_fixture(dir: &Path) -> PathBuf {
    let path = dir.join("cat.jsonl");
    write_lines(
        &path,
        &[
            r#"{"id":"u1","reference":"This is a cat","hypothesis":"This is the cat"}"#,
            r#"{"id":"u2","reference":"This is a cat","hypothesis":"This is a cap"}"#,
        ],
    );
    path
}

#[test]
fn wer_on_table_example() {
    let dir = TempDir::new().unwrap();
    let refs = cat_fixture(dir.path());
    let out = dir.path().join("out");
    let o = run(&["wer", "--refs", p(&refs), "-o", p(&out), "--alignments"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("corpus WER: 25.00% (S=2 I=0 D=0 N=8"), "{}", stdout(&o));

    let dump = fs::read_to_string(out.join("alignments.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(dump.lines().next().unwrap()).unwrap();
    assert_eq!(first["id"], "u1");
    assert_eq!((first["S"].as_u64(), first["N"].as_u64()), (Some(1), Some(4)));
    assert_eq!(first["wer"], 0.25);
    assert_eq!(first["ops"][2], serde_json::json!(["substitution", "a", "the"]));

    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("wer.config.json")).unwrap()).unwrap();
    assert_eq!(echo["command"]["wer"]["alignments"], true);
}

#[test]
fn wer_identical_and_missing() {
    let dir = TempDir::new().unwrap();
    let same = dir.path().join("same.jsonl");
    write_lines(&same, &[r#"{"id":"a","reference":"turn on lights","hypothesis":"Turn  on lights"}"#]);
    let o = run(&["wer", "--refs", p(&same)]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("corpus WER: 0.00%"));

    let missing = dir.path().join("nope.jsonl");
    let o = run(&["wer", "--refs", p(&missing)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.jsonl"), "{}", stderr(&o));

    let o = run(&["wer", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn wer_with_separate_hypothesis_file() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.jsonl");
    let hyps = dir.path().join("hyps.jsonl");
    write_lines(&refs, &[r#"{"id":"x","reference":"this is a cat"}"#, r#"{"id":"y","reference":"hello there"}"#]);
    write_lines(
        &hyps,
        &[
            r#"{"id":"y","reference":"hello there","hypothesis":"hello"}"#,
            r#"{"id":"x","reference":"this is a cat","hypothesis":"this is a cat"}"#,
        ],
    );
    let o = run(&["wer", "--refs", p(&refs), "--hyps", p(&hyps)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("corpus WER: 16.67% (S=0 I=0 D=1 N=6"), "{}", stdout(&o));

    write_lines(&hyps, &[r#"{"id":"x","reference":"this is a cat","hypothesis":"this"}"#]);
    let o = run(&["wer", "--refs", p(&refs), "--hyps", p(&hyps)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"y\""), "{}", stderr(&o));
}

#[test]
fn semdist_identical_is_zero() {
    let dir = TempDir::new().unwrap();
    let same = dir.path().join("same.jsonl");
    write_lines(
        &same,
        &[
            r#"{"id":"a","reference":"turn on the lights","hypothesis":"turn on the lights"}"#,
            r#"{"id":"b","reference":"call mom","hypothesis":"call mom"}"#,
        ],
    );
    let o = run(&["semdist", "--refs", p(&same), "--backend", "stub:seed=7,dim=768"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mean SemDist: 0.0000 over 2 utterances"), "{}", stdout(&o));
}

#[test]
fn semdist_offline_service_exits_3() {
    let dir = TempDir::new().unwrap();
    let refs = cat_fixture(dir.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let o = Command::new(env!("CARGO_BIN_EXE_semdist"))
        .args(["semdist", "--refs", p(&refs), "--backend", &url])
        .env("SEMDIST_HTTP_TIMEOUT_SECS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_backend_spec_is_input_error() {
    let dir = TempDir::new().unwrap();
    let refs = cat_fixture(dir.path());
    let o = run(&["semdist", "--refs", p(&refs), "--backend", "stub:dim=zero"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn cache_backend_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let refs = cat_fixture(dir.path());
    let cache = dir.path().join("cache.jsonl");
    let (o1, o2, o3) = (dir.path().join("o1"), dir.path().join("o2"), dir.path().join("o3"));
    let o = run(&["semdist", "--refs", p(&refs), "--backend", "stub:seed=3,dim=64", "--write-cache", p(&cache), "-o", p(&o1)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let spec = format!("cache:{}", p(&cache));
    for out in [&o2, &o3] {
        let o = run(&["semdist", "--refs", p(&refs), "--backend", &spec, "-o", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |d: &Path| fs::read(d.join("scores.jsonl")).unwrap();
    assert_eq!(read(&o2), read(&o3));
    assert_eq!(read(&o1), read(&o2));

    let extra = dir.path().join("extra.jsonl");
    write_lines(&extra, &[r#"{"id":"z","reference":"never embedded","hypothesis":"never embedded"}"#]);
    let o = run(&["semdist", "--refs", p(&extra), "--backend", &spec]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("never embedded"), "{}", stderr(&o));
}

struct Pipeline {
    dir: TempDir,
    refs: PathBuf,
    set_a: PathBuf,
}

fn pipeline_inputs(n: usize) -> Pipeline {
    let dir = TempDir::new().unwrap();
    let refs_corpus = synthetic::references("refs", n, 3, 5, 12).unwrap();
    let a = synthetic::simulate_recognizer(&refs_corpus, "A", 3, 3);
    let refs = dir.path().join("refs.jsonl");
    let set_a = dir.path().join("A.jsonl");
    save_hypotheses(&refs_corpus, &refs).unwrap();
    save_hypotheses(&a, &set_a).unwrap();
    Pipeline { dir, refs, set_a }
}

fn perturb(pl: &Pipeline, mode: &str, name: &str, out: &Path, jobs: &str) -> Output {
    run(&[
        "--jobs",
        jobs,
        "perturb",
        "--refs",
        p(&pl.refs),
        "--hyps",
        p(&pl.set_a),
        "--mode",
        mode,
        "--seed",
        "42",
        "--name",
        name,
        "-o",
        p(out),
    ])
}

fn wer_lines(o: &Output) -> Vec<String> {
    stdout(o)
        .lines()
        .map(|l| l.split_once(": ").unwrap().1.to_owned())
        .collect()
}

#[test]
fn perturb_prints_equal_wers() {
    let pl = pipeline_inputs(60);
    let out = pl.dir.path().join("sets");
    for (mode, name) in [("worse", "B"), ("better", "C")] {
        let o = perturb(&pl, mode, name, &out, "2");
        assert!(o.status.success(), "{}", stderr(&o));
        let lines = wer_lines(&o);
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], lines[1]);
        assert!(out.join(format!("{name}.jsonl")).exists());
        assert!(out.join(format!("{name}.config.json")).exists());
        let manifest = fs::read_to_string(out.join(format!("{name}.manifest.jsonl"))).unwrap();
        assert_eq!(manifest.lines().count(), 60);
    }
}

#[test]
fn perturb_is_independent_of_jobs() {
    let pl = pipeline_inputs(40);
    let (one, many) = (pl.dir.path().join("j1"), pl.dir.path().join("j4"));
    assert!(perturb(&pl, "worse", "B", &one, "1").status.success());
    assert!(perturb(&pl, "worse", "B", &many, "4").status.success());
    assert_eq!(fs::read(one.join("B.jsonl")).unwrap(), fs::read(many.join("B.jsonl")).unwrap());
}

#[test]
fn better_mode_on_perfect_set_returns_references() {
    let dir = TempDir::new().unwrap();
    let refs_corpus = synthetic::references("refs", 10, 8, 4, 8).unwrap();
    let perfect = refs_corpus.with_hypotheses("A", refs_corpus.pairs().iter().map(|p| p.reference.clone()));
    let (refs, a, out) = (dir.path().join("refs.jsonl"), dir.path().join("A.jsonl"), dir.path().join("out"));
    save_hypotheses(&refs_corpus, &refs).unwrap();
    save_hypotheses(&perfect, &a).unwrap();
    let o = run(&["perturb", "--refs", p(&refs), "--hyps", p(&a), "--mode", "better", "--seed", "1", "-o", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let c = load_corpus(&out.join("better.jsonl")).unwrap();
    for pair in c.pairs() {
        assert_eq!(pair.hypothesis.as_deref(), Some(pair.reference.as_str()));
    }
}

#[test]
fn unsatisfiable_perturbation_exits_2_with_ids() {
    let dir = TempDir::new().unwrap();
    let (refs, a, out) = (dir.path().join("refs.jsonl"), dir.path().join("A.jsonl"), dir.path().join("out"));
    write_lines(&refs, &[r#"{"id":"only","reference":"go go go"}"#]);
    write_lines(&a, &[r#"{"id":"only","reference":"go go go","hypothesis":"stop go go"}"#]);
    let o = run(&["perturb", "--refs", p(&refs), "--hyps", p(&a), "--mode", "worse", "--seed", "1", "-o", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("only"), "{}", stderr(&o));
}

#[test]
fn nlu_and_ner_eval() {
    let dir = TempDir::new().unwrap();
    let frames = dir.path().join("frames.jsonl");
    write_lines(
        &frames,
        &[
            r#"{"id":"1","gold_frame":"[IN:A [SL:X john ] ]","pred_frame":"[IN:A [SL:X John ] ]"}"#,
            r#"{"id":"2","gold_frame":"[IN:A [SL:X john ] ]","pred_frame":"[IN:A [SL:X joan ] ]"}"#,
            r#"{"id":"3","gold_frame":"[IN:A [SL:X john ] ]","pred_frame":"[IN:B ]"}"#,
            r#"{"id":"4","gold_frame":"[IN:A ]","pred_frame":"[IN:A [SL:Y y ] ]"}"#,
        ],
    );
    let out = dir.path().join("out");
    let o = run(&["nlu-eval", "--frames", p(&frames), "-o", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "IntentAcc 75.00%  EM 25.00%  EM Tree 50.00%  (n=4)");
    assert_eq!(fs::read_to_string(out.join("nlu.jsonl")).unwrap().lines().count(), 4);

    write_lines(&frames, &[r#"{"id":"1","gold_frame":"[SL:X y ]","pred_frame":"[IN:A ]"}"#]);
    let o = run(&["nlu-eval", "--frames", p(&frames)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gold_frame"), "{}", stderr(&o));

    let (gold, pred) = (dir.path().join("gold.jsonl"), dir.path().join("pred.jsonl"));
    write_lines(&gold, &[r#"{"id":"u","entities":[{"type":"PER","text":"a"},{"type":"LOC","text":"b"}]}"#]);
    write_lines(&pred, &[r#"{"id":"u","entities":[{"type":"PER","text":"A"},{"type":"LOC","text":"c"}]}"#]);
    let o = run(&["ner-eval", "--gold", p(&gold), "--pred", p(&pred)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "NER-F1 0.500 (P 0.500, R 0.500; tp 1, predicted 2, gold 2)");
}

fn frame_file(path: &Path, corpus: &Corpus, slot_text: impl Fn(&UtterancePair) -> String) {
    let lines: Vec<String> = corpus
        .pairs()
        .iter()
        .map(|pair| {
            let gold = format!("[IN:SAY [SL:TEXT {} ] ]", pair.reference);
            let pred = format!("[IN:SAY [SL:TEXT {} ] ]", slot_text(pair));
            serde_json::json!({"id": pair.id, "gold_frame": gold, "pred_frame": pred}).to_string()
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn entity_file(path: &Path, corpus: &Corpus, text: impl Fn(&UtterancePair) -> String) {
    let lines: Vec<String> = corpus
        .pairs()
        .iter()
        .map(|pair| {
            let first = text(pair).split_whitespace().next().unwrap_or("none").to_owned();
            serde_json::json!({"id": pair.id, "entities": [{"type": "FIRST", "text": first}]}).to_string()
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn report_args(pl: &Pipeline, sets: &Path, out: &Path) -> Vec<String> {
    let mut args: Vec<String> = vec![
        "report".into(),
        "--refs".into(),
        p(&pl.refs).into(),
        "--backend".into(),
        "stub:seed=7,dim=768".into(),
        "-o".into(),
        p(out).into(),
        "--entities-gold".into(),
        p(&sets.join("gold-entities.jsonl")).into(),
    ];
    for name in ["A", "B", "C"] {
        let file = if name == "A" { pl.set_a.clone() } else { sets.join(format!("{name}.jsonl")) };
        args.push("--set".into());
        args.push(format!("{name}={}", p(&file)));
        args.push("--frames".into());
        args.push(format!("{name}={}", p(&sets.join(format!("frames-{name}.jsonl")))));
        args.push("--entities".into());
        args.push(format!("{name}={}", p(&sets.join(format!("entities-{name}.jsonl")))));
    }
    args
}

#[test]
fn report_over_three_sets() {
    let pl = pipeline_inputs(80);
    let sets = pl.dir.path().join("sets");
    assert!(perturb(&pl, "worse", "B", &sets, "2").status.success());
    assert!(perturb(&pl, "better", "C", &sets, "2").status.success());
    let refs = load_corpus(&pl.refs).unwrap();
    entity_file(&sets.join("gold-entities.jsonl"), &refs, |p| p.reference.clone());
    for name in ["A", "B", "C"] {
        let file = if name == "A" { pl.set_a.clone() } else { sets.join(format!("{name}.jsonl")) };
        let corpus = refs.join_hypotheses(&load_corpus(&file).unwrap()).unwrap();
        frame_file(&sets.join(format!("frames-{name}.jsonl")), &corpus, |p| p.hypothesis.clone().unwrap());
        entity_file(&sets.join(format!("entities-{name}.jsonl")), &corpus, |p| p.hypothesis.clone().unwrap());
    }

    let (out1, out2) = (pl.dir.path().join("r1"), pl.dir.path().join("r2"));
    let args1 = report_args(&pl, &sets, &out1);
    let o = run(&args1.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));

    let md = fs::read_to_string(out1.join("report.md")).unwrap();
    assert_eq!(stdout(&o), md);
    let rows: Vec<Vec<String>> = md
        .lines()
        .skip(2)
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_owned()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(md.lines().next().unwrap(), "| Set | N | WER (%) | SemDist | IntentAcc (%) | EM (%) | EM Tree (%) | NER-F1 | Pearson r | Pearson r (all) |");
    assert!(rows.iter().all(|r| r[2] == rows[0][2]), "{md}");
    let semdist: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(semdist[2] < semdist[0] && semdist[0] < semdist[1], "{md}");
    assert!(rows.iter().all(|r| r[4] == "100.00" && r[6] == "100.00"), "{md}");

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out1.join("report.json")).unwrap()).unwrap();
    for (i, row) in rows.iter().enumerate() {
        let s = &json[i]["summary"];
        assert_eq!(format!("{:.2}", 100.0 * s["corpus_wer"].as_f64().unwrap()), row[2]);
        assert_eq!(format!("{:.4}", s["corpus_semdist"].as_f64().unwrap()), row[3]);
        assert_eq!(format!("{:.2}", 100.0 * s["em"].as_f64().unwrap()), row[5]);
        assert_eq!(format!("{:.3}", s["ner_f1"].as_f64().unwrap()), row[7]);
        assert_eq!(s["backend"], "stub:seed=7,dim=768");
        assert_eq!(json[i]["records"].as_array().unwrap().len(), 80);
    }
    let scatter = fs::read_to_string(out1.join("scatter-B.csv")).unwrap();
    assert_eq!(scatter.lines().next(), Some("id,wer,semdist"));
    assert!(out1.join("report.csv").exists() && out1.join("report.config.json").exists());

    let args2 = report_args(&pl, &sets, &out2);
    let o = run(&args2.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", stderr(&o));
    for file in ["report.json", "report.csv", "report.md", "scatter-A.csv", "scatter-B.csv", "scatter-C.csv"] {
        assert_eq!(fs::read(out1.join(file)).unwrap(), fs::read(out2.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn report_rejects_unknown_set_reference() {
    let dir = TempDir::new().unwrap();
    let refs = cat_fixture(dir.path());
    let out = dir.path().join("out");
    let frames = dir.path().join("f.jsonl");
    let set = format!("A={}", p(&refs));
    let fr = format!("Z={}", p(&frames));
    let o = run(&["report", "--refs", p(&refs), "--set", &set, "--frames", &fr, "-o", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("\"Z\""), "{}", stderr(&o));
}
