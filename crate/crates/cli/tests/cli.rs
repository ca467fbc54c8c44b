use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_symscreen");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("SYMSCREEN_CONFIG")
        .env_remove("SYMSCREEN_TOKEN")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SUBCOMMANDS: [&[&str]; 9] = [
    &["synth"],
    &["ingest"],
    &["stats"],
    &["extract"],
    &["eval"],
    &["screen"],
    &["serve"],
    &["taxonomy", "show"],
    &["compact"],
];

#[test]
fn synth_writes_corpus_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["synth", "--seed", "1", "--cases", "50", "--controls", "50", "--out", "data/"]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["patients.jsonl", "notes.jsonl", "gold.jsonl"] {
        assert!(dir.path().join("data").join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let patients = std::fs::read_to_string(dir.path().join("data/patients.jsonl")).unwrap();
    assert_eq!(patients.lines().count(), 100);
}

#[test]
fn eval_prints_a_per_category_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "1", "--cases", "20", "--controls", "20", "--out", "data"]);
    ok(d, &["extract", "--backend", "mock", "--corpus", "data", "--out", "d.jsonl", "--quiet"]);
    let table = ok(d, &["eval", "--gold", "data/gold.jsonl", "--detections", "d.jsonl"]);
    let lines: Vec<&str> = table.lines().collect();
    for h in ["Category", "Precision", "Recall", "F1"] {
        assert!(lines[0].contains(h), "{}", lines[0]);
    }
    assert!(table.contains("Not going to school"));
    assert!(table.contains("Suicidal thoughts"));
    let avg = lines.iter().find(|l| l.starts_with("Average")).expect("average row");
    assert!(avg.ends_with("1.00"), "{avg}");
}

#[test]
fn unknown_backend_exits_1_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "1", "--cases", "5", "--controls", "5", "--out", "data"]);
    let out = run(d, &["extract", "--backend", "nosuch", "--corpus", "data", "--out", "d.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nosuch"));
    assert!(!d.join("d.jsonl").exists());
}

#[test]
fn backend_errors_exit_2_after_writing_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "1", "--cases", "2", "--controls", "2", "--out", "data"]);
    std::fs::write(
        d.join("c.toml"),
        "[[backends]]\nbackend_id = \"down\"\nkind = \"chat\"\nendpoint = \"http://127.0.0.1:1\"\nmodel_name = \"m\"\nmax_retries = 0\ntimeout_secs = 2\n",
    )
    .unwrap();
    let out = run(
        d,
        &[
            "--config",
            "c.toml",
            "extract",
            "--backend",
            "down",
            "--corpus",
            "data",
            "--out",
            "d.jsonl",
            "--categories",
            "no_motivation",
        ],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let dets = std::fs::read_to_string(d.join("d.jsonl")).unwrap();
    assert!(dets.lines().count() > 0);
    assert!(dets.lines().all(|l| l.contains("\"backend_error\"")));
    let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("d.jsonl.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["deterministic"], false);
    assert_eq!(meta["kind"], "chat");
}

#[test]
fn bad_flags_exit_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["nosuch"]).status.code(), Some(1));
    assert_eq!(run(d, &["eval", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(d, &["synth", "--seed", "x", "--out", "o"]).status.code(), Some(1));
    assert_eq!(run(d, &[]).status.code(), Some(1));
    assert_eq!(run(d, &["--version"]).status.code(), Some(0));
    let missing = run(d, &["eval", "--gold", "none.jsonl", "--detections", "none.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help_and_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    for sub in SUBCOMMANDS {
        let mut args = sub.to_vec();
        args.push("--help");
        let help = ok(dir.path(), &args);
        assert!(help.contains("--format"), "{sub:?} help lacks --format");
        assert!(help.contains("Usage"), "{sub:?}");
    }
}

fn assert_jsonl(text: &str) {
    assert!(!text.is_empty());
    for line in text.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap_or_else(|e| panic!("not JSON: {line}: {e}"));
    }
}

#[test]
fn jsonl_output_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let j = |args: &[&str]| {
        let mut all = vec!["--format", "jsonl"];
        all.extend_from_slice(args);
        ok(d, &all)
    };
    assert_jsonl(&j(&["synth", "--seed", "3", "--cases", "15", "--controls", "15", "--out", "data"]));
    assert_jsonl(&j(&["ingest", "--corpus", "data", "--name", "demo", "--data-dir", "state"]));
    assert_jsonl(&j(&["stats", "--corpus", "data"]));
    assert_jsonl(&j(&["extract", "--backend", "keyword", "--corpus", "data", "--out", "d.jsonl", "--quiet"]));
    let eval = j(&["eval", "--gold", "data/gold.jsonl", "--detections", "d.jsonl"]);
    assert_jsonl(&eval);
    assert_eq!(eval.lines().count(), 16);
    let bench = j(&["screen", "--detections", "d.jsonl", "--corpus", "data", "--models", "logreg,tree", "--k", "3"]);
    assert_jsonl(&bench);
    assert_eq!(bench.lines().count(), 2);
    let taxonomy = j(&["taxonomy", "show"]);
    assert_jsonl(&taxonomy);
    assert_eq!(taxonomy.lines().count(), 16);
    assert_jsonl(&j(&["compact", "--data-dir", "state"]));
}

#[test]
fn ingest_refuses_to_overwrite_an_installed_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--seed", "3", "--cases", "5", "--controls", "5", "--out", "data"]);
    ok(d, &["ingest", "--corpus", "data", "--name", "demo", "--data-dir", "state"]);
    assert!(d.join("state/corpora/demo/notes.jsonl").exists());
    assert_eq!(run(d, &["ingest", "--corpus", "data", "--name", "demo", "--data-dir", "state"]).status.code(), Some(1));
    assert_eq!(run(d, &["ingest", "--corpus", "data", "--name", "../x", "--data-dir", "state"]).status.code(), Some(1));
}

#[test]
fn config_file_supplies_defaults_and_backends() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("symscreen.toml"),
        "[defaults]\nseed = 5\nk = 3\n\n[[backends]]\nbackend_id = \"noisy\"\nkind = \"noisy_mock\"\nseed = 9\nfp_rate = 0.1\nfn_rate = 0.2\n",
    )
    .unwrap();
    ok(d, &["synth", "--cases", "20", "--controls", "20", "--out", "data"]);
    let out = Command::new(BIN)
        .args(["--format", "jsonl", "extract", "--backend", "noisy", "--corpus", "data", "--out", "d.jsonl", "--quiet"])
        .current_dir(d)
        .env("SYMSCREEN_CONFIG", d.join("symscreen.toml"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(meta["kind"], "noisy_mock");
    assert_eq!(meta["seed"], 9);
    let mock = run(
        d,
        &[
            "--config",
            "symscreen.toml",
            "--format",
            "jsonl",
            "extract",
            "--backend",
            "mock",
            "--corpus",
            "data",
            "--out",
            "m.jsonl",
            "--quiet",
        ],
    );
    let mock: serde_json::Value = serde_json::from_slice(&mock.stdout).unwrap();
    assert_eq!(mock["seed"], 5);
    ok(
        d,
        &[
            "--config",
            "symscreen.toml",
            "screen",
            "--detections",
            "d.jsonl",
            "--corpus",
            "data",
            "--models",
            "logreg",
            "--out",
            "b.json",
        ],
    );
    let bench: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(bench["meta"]["k"], 3);
    assert_eq!(bench["meta"]["seed"], 5);
    assert_eq!(bench["results"][0]["folds"].as_array().unwrap().len(), 3);
    std::fs::write(d.join("bad.toml"), "[[backends]]\nbackend_id = \"x\"\nkind = \"chat\"\n").unwrap();
    assert_eq!(run(d, &["--config", "bad.toml", "taxonomy", "show"]).status.code(), Some(1));
}

fn pipeline(d: &Path) -> Vec<(String, Vec<u8>)> {
    ok(d, &["synth", "--seed", "11", "--cases", "40", "--controls", "40", "--out", "data"]);
    ok(
        d,
        &["extract", "--backend", "mock", "--corpus", "data", "--out", "mock.jsonl", "--quiet", "--parallelism", "8"],
    );
    ok(
        d,
        &["extract", "--backend", "keyword", "--corpus", "data", "--out", "kw.jsonl", "--quiet", "--parallelism", "3"],
    );
    let eval = ok(d, &["eval", "--gold", "data/gold.jsonl", "--detections", "kw.jsonl"]);
    let table = ok(
        d,
        &["screen", "--detections", "mock.jsonl", "--corpus", "data", "--seed", "7", "--k", "5", "--out", "bench.json"],
    );
    let mut out: Vec<(String, Vec<u8>)> = [
        "data/patients.jsonl",
        "data/notes.jsonl",
        "data/gold.jsonl",
        "mock.jsonl",
        "mock.jsonl.meta.json",
        "kw.jsonl",
        "bench.json",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(d.join(f)).unwrap()))
    .collect();
    out.push(("eval stdout".into(), eval.into_bytes()));
    out.push(("screen stdout".into(), table.into_bytes()));
    out
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between runs");
    }
    let bench: serde_json::Value =
        serde_json::from_slice(&first.iter().find(|(n, _)| n == "bench.json").unwrap().1).unwrap();
    assert_eq!(bench["meta"]["backend_ids"], serde_json::json!(["mock"]));
    assert_eq!(bench["results"].as_array().unwrap().len(), 6);
}

#[test]
fn serve_prints_its_address_and_answers() {
    use std::io::{BufRead, BufReader};
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(BIN)
        .args(["serve", "--listen", "127.0.0.1:0", "--data-dir"])
        .arg(dir.path().join("state"))
        .stdout(std::process::Stdio::piped())
        .env_remove("SYMSCREEN_TOKEN")
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect(&line).to_string();
    let body = reqwest::blocking::get(format!("{base}/api/taxonomy")).unwrap().text().unwrap();
    let _ = child.kill();
    let _ = child.wait();
    assert!(body.contains("not_going_to_school"));
}
