use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn deskbox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deskbox"))
        .args(args)
        .env_remove("DESKBOX_CONFIG")
        .output()
        .unwrap()
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

fn strip_timing(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap();
    let cut = text.find("\"timing\"").unwrap();
    text[..cut].to_string()
}

#[test]
fn eval_reports_are_byte_identical_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture("mc_questions.jsonl");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for (out, workers) in [(&a, "1"), (&b, "3")] {
        let o = deskbox(&[
            "eval",
            "-m",
            "toy",
            "-d",
            ds.to_str().unwrap(),
            "--shots",
            "2",
            "--seed",
            "5",
            "--workers",
            workers,
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(strip_timing(&a), strip_timing(&b));
    let report: deskbox::RunReport =
        serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    report.verify().unwrap();
    assert_eq!(report.schema_version, 1);
}

#[test]
fn shots_over_pool_fail_validation() {
    let ds = fixture("mc_questions.jsonl");
    let o = deskbox(&["eval", "-d", ds.to_str().unwrap(), "--shots", "50"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());
    let e = error_record(&o);
    assert_eq!(e["error"]["kind"], "validation");
}

#[test]
fn schema_error_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("bad.jsonl");
    fs::write(&ds, "{\"id\":\"a\",\"question\":\"q\",\"choices\":[\"x\"],\"answer\":0}\n{\"id\":\"b\",\"question\":\"q\",\"choices\":[\"x\"]}\n").unwrap();
    let out = dir.path().join("r.json");
    let o = deskbox(&[
        "eval",
        "-d",
        ds.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_record(&o);
    assert_eq!(e["error"]["line"], 2);
    assert!(e["error"]["message"].as_str().unwrap().contains("answer"));
    assert!(!out.exists(), "no partial report");
}

#[test]
fn missing_dataset_is_runtime_failure() {
    let o = deskbox(&["eval", "-d", "/nonexistent/data.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["code"], "io");
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        &["bogus"][..],
        &["eval"][..],
        &["eval", "-d", "x", "--mode", "nope"][..],
        &["estimate", "-p", "1"][..],
    ] {
        let o = deskbox(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        error_record(&o);
    }
    assert_eq!(deskbox(&["--help"]).status.code(), Some(0));
    assert_eq!(deskbox(&["estimate", "--help"]).status.code(), Some(0));
}

#[test]
fn estimate_worked_example_and_preset() {
    let o = deskbox(&[
        "estimate",
        "-p",
        "6738415616",
        "-n",
        "2",
        "-l",
        "32",
        "-b",
        "8",
        "-s",
        "4096",
        "-h",
        "4096",
        "-v",
        "32000",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(
        text.contains("total") && text.contains("71.42 GiB"),
        "{text}"
    );

    let o = deskbox(&[
        "estimate",
        "--preset",
        "llama2-7b",
        "-b",
        "8",
        "-n",
        "2",
        "--json",
    ]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["shape"]["params"], 6_738_415_616u64);
    assert_eq!(v["shape"]["seq_len"], 4096);
    assert!((v["estimate"]["total"].as_f64().unwrap() - 71.42).abs() < 0.005);

    let o = deskbox(&[
        "estimate",
        "--preset",
        "llama2-7b",
        "-p",
        "7000000000",
        "-b",
        "8",
        "-n",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_record(&o)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("--preset"));

    let o = deskbox(&[
        "estimate", "-p", "1", "-n", "1", "-l", "1", "-b", "1", "-s", "1", "-v", "1",
    ]);
    assert!(error_record(&o)["error"]["message"]
        .as_str()
        .unwrap()
        .contains("-h/--hidden"));
}

#[test]
fn estimate_table_reports_discrepancies() {
    let o = deskbox(&["estimate", "--table"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("batch=2 seq_len=4096"));
    assert_eq!(text.matches("discrepancy:").count(), 4, "{text}");
    let o = deskbox(&["estimate", "--table", "--json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"][2]["cells"][0]["min_gpus"], 2);
}

#[test]
fn pack_pad_fraction_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("packed");
    let input = fixture("conversations.jsonl");
    let args = [
        "pack",
        "--kind",
        "instructions",
        "--max-len",
        "1024",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--binary",
    ];
    let o = deskbox(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // lengths 900 600 500 300 200 100 pack as {900,100} {600,300} {500,200}
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["blocks"], 3);
    assert_eq!(summary["pad_tokens"], 24 + 124 + 324);
    assert_eq!(summary["pad_fraction"].as_f64().unwrap(), 472.0 / 3072.0);
    assert_eq!(summary["input_sha256"], summary["output_sha256"]);
    let blocks = deskbox::pack::read_blocks(&out.join("blocks.jsonl")).unwrap();
    let mut lens: Vec<Vec<usize>> = blocks
        .iter()
        .map(|b| b.segments.iter().map(|s| s.end - s.start).collect())
        .collect();
    lens.sort();
    assert_eq!(lens, vec![vec![500, 200], vec![600, 300], vec![900, 100]]);
    assert_eq!(deskbox::pack::read_binary(&out).unwrap(), blocks);

    let names = [
        "blocks.jsonl",
        "items.jsonl",
        "summary.json",
        "tokens.bin",
        "segments.idx",
    ];
    let first: Vec<Vec<u8>> = names
        .iter()
        .map(|n| fs::read(out.join(n)).unwrap())
        .collect();
    assert!(deskbox(&args).status.success());
    let second: Vec<Vec<u8>> = names
        .iter()
        .map(|n| fs::read(out.join(n)).unwrap())
        .collect();
    assert_eq!(first, second);
}

#[test]
fn pack_pretrain_documents() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = deskbox(&[
        "pack",
        "--kind",
        "pretrain",
        "--max-len",
        "16",
        "--separator",
        "0",
        "-i",
        fixture("documents.jsonl").to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 19 + 10 + 13 bytes and two separators: 44 tokens, blocks of 16, 16, 12
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["tokens"], 44);
    assert_eq!(summary["pad_fraction"].as_f64().unwrap(), 4.0 / 48.0);
}

#[test]
fn pack_empty_corpus_warns() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("p");
    let o = deskbox(&[
        "pack",
        "--kind",
        "instructions",
        "--max-len",
        "8",
        "-i",
        empty.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["blocks"], 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning: corpus is empty"));
}

#[test]
fn pack_oversize_needs_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let input = fixture("conversations.jsonl");
    let base = [
        "pack",
        "--kind",
        "instructions",
        "--max-len",
        "550",
        "-i",
        input.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
    ];
    let o = deskbox(&base);
    assert_eq!(o.status.code(), Some(1));
    let msg = error_record(&o)["error"]["message"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(msg.contains("line 1") && msg.contains("line 2"), "{msg}");
    let mut args = base.to_vec();
    args.push("--skip-oversize");
    let o = deskbox(&args);
    assert!(o.status.success());
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["skipped"].as_array().unwrap().len(), 2);
}

#[test]
fn pack_mixture_sources() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let flan = format!("flan={}:50", fixture("documents.jsonl").display());
    let alpaca = format!("alpaca={}:50", fixture("conversations.jsonl").display());
    let o = deskbox(&[
        "pack",
        "--kind",
        "instructions",
        "--max-len",
        "1024",
        "--source",
        &flan,
        "--source",
        &alpaca,
        "--total-samples",
        "40",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let items = fs::read_to_string(out.join("items.jsonl")).unwrap();
    assert_eq!(items.lines().count(), 40);
    assert!(items.contains("\"flan\"") && items.contains("\"alpaca\""));
}

#[test]
fn config_file_from_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("deskbox.toml");
    let out = dir.path().join("r.json");
    fs::write(
        &cfg,
        format!(
            "[eval]\ndataset = {:?}\nmode = \"letter_options\"\nshots = 1\noutput = {:?}\n",
            fixture("mc_questions.jsonl"),
            out
        ),
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_deskbox"))
        .args(["eval", "--seed", "2"])
        .env("DESKBOX_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["config"]["mode"], "letter_options");
    assert_eq!(v["config"]["seed"], 2);
    assert_eq!(v["config"]["shots"], 1);
}
