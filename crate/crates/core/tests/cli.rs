use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fashionkb"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    let out = bin().args(args).current_dir(cwd).output().unwrap();
    out
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
seed = 5

[paths]
archive = "archive.jsonl"
work_dir = "out"

[model]
garment_hidden = 6
slot_hidden = 6
slot_embedding = 4

[train]
epochs = 2

[stages]
train = true
"#;

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_on_every_subcommand() {
    let top = run(&["--help"], Path::new("."));
    assert!(top.status.success());
    for sub in [
        "gen-synthetic",
        "ingest",
        "filter",
        "train",
        "predict",
        "extract",
        "serve",
        "query",
        "run",
        "train-ad",
    ] {
        let out = run(&[sub, "--help"], Path::new("."));
        assert!(out.status.success(), "{sub}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub}"
        );
    }
}

#[test]
fn missing_checkpoint_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("in.jsonl"), "").unwrap();
    let out = run(
        &[
            "predict",
            "--ckpt",
            "nope.ckpt",
            "--in",
            "in.jsonl",
            "--out",
            "p.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "[stages]\nwhatever = 1\n").unwrap();
    let out = run(&["--config", "bad.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    std::fs::write(
        dir.path().join("neg.toml"),
        "[filter]\nmax_face_body_ratio = -1.0\n",
    )
    .unwrap();
    let out = run(&["--config", "neg.toml", "run"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("broken.fkbs"), b"FKBS\x01garbage").unwrap();
    let out = run(&["query", "--kb", "broken.fkbs"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_equals_manual_stages_and_reports_add_up() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("fkb.toml"), CONFIG).unwrap();
    ok(
        &[
            "--seed",
            "5",
            "gen-synthetic",
            "--out",
            "archive.jsonl",
            "--truth",
            "truth.json",
            "--posts",
            "240",
            "--violation-fraction",
            "0.2",
            "--ad-fraction",
            "0.1",
            "--untagged-fraction",
            "0.15",
            "--duplicate-fraction",
            "0.05",
        ],
        d,
    );
    ok(&["--config", "fkb.toml", "run"], d);
    let out = d.join("out");
    let ingest = json(&out.join("ingest_report.json"));
    let filter = json(&out.join("filter_report.json"));
    let predict = json(&out.join("predict_report.json"));
    let extract = json(&out.join("extract_report.json"));
    let n = |v: &serde_json::Value| v.as_u64().unwrap();
    assert_eq!(
        n(&ingest["read_count"]),
        n(&ingest["kept_count"])
            + n(&ingest["dropped_no_hashtag"])
            + n(&ingest["dropped_duplicate"])
    );
    assert!(n(&ingest["dropped_duplicate"]) > 0 && n(&ingest["dropped_no_hashtag"]) > 0);
    assert_eq!(n(&filter["read"]), n(&ingest["kept_count"]));
    let dropped: u64 = filter["dropped"].as_object().unwrap().values().map(n).sum();
    assert_eq!(n(&filter["kept"]) + dropped, n(&filter["read"]));
    assert_eq!(n(&predict["read"]), n(&filter["kept"]));
    assert_eq!(n(&extract["posts"]), n(&filter["kept"]));
    assert!(n(&extract["triplets"]) > 0);

    std::fs::create_dir(d.join("manual")).unwrap();
    fn with<'a>(rest: &[&'a str]) -> Vec<&'a str> {
        [&["--config", "fkb.toml"][..], rest].concat()
    }
    ok(
        &with(&[
            "ingest",
            "--archive",
            "archive.jsonl",
            "--out",
            "manual/i.jsonl",
        ]),
        d,
    );
    ok(
        &with(&[
            "filter",
            "--in",
            "manual/i.jsonl",
            "--out",
            "manual/f.jsonl",
        ]),
        d,
    );
    ok(
        &with(&[
            "train",
            "--clean",
            "manual/f.jsonl",
            "--out",
            "manual/m.ckpt.json",
        ]),
        d,
    );
    ok(
        &with(&[
            "predict",
            "--ckpt",
            "manual/m.ckpt.json",
            "--in",
            "manual/f.jsonl",
            "--out",
            "manual/p.jsonl",
        ]),
        d,
    );
    ok(
        &with(&[
            "extract",
            "--predictions",
            "manual/p.jsonl",
            "--in",
            "manual/f.jsonl",
            "--kb",
            "manual/kb.fkbs",
        ]),
        d,
    );
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("out/filtered.jsonl"), read("manual/f.jsonl"));
    assert_eq!(read("out/model.ckpt.json"), read("manual/m.ckpt.json"));
    assert_eq!(read("out/kb.fkbs"), read("manual/kb.fkbs"));

    // extract straight from the checkpoint agrees with the predictions file
    ok(
        &with(&[
            "extract",
            "--ckpt",
            "manual/m.ckpt.json",
            "--in",
            "manual/f.jsonl",
            "--kb",
            "manual/kb2.fkbs",
        ]),
        d,
    );
    assert_eq!(read("manual/kb.fkbs"), read("manual/kb2.fkbs"));

    let answer: serde_json::Value =
        serde_json::from_str(&ok(&["query", "--kb", "out/kb.fkbs", "limit=3"], d)).unwrap();
    assert_eq!(answer["limit"], 3);
    assert_eq!(
        answer["total"].as_u64().unwrap(),
        n(&extract["distinct_keys"])
    );
    let bad = run(&["query", "--kb", "out/kb.fkbs", "occasion=gala"], d);
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown_facet_value"));
}

#[test]
fn ad_classifier_trains_from_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "gen-synthetic",
            "--out",
            "a.jsonl",
            "--truth",
            "t.json",
            "--posts",
            "300",
            "--ad-fraction",
            "0.3",
        ],
        d,
    );
    let report: serde_json::Value = serde_json::from_str(&ok(
        &[
            "train-ad", "--in", "a.jsonl", "--truth", "t.json", "--out", "ad.json",
        ],
        d,
    ))
    .unwrap();
    assert!(
        report["heldout_accuracy"].as_f64().unwrap() > 0.9,
        "{report}"
    );
    ok(
        &[
            "filter",
            "--in",
            "a.jsonl",
            "--out",
            "f.jsonl",
            "--ad-model",
            "ad.json",
            "--report",
            "r.json",
        ],
        d,
    );
    assert!(json(&d.join("r.json"))["kept"].as_u64().unwrap() > 0);
}
