//! Runs the `hiersum` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

use hiersum::corpus::load_corpus;
use hiersum::eval::parse_tsv;

fn hiersum(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiersum"))
        .args(args)
        .current_dir(dir)
        .env_remove("HIERSUM_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const CONFIG: &str = "d = 16\nd_h = 16\nheads = 2\nlayers = 1\nepochs = 2\nlr = 1e-3\nseed = 4\n";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&hiersum(
        p,
        &[
            "gen",
            "--seed",
            "1",
            "--n-docs",
            "12",
            "--out",
            "train.jsonl",
        ],
    ));
    ok(&hiersum(
        p,
        &["gen", "--seed", "2", "--n-docs", "4", "--out", "val.jsonl"],
    ));
    std::fs::write(p.join("cfg.toml"), CONFIG).unwrap();
    dir
}

fn train(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--train",
        "train.jsonl",
        "--val",
        "val.jsonl",
        "--config",
        "cfg.toml",
        "--out",
        out,
    ];
    args.extend_from_slice(extra);
    hiersum(dir, &args)
}

#[test]
fn gen_is_deterministic_and_label_marks_planted_sentences() {
    let dir = setup();
    let p = dir.path();
    let again = ok(&hiersum(p, &["gen", "--seed", "1", "--n-docs", "12"]));
    assert_eq!(
        again.as_bytes(),
        std::fs::read(p.join("train.jsonl")).unwrap()
    );

    ok(&hiersum(
        p,
        &["label", "--input", "train.jsonl", "--out", "labeled.jsonl"],
    ));
    for doc in load_corpus(p.join("labeled.jsonl")).unwrap() {
        let labels = doc.labels.as_ref().unwrap();
        let picked: Vec<&str> = (0..doc.n())
            .filter(|&i| labels[i] == 1)
            .map(|i| doc.sentences[i].text.as_str())
            .collect();
        let abstract_text: Vec<&str> = doc.abstract_sents.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(picked, abstract_text);
    }
}

#[test]
fn training_is_reproducible_and_seed_overrides_apply() {
    let dir = setup();
    let p = dir.path();
    ok(&train(p, "a", &[]));
    ok(&train(p, "b", &[]));
    for f in ["metrics.csv", "model.json"] {
        assert_eq!(
            std::fs::read(p.join("a").join(f)).unwrap(),
            std::fs::read(p.join("b").join(f)).unwrap()
        );
    }
    let metrics = std::fs::read_to_string(p.join("a/metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,l_s,l_c,val_r1,val_r2,val_rl\n"));
    assert_eq!(metrics.lines().count(), 3);

    let env_run = Command::new(env!("CARGO_BIN_EXE_hiersum"))
        .args([
            "train",
            "--train",
            "train.jsonl",
            "--val",
            "val.jsonl",
            "--config",
            "cfg.toml",
            "--out",
            "c",
        ])
        .current_dir(p)
        .env("HIERSUM_SEED", "11")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    ok(&env_run);
    ok(&train(p, "d", &["--seed", "11"]));
    let read = |d: &str| std::fs::read(p.join(d).join("model.json")).unwrap();
    assert_eq!(read("c"), read("d"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn resume_continues_to_the_configured_epochs() {
    let dir = setup();
    let p = dir.path();
    std::fs::write(
        p.join("cfg.toml"),
        CONFIG.replace("epochs = 2", "epochs = 1"),
    )
    .unwrap();
    ok(&train(p, "r", &[]));
    std::fs::write(p.join("cfg.toml"), CONFIG).unwrap();
    ok(&train(p, "r", &["--resume"]));
    ok(&train(p, "full", &[]));
    assert_eq!(
        std::fs::read(p.join("r/metrics.csv")).unwrap(),
        std::fs::read(p.join("full/metrics.csv")).unwrap()
    );
}

#[test]
fn extract_and_evaluate() {
    let dir = setup();
    let p = dir.path();
    ok(&train(p, "m", &[]));
    let out = ok(&hiersum(
        p,
        &[
            "extract",
            "--checkpoint",
            "m/model.json",
            "--input",
            "val.jsonl",
            "--k",
            "3",
        ],
    ));
    let lines: Vec<serde_json::Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 4);
    for rec in &lines {
        let sel = rec["selected"].as_array().unwrap();
        assert_eq!(sel.len(), 3);
        assert_eq!(rec["sentences"].as_array().unwrap().len(), 3);
        assert!(rec["id"].is_string());
        let idx: Vec<u64> = sel.iter().map(|v| v.as_u64().unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
    }

    for scorer in ["model", "lead", "oracle"] {
        let tsv = ok(&hiersum(
            p,
            &[
                "evaluate",
                "--input",
                "val.jsonl",
                "--scorer",
                scorer,
                "--checkpoint",
                "m/model.json",
            ],
        ));
        let rows = parse_tsv(&tsv).unwrap();
        assert_eq!(rows[0].table, "macro");
        assert_eq!(rows[0].count, 4);
        let sections: usize = rows
            .iter()
            .filter(|r| r.table == "sections")
            .map(|r| r.count)
            .sum();
        assert_eq!(sections, 4);
    }
    let oracle = parse_tsv(&ok(&hiersum(
        p,
        &["evaluate", "--input", "val.jsonl", "--scorer", "oracle"],
    )))
    .unwrap();
    assert_eq!(oracle[0].rouge.r1.f1, 1.0);
}

#[test]
fn rouge_scores_summary_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("c.jsonl"),
        "{\"id\":\"x\",\"sentences\":[\"the cat sat\"]}\n",
    )
    .unwrap();
    std::fs::write(
        p.join("r.jsonl"),
        "{\"id\":\"x\",\"sentences\":[\"the cat\"]}\n",
    )
    .unwrap();
    let rows = parse_tsv(&ok(&hiersum(
        p,
        &[
            "rouge",
            "--candidates",
            "c.jsonl",
            "--references",
            "r.jsonl",
        ],
    )))
    .unwrap();
    let macro_row = rows.last().unwrap();
    assert!((macro_row.rouge.r1.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((macro_row.rouge.r1.f1 - 0.8).abs() < 1e-12);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&hiersum(dir.path(), &["gradcheck", "--seeds", "2"]));
    assert!(out.lines().any(|l| l.starts_with("end_to_end\t")));
    assert!(out.lines().all(|l| l.ends_with("\tok")));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(hiersum(p, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        hiersum(p, &["extract", "--input", "val.jsonl"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        hiersum(
            p,
            &["evaluate", "--input", "val.jsonl", "--scorer", "model"]
        )
        .status
        .code(),
        Some(1)
    );

    std::fs::write(p.join("bad.jsonl"), "{\"id\": 1}\n").unwrap();
    assert_eq!(
        hiersum(p, &["label", "--input", "bad.jsonl"]).status.code(),
        Some(2)
    );
    assert_eq!(
        hiersum(p, &["label", "--input", "missing.jsonl"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        hiersum(
            p,
            &[
                "extract",
                "--checkpoint",
                "val.jsonl",
                "--input",
                "val.jsonl"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    std::fs::write(p.join("cfg.toml"), "heads = 3\n").unwrap();
    assert_eq!(train(p, "x", &[]).status.code(), Some(1));
}
