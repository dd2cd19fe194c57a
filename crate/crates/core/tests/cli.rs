use std::path::Path;
use std::process::{Command, Output};

fn knowcol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knowcol"))
        .args(args)
        .env("KNOWCOL_THREADS", "1")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path) {
    let o = knowcol(&["synth", "--out", s(dir)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_documents_every_command() {
    for cmd in ["extract-subgraph", "train", "gradcheck", "infer", "eval", "synth"] {
        let o = knowcol(&[cmd, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{cmd}");
        assert!(stdout(&o).contains("Usage"), "{cmd}");
    }
    let o = knowcol(&["infer", "--help"]);
    assert!(stdout(&o).contains("[default: 5]"));
    let o = knowcol(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(knowcol(&[]).status.code(), Some(2));
    assert_eq!(knowcol(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(knowcol(&["train"]).status.code(), Some(2));
    assert_eq!(
        knowcol(&["synth", "--out", "x", "--entities", "many"]).status.code(),
        Some(2)
    );
}

#[test]
fn missing_input_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = knowcol(&["train", "--config", s(&tmp.path().join("absent.json"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = knowcol(&[
        "eval",
        "--checkpoint",
        s(&tmp.path().join("absent.kcck")),
        "--testset",
        "t.jsonl",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn bad_temperature_is_a_usage_error_with_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let config = tmp.path().join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    v["train"]["tau"] = serde_json::json!(0.0);
    std::fs::write(&config, v.to_string()).unwrap();
    let o = knowcol(&["train", "--config", s(&config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let config = tmp.path().join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    v["train"]["learning_rate"] = serde_json::json!(0.1);
    std::fs::write(&config, v.to_string()).unwrap();
    assert_eq!(knowcol(&["train", "--config", s(&config)]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_catches_a_corrupted_gradient() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path());
    let config = tmp.path().join("config.json");
    let o = knowcol(&["gradcheck", "--config", s(&config)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("max_rel_error"));
    let o = knowcol(&["gradcheck", "--config", s(&config), "--corrupt-gradient"]);
    assert_eq!(o.status.code(), Some(1));
    for step in ["0", "-1e-4"] {
        let o = knowcol(&["gradcheck", "--config", s(&config), "--fd-step", step]);
        assert_eq!(o.status.code(), Some(2), "fd-step {step}");
    }
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a);
    synth(&b);
    for f in [
        "triples.tsv",
        "catalog.jsonl",
        "image_store.kcle",
        "text_store.kcle",
        "train.jsonl",
        "test.jsonl",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn train_infer_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let o = knowcol(&[
        "train",
        "--config",
        s(&dir.join("config.json")),
        "--epochs",
        "3",
        "--out",
        s(&dir.join("out")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = dir.join("out/checkpoint.kcck");
    assert!(ckpt.exists());
    assert_eq!(
        std::fs::read_to_string(dir.join("out/loss_log.jsonl"))
            .unwrap()
            .lines()
            .count(),
        3
    );

    let preds = dir.join("preds.jsonl");
    let o = knowcol(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--queries",
        s(&dir.join("test.jsonl")),
        "--out",
        s(&preds),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["topk"].as_array().unwrap().len(), 5);

    let o = knowcol(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--testset",
        s(&dir.join("test.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("HM"));
    let report: serde_json::Value = serde_json::from_str(out.lines().last().unwrap()).unwrap();
    assert!(report["harmonic_mean"].is_number());

    let o = knowcol(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--queries",
        s(&dir.join("test.jsonl")),
        "--k",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn extract_subgraph_keeps_the_one_hop_closure() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("t.tsv"),
        "Q1\tP31\tQ2\nQ2\tP279\tQ3\nQ1\tP155\tQ4\nQ1\tP279\tQ5\n",
    )
    .unwrap();
    std::fs::write(dir.join("seeds.txt"), "Q1\n").unwrap();
    let out = dir.join("sub.tsv");
    let o = knowcol(&[
        "extract-subgraph",
        "--triples",
        s(&dir.join("t.tsv")),
        "--seeds",
        s(&dir.join("seeds.txt")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.sort();
    assert_eq!(lines, ["Q1\tP279\tQ5", "Q1\tP31\tQ2"]);

    std::fs::write(dir.join("seeds.txt"), "Q99\n").unwrap();
    let o = knowcol(&[
        "extract-subgraph",
        "--triples",
        s(&dir.join("t.tsv")),
        "--seeds",
        s(&dir.join("seeds.txt")),
        "--out",
        s(&dir.join("none.tsv")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.join("none.tsv").exists());
}
