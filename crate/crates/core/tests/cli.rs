use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use shiftseq::corpus::load_corpus;

fn shiftseq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftseq"))
        .args(args)
        .env_remove("SHIFTSEQ_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn error_of(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{line:?} is not JSON: {e}"))
}

#[test]
fn help_lists_subcommands() {
    let out = shiftseq(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["synth", "train", "generate", "eval", "gradcheck"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn bad_arguments_exit_2_with_json_error() {
    let out = shiftseq(&["synth", "--n", "many"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_of(&out)["error"], "usage");

    let out = shiftseq(&["eval"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_of(&out);
    assert_eq!(err["error"], "usage");
    assert!(err["message"].as_str().unwrap().contains("checkpoint"));
}

#[test]
fn missing_corpus_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let out = shiftseq(&["train", "--corpus", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("absent.jsonl"));
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let out = shiftseq(&["synth", "--n", "40", "--seed", seed, "--out", path(&out_dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), path(&out_dir.join("corpus.jsonl")));
        assert!(out_dir.join("synth_config.json").exists());
        std::fs::read(out_dir.join("corpus.jsonl")).unwrap()
    };
    let a = run("a", "4");
    assert_eq!(a, run("b", "4"));
    assert_ne!(a, run("c", "5"));
}

#[test]
fn flags_override_config_file_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n = 15\nseed = 2\npreset = \"population\"\n").unwrap();

    let from_file = dir.path().join("file");
    let out = shiftseq(&["--config", path(&cfg), "synth", "--out", path(&from_file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_corpus(from_file.join("corpus.jsonl")).unwrap().len(), 15);
    let logged: Value = serde_json::from_slice(&std::fs::read(from_file.join("synth_config.json")).unwrap()).unwrap();
    assert_eq!(logged["preset"], "population");
    assert_eq!(logged["seed"], 2);

    let flagged = dir.path().join("flag");
    let out = Command::new(env!("CARGO_BIN_EXE_shiftseq"))
        .args(["synth", "--n", "9", "--out", path(&flagged)])
        .env("SHIFTSEQ_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_corpus(flagged.join("corpus.jsonl")).unwrap().len(), 9);

    std::fs::write(&cfg, "n = 15\nbatch = 3\n").unwrap();
    let out = shiftseq(&["--config", path(&cfg), "synth", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = error_of(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("batch"));
}

#[test]
fn train_generate_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let ok = |out: Output| {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    ok(shiftseq(&["synth", "--n", "60", "--seed", "1", "--out", path(&d("s"))]));
    let corpus = d("s/corpus.jsonl");
    let best = ok(shiftseq(&[
        "train", "--corpus", path(&corpus), "--epochs", "1", "--d-model", "16", "--heads", "2",
        "--ff-dim", "32", "--val-jsd", "false", "--out", path(&d("t")),
    ]));
    assert_eq!(best.trim(), path(&d("t/best.ckpt")));
    for f in ["best.ckpt", "last.ckpt", "train_log.jsonl", "train_summary.json", "train_config.json"] {
        assert!(d("t").join(f).exists(), "{f} not written");
    }

    let generated = ok(shiftseq(&[
        "generate", "--checkpoint", path(&d("t/best.ckpt")), "--corpus", path(&corpus), "--out", path(&d("g")),
    ]));
    let generated = load_corpus(generated.trim()).unwrap();
    assert!(!generated.is_empty());
    assert!(generated.pairs.iter().all(|p| p.mask2.observed_count() == 96));

    let report: Value = serde_json::from_str(&ok(shiftseq(&[
        "eval", "--checkpoint", path(&d("t/best.ckpt")), "--corpus", path(&corpus), "--out", path(&d("e")),
    ])))
    .unwrap();
    for key in ["start", "end", "duration", "type", "average"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(d("e/report.json").exists());

    let out = shiftseq(&[
        "train", "--corpus", path(&corpus), "--resume", path(&d("t/last.ckpt")), "--lr", "0.5", "--out",
        path(&d("r")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_of(&out)["message"].as_str().unwrap().contains("lr"));
}

#[test]
fn gradcheck_reports_each_check() {
    let out = shiftseq(&["gradcheck", "--coords", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 26);
    assert!(text.contains("matmul") && text.contains("model_lstm_attention"));
}
