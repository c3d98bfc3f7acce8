use std::path::Path;
use std::process::{Command, Output};

fn headline(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headline"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "synth_docs = 120\nlda_k = 7\nlda_iterations = 30\nembed_dim = 8\nhidden = 6\nfilters = 4\nattn_dim = 6\n\
extractor_epochs = 1\nabstractor_epochs = 1\npredictor_epochs = 2\nrl_steps = 3\nrl_batch_size = 8\n";

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        let o = headline(&["synth", "--seed", "7", "--set", "synth_docs=50", "--out", out], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = std::fs::read(d.join("a/corpus.jsonl")).unwrap();
    let b = std::fs::read(d.join("b/corpus.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn evaluate_without_generations_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = headline(&["evaluate", "--out", "run"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("generations.jsonl"), "{}", stderr(&o));
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = headline(&["frobnicate"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));

    std::fs::write(d.join("bad.conf"), "seed = 1\nwidth = 3\n").unwrap();
    let o = headline(&["synth", "--config", "bad.conf"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("width"), "{}", stderr(&o));

    let o = headline(&["synth", "--set", "rl_lr=fast", "--seed", "1"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("rl_lr"), "{}", stderr(&o));

    let o = headline(&["synth"], d);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let o = headline(&["ingest", "missing.jsonl"], d);
    assert!(!o.status.success());
}

#[test]
fn ingest_copies_a_valid_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("in.jsonl"),
        "{\"id\":\"a\",\"sentences\":[[\"the\",\"cat\"]],\"headline\":[\"cat\"],\"comments\":4,\"split\":\"train\"}\n",
    )
    .unwrap();
    let o = headline(&["ingest", "in.jsonl", "--out", "run"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("run/corpus.jsonl").exists());
}

#[test]
fn grad_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = headline(&["grad-check", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("critic"));
}

#[test]
fn staged_pipeline_emits_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("small.conf"), SMALL).unwrap();
    let stages = [
        "synth",
        "train-lda",
        "build-labels",
        "pretrain-extractor",
        "pretrain-abstractor",
        "train-predictor",
        "train-rl",
        "generate",
        "evaluate",
        "analyze",
    ];
    for s in stages {
        let o = headline(&[s, "--config", "small.conf", "--seed", "4", "--out", "run"], d);
        assert!(o.status.success(), "{s}: {}", stderr(&o));
    }
    let run = d.join("run");
    for f in [
        "corpus.jsonl",
        "vocab.txt",
        "lda.json",
        "topics.jsonl",
        "labels.jsonl",
        "extractor.ckpt",
        "abstractor.ckpt",
        "predictor.ckpt",
        "extractor.rl.ckpt",
        "abstractor.rl.ckpt",
        "critic.ckpt",
        "reward_log.csv",
        "generations.jsonl",
        "evaluation.csv",
        "attractiveness.csv",
        "significance.csv",
        "features.csv",
        "heatmap.csv",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let eval = std::fs::read_to_string(run.join("evaluation.csv")).unwrap();
    for m in ["porl-hg", "prefix", "random", "ir-bm25", "seq2seq-approx"] {
        assert!(eval.contains(m), "{m}");
    }
    assert_eq!(std::fs::read_to_string(run.join("reward_log.csv")).unwrap().lines().count(), 4);

    // rerunning a stage with the same config reproduces its outputs
    let before = std::fs::read(run.join("reward_log.csv")).unwrap();
    let gens = std::fs::read(run.join("generations.jsonl")).unwrap();
    for s in ["train-rl", "generate"] {
        let o = headline(&[s, "--config", "small.conf", "--seed", "4", "--out", "run"], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(before, std::fs::read(run.join("reward_log.csv")).unwrap());
    assert_eq!(gens, std::fs::read(run.join("generations.jsonl")).unwrap());
}
