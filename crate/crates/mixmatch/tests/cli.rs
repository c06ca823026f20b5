mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{data_dir, snapshot};

fn mixmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixmatch")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(dir: &Path) -> PathBuf {
    let models = dir.join("models");
    let o = mixmatch(&[
        "train",
        "--corpus",
        data_dir().join("toy_sentiment.txt").to_str().unwrap(),
        "--labeled",
        data_dir().join("toy_sentiment.tsv").to_str().unwrap(),
        "--out",
        models.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    models
}

fn write_config(dir: &Path, name: &str, json: serde_json::Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(&json).unwrap()).unwrap();
    p
}

fn generate_config(dir: &Path, models: &Path, out: &str) -> PathBuf {
    write_config(
        dir,
        "generate.json",
        serde_json::json!({
            "task": "generate",
            "preset": "prompted-sentiment",
            "model_dir": models,
            "prompts": ["the food", "we"],
            "length": 7,
            "samples_per_prompt": 5,
            "epochs": 4,
            "seed": 5,
            "out_dir": out,
        }),
    )
}

#[test]
fn train_writes_three_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let models = train(dir.path());
    for f in ["vocab.txt", "mlm.json", "classifier.json"] {
        assert!(models.join(f).is_file(), "{f}");
    }
    let vocab = fs::read_to_string(models.join("vocab.txt")).unwrap();
    assert!(vocab.starts_with("[MASK]\n[UNK]\n"));
}

#[test]
fn train_reports_classifier_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let o = mixmatch(&[
        "train",
        "--corpus",
        data_dir().join("toy_sentiment.txt").to_str().unwrap(),
        "--labeled",
        data_dir().join("toy_sentiment.tsv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(stdout(&o).contains("training accuracy"), "{}", stdout(&o));
}

#[test]
fn train_missing_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let o = mixmatch(&["train", "--corpus", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn train_rejects_nonpositive_smoothing() {
    let dir = tempfile::tempdir().unwrap();
    for k in ["0", "-1"] {
        let o = mixmatch(&[
            "train",
            "--corpus",
            data_dir().join("toy_sentiment.txt").to_str().unwrap(),
            "--k",
            k,
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(2), "k={k}: {}", stderr(&o));
        assert!(stderr(&o).contains("smoothing"));
    }
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none(), "nothing written");
}

#[test]
fn generate_writes_samples_report_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let models = train(dir.path());
    let out = dir.path().join("out");
    let cfg = generate_config(dir.path(), &models, "out");
    let o = mixmatch(&["generate", "--config", cfg.to_str().unwrap(), "--trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let samples = fs::read_to_string(out.join("samples.txt")).unwrap();
    let lines: Vec<&str> = samples.lines().collect();
    assert_eq!(lines.len(), 10);
    assert!(lines[..5].iter().all(|l| l.starts_with("the food ")));
    assert!(lines[5..].iter().all(|l| l.starts_with("we ")));
    assert!(lines.iter().all(|l| l.split(' ').count() == 7));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 10);
    assert!(report["internal_accuracy"].is_f64());

    let trace = fs::read_to_string(out.join("traces/chain_00000.csv")).unwrap();
    assert!(trace.starts_with("step,position,old_id,new_id,delta_e,accept_prob,accepted,total_e\n"));
    // 4 epochs over the 5 free positions.
    assert_eq!(trace.lines().count(), 1 + 20);
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 10);
}

#[test]
fn fixed_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let models = train(dir.path());
    let cfg = generate_config(dir.path(), &models, "unused");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mixmatch(&["generate", "--config", cfg.to_str().unwrap(), "--trace", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let (fa, fb) = (snapshot(&a), snapshot(&b));
    assert_eq!(fa.len(), 12);
    assert!(fa == fb, "outputs differ");

    let c = dir.path().join("c");
    mixmatch(&["generate", "--config", cfg.to_str().unwrap(), "--seed", "6", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("samples.txt")).unwrap(), fs::read(c.join("samples.txt")).unwrap());
}

#[test]
fn revise_verb_replace_changes_at_most_one_token() {
    let dir = tempfile::tempdir().unwrap();
    let models = train(dir.path());
    let cfg = write_config(
        dir.path(),
        "verb.json",
        serde_json::json!({
            "task": "revise",
            "preset": "agency-verb-replace",
            "model_dir": models,
            "source_file": data_dir().join("verb_replace_sources.tsv"),
            "lexicon": data_dir().join("agency_verbs.txt"),
            "out_dir": "out",
        }),
    );
    let o = mixmatch(&["revise", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sources = fs::read_to_string(data_dir().join("verb_replace_sources.tsv")).unwrap();
    let outputs = fs::read_to_string(dir.path().join("out/samples.txt")).unwrap();
    let mut changed = 0;
    for (src, out) in sources.lines().zip(outputs.lines()) {
        let (pos, text) = src.split_once('\t').unwrap();
        let pos: usize = pos.parse().unwrap();
        let (s, o): (Vec<&str>, Vec<&str>) = (text.split(' ').collect(), out.split(' ').collect());
        assert_eq!(s.len(), o.len());
        let diffs: Vec<usize> = (0..s.len()).filter(|&i| s[i] != o[i]).collect();
        assert!(diffs.is_empty() || diffs == [pos], "{text} -> {out}");
        changed += diffs.len();
    }
    assert!(changed > 0, "no verb was replaced");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["mean_hamming"].as_f64().unwrap() <= 1.0);
    assert!(report["bleu"].is_f64());
}

#[test]
fn config_errors_are_listed_together_and_nothing_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        serde_json::json!({
            "task": "generate",
            "model_dir": "missing_models",
            "experts": [{"kind": "hamming", "weight": 1.0}, {"kind": "lexicon", "weight": 2.0}],
            "prompts": ["a b c d"],
            "length": 3,
            "epochs": 0,
            "out_dir": "out",
        }),
    );
    let o = mixmatch(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for needle in
        ["vocabulary not found", "hamming expert needs a source", "no lexicon file", "epochs", "leaves nothing"]
    {
        assert!(err.contains(needle), "{needle} missing from:\n{err}");
    }
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_typos_and_bad_overrides_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let models = train(dir.path());
    let cfg = write_config(
        dir.path(),
        "typo.json",
        serde_json::json!({"task": "generate", "model_dir": models, "lenght": 3}),
    );
    assert_eq!(mixmatch(&["generate", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));

    let cfg = generate_config(dir.path(), &models, "out");
    let o = mixmatch(&["generate", "--config", cfg.to_str().unwrap(), "--weight", "hamming=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no expert of that kind"));
    let o = mixmatch(&["generate", "--config", cfg.to_str().unwrap(), "--preset", "agency"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = mixmatch(&["revise", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = mixmatch(&["generate", "--config", cfg.to_str().unwrap(), "--remote-expert", "no-colons"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn weight_override_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let models = train(dir.path());
    let cfg = generate_config(dir.path(), &models, "base");
    let base = mixmatch(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(base.status.code(), Some(0));
    let off = dir.path().join("off");
    let o = mixmatch(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--weight",
        "discriminator=0",
        "--out",
        off.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_ne!(fs::read(dir.path().join("base/samples.txt")).unwrap(), fs::read(off.join("samples.txt")).unwrap());
}

#[test]
fn verify_passes_fails_under_mutation_and_guards_size() {
    let o = mixmatch(&["verify", "--scale", "tiny"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    for check in ["gibbs-limit", "detailed-balance", "mutation-detected", "tv-convergence", "determinism"] {
        assert!(text.lines().any(|l| l.starts_with("PASS") && l.contains(check)), "{check}:\n{text}");
    }

    let o = mixmatch(&["verify", "--scale", "tiny", "--corrupt-acceptance"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL detailed-balance")), "{}", stdout(&o));

    let o = mixmatch(&["verify", "--scale", "small", "--vocab", "10", "--length", "7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("enumeration limit"), "{}", stderr(&o));
}

#[test]
fn presets_are_listed() {
    let o = mixmatch(&["presets"]);
    let text = stdout(&o);
    for name in ["prompted-sentiment", "sentiment-hamming", "agency", "formality-disc"] {
        assert!(text.contains(name));
    }
}
