//! End-to-end runs of the installed binary: exit codes, the staged pipeline,
//! and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_factforge")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("FACTFORGE_WORKDIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn write_fixture(dir: &Path) -> PathBuf {
    let pages = [
        ("Aphex Twin", vec![
            "Aphex Twin is an electronic musician from Cornwall.",
            "He released the album Syro in 2014.",
        ]),
        ("Blue Jasmine", vec![
            "Blue Jasmine is a 2013 film directed by Woody Allen.",
            "The film stars Cate Blanchett as Jasmine.",
        ]),
        ("Dune", vec![
            "Dune is a science fiction novel by Frank Herbert.",
            "It was published in 1965.",
        ]),
        ("Fargo", vec![
            "Fargo is a crime film by the Coen brothers.",
            "It premiered in 1996.",
        ]),
    ];
    let mut page_lines = String::new();
    for (title, sentences) in &pages {
        page_lines
            .push_str(&serde_json::json!({"title": title, "sentences": sentences}).to_string());
        page_lines.push('\n');
    }
    std::fs::write(dir.join("pages.jsonl"), page_lines).unwrap();

    let claims = [
        (1, "Aphex Twin is an electronic musician.", "SUPPORTS", vec![("Aphex Twin", 0)]),
        (2, "Aphex Twin released Syro in 2014.", "SUPPORTS", vec![("Aphex Twin", 1)]),
        (3, "Blue Jasmine stars Cate Blanchett.", "SUPPORTS", vec![("Blue Jasmine", 1)]),
        (4, "Blue Jasmine is a documentary.", "REFUTES", vec![("Blue Jasmine", 0)]),
        (5, "Dune was published in 1965.", "SUPPORTS", vec![("Dune", 1)]),
        (6, "Dune was written by a committee.", "REFUTES", vec![("Dune", 0)]),
        (7, "Fargo premiered in 2012.", "REFUTES", vec![("Fargo", 1)]),
        (8, "Fargo holds an annual regatta.", "NOT ENOUGH INFO", vec![]),
    ];
    let mut claim_lines = String::new();
    for (id, text, label, refs) in &claims {
        let groups: Vec<Vec<(String, usize)>> = if refs.is_empty() {
            vec![]
        } else {
            vec![refs.iter().map(|(t, i)| (t.to_string(), *i)).collect()]
        };
        claim_lines.push_str(
            &serde_json::json!({"id": id, "claim": text, "label": label, "evidence": groups})
                .to_string(),
        );
        claim_lines.push('\n');
    }
    std::fs::write(dir.join("claims.jsonl"), claim_lines).unwrap();

    let cfg = dir.join("run.cfg");
    std::fs::write(
        &cfg,
        "m = 4\nd = 2\nn = 2\nencoder.dim = 8\nencoder.epochs = 3\n\
         ptr.hidden = 6\nptr.hops = 2\nptr.beam = 3\nptr.batch = 4\nptr.max_epochs = 3\n",
    )
    .unwrap();
    cfg
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
    let out = run(dir.path(), &["predict", "--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("--no-dateproc"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["no-such-command"])), 1);
    assert_eq!(code(&run(dir.path(), &["predict", "--bogus-flag"])), 1);
    assert_eq!(code(&run(dir.path(), &[])), 1, "a subcommand is required");
    // --set without '=' is a usage error from config handling.
    assert_eq!(code(&run(dir.path(), &["--set", "seed", "index"])), 1);
}

#[test]
fn missing_prerequisite_exits_one_and_names_command() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let out = run(dir.path(), &["--config", "run.cfg", "train-encoder"]);
    assert_eq!(code(&out), 1);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("factforge index"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    // Unknown config key.
    assert_eq!(code(&run(dir.path(), &["--set", "nope=3", "index"])), 2);
    // Invalid setting.
    assert_eq!(code(&run(dir.path(), &["--set", "p_tf=2.0", "index"])), 2);
    // Malformed claims file.
    std::fs::write(dir.path().join("claims.jsonl"), "not json\n").unwrap();
    let out = run(dir.path(), &["--config", "run.cfg", "attack", "--type", "date", "--out", "x.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("claims.jsonl:1"));
}

#[test]
fn training_divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    assert_eq!(code(&run(dir.path(), &["--config", "run.cfg", "index"])), 0);
    let out = run(
        dir.path(),
        &["--config", "run.cfg", "--set", "encoder.lr=inf", "train-encoder"],
    );
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn full_pipeline_runs_and_repredicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let base = ["--config", "run.cfg"];
    for cmd in ["index", "train-encoder", "train-docrank", "train-joint", "predict"] {
        let out = run(dir.path(), &[&base[..], &[cmd]].concat());
        assert_eq!(
            code(&out),
            0,
            "{cmd} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let pred_path = dir.path().join("workdir").join("predictions.jsonl");
    let first = std::fs::read(&pred_path).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 8, "one line per claim");

    // Re-running predict with --force must reproduce the same bytes.
    let out = run(dir.path(), &[&base[..], &["--force", "predict"]].concat());
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&pred_path).unwrap(), first);

    // Evaluating our own predictions succeeds and writes report.json.
    let out = run(dir.path(), &[&base[..], &["evaluate"]].concat());
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("accuracy"), "stdout: {stdout}");
    assert!(dir.path().join("workdir").join("report.json").exists());

    // Ablation flags are accepted and produce a prediction file.
    let out = run(
        dir.path(),
        &[&base[..], &["--force", "predict", "--no-dateproc", "--no-docrank"]].concat(),
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn potency_prints_adjusted_score() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["potency", "--fever", "0.3149", "--correct-rate", "0.8144", "--report", "p.json"],
    );
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("0.5579"), "stdout: {stdout}");
    assert!(dir.path().join("p.json").exists());
}

#[test]
fn workdir_env_var_is_the_default() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path());
    let env_dir = dir.path().join("from-env");
    let out = Command::new(bin())
        .args(["--config", "run.cfg", "index"])
        .current_dir(dir.path())
        .env("FACTFORGE_WORKDIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(env_dir.join("index.bin").exists());

    // An explicit --workdir beats the environment.
    let flag_dir = dir.path().join("from-flag");
    let out = Command::new(bin())
        .args(["--config", "run.cfg", "--workdir"])
        .arg(&flag_dir)
        .arg("index")
        .current_dir(dir.path())
        .env("FACTFORGE_WORKDIR", &env_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(flag_dir.join("index.bin").exists());
}
