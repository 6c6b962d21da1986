//! Process-level tests of the `cognidb` binary against the bundled fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Copy of the fixture project in a fresh temp dir.
fn project() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures(), dir.path());
    let cfg = dir.path().join("project.json");
    (dir, cfg)
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            if e.file_name() != "out" {
                copy_dir(&e.path(), &dest);
            }
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

fn cognidb(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cognidb"))
        .arg("--config")
        .arg(cfg)
        .args(["--log-level", "warn"])
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn edit_json(path: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    f(&mut v);
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for cmd in [
        "",
        "textify",
        "train",
        "index",
        "query",
        "repl",
        "inspect-model",
    ] {
        let mut c = Command::new(env!("CARGO_BIN_EXE_cognidb"));
        if !cmd.is_empty() {
            c.arg(cmd);
        }
        let out = c.arg("--help").output().unwrap();
        let text = ok(&out);
        let name = if cmd.is_empty() { "cognidb" } else { cmd };
        let path = golden.join(format!("{name}.txt"));
        if update {
            fs::write(&path, &text).unwrap();
        } else {
            let want =
                fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
            assert_eq!(
                text, want,
                "`{name} --help` drifted; rerun with UPDATE_GOLDEN=1"
            );
        }
    }
}

#[test]
fn textify_summary_counts_kb_repetitions() {
    let (_d, cfg) = project();
    let out = ok(&cognidb(&cfg, &["textify"]));
    // 5 sales rows + 10 images, KB of 3 lines repeated twice
    assert!(
        out.starts_with("tables=2 rows=15 sentences=21 kb_sentences=6 "),
        "{out}"
    );
    let corpus = fs::read_to_string(cfg.with_file_name("out/corpus.txt")).unwrap();
    let image_lines: Vec<&str> = corpus.lines().filter(|l| l.starts_with('n')).collect();
    assert_eq!(image_lines.len(), 10);
    assert!(corpus.contains(
        "n01323599_24918 animal stable_gear mammal racehorse thoroughbred_horse bridle chestnut"
    ));
}

#[test]
fn empty_table_exits_3() {
    let (_d, cfg) = project();
    fs::write(
        cfg.with_file_name("sales.csv"),
        "custID,Date,Merchant,Category,Items,Amount\n",
    )
    .unwrap();
    let out = cognidb(&cfg, &["textify"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("has no rows"));
}

#[test]
fn missing_input_is_a_config_error() {
    let (_d, cfg) = project();
    fs::remove_file(cfg.with_file_name("kb.txt")).unwrap();
    assert_eq!(cognidb(&cfg, &["textify"]).status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_cognidb"))
        .args(["--config", "/nonexistent/project.json", "textify"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupt_corpus_exits_3() {
    let (_d, cfg) = project();
    ok(&cognidb(&cfg, &["textify"]));
    fs::write(cfg.with_file_name("out/corpus.txt"), "custa Bad!Token\n").unwrap();
    fs::remove_file(cfg.with_file_name("out/corpus.txt.keys")).unwrap();
    assert_eq!(cognidb(&cfg, &["train"]).status.code(), Some(3));
}

#[test]
fn incremental_training_checks_dimension() {
    let (d, cfg) = project();
    ok(&cognidb(&cfg, &["textify"]));
    ok(&cognidb(&cfg, &["train"]));
    let base = d.path().join("base");
    fs::rename(d.path().join("out/store"), &base).unwrap();
    edit_json(&cfg.with_file_name("training.json"), |v| {
        v["dimension"] = 20.into()
    });
    let out = cognidb(&cfg, &["train", "--base", base.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    edit_json(&cfg.with_file_name("training.json"), |v| {
        v["dimension"] = 50.into();
        v["epochs"] = 5.into();
        v["learning_rate"] = 0.0025.into();
    });
    let out = ok(&cognidb(&cfg, &["train", "--base", base.to_str().unwrap()]));
    assert!(out.starts_with("vocab=81 dim=50"), "{out}");
}

#[test]
fn syntax_error_exits_5_with_caret() {
    let (_d, cfg) = project();
    ok(&cognidb(&cfg, &["textify"]));
    ok(&cognidb(&cfg, &["train"]));
    let out = cognidb(&cfg, &["query", "-e", "SELECT custID FRM sales"]);
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    // `FRM` is read as an alias, so the parser stops at `sales`
    assert!(err.contains("line 1, column 19"), "{err}");
    assert!(
        err.contains("\n  SELECT custID FRM sales\n                    ^"),
        "{err}"
    );
}

#[test]
fn approximate_strategy_needs_index() {
    let (_d, cfg) = project();
    ok(&cognidb(&cfg, &["textify"]));
    ok(&cognidb(&cfg, &["train"]));
    let out = cognidb(
        &cfg,
        &[
            "query",
            "--strategy",
            "lsh:1",
            "-e",
            "SELECT custID FROM sales",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lsh_strategy_matches_exact_when_candidates_cover() {
    let (_d, cfg) = project();
    ok(&cognidb(&cfg, &["textify"]));
    ok(&cognidb(&cfg, &["train"]));
    ok(&cognidb(&cfg, &["index", "--lsh-bits", "4"]));
    let sql = "SELECT Y.custID, similarityUDF(X.custID, Y.custID) AS s FROM sales X, sales Y \
               WHERE X.custID = 'custD' AND similarityUDF(X.custID, Y.custID) > -1 ORDER BY s DESC";
    let exact = ok(&cognidb(&cfg, &["query", "-e", sql, "--format", "csv"]));
    // radius 2 over 4 bits reaches most buckets, so every row survives
    let approx = ok(&cognidb(
        &cfg,
        &["query", "--strategy", "lsh:2", "-e", sql, "--format", "csv"],
    ));
    let exact_rows: Vec<&str> = exact.lines().collect();
    let approx_rows: Vec<&str> = approx.lines().collect();
    assert!(approx_rows.iter().all(|r| exact_rows.contains(r)));
    assert!(exact_rows.len() == 6);
}

#[test]
fn inspect_model_and_repl() {
    let (_d, cfg) = project();
    ok(&cognidb(&cfg, &["textify"]));
    ok(&cognidb(&cfg, &["train"]));
    let out = ok(&cognidb(
        &cfg,
        &["inspect-model", "custd", "-k", "3", "--format", "csv"],
    ));
    assert_eq!(out.lines().count(), 4);
    assert_eq!(
        cognidb(&cfg, &["inspect-model", "zebra"]).status.code(),
        Some(3)
    );

    let mut child = Command::new(env!("CARGO_BIN_EXE_cognidb"))
        .arg("--config")
        .arg(&cfg)
        .args(["--log-level", "warn", "repl"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"\\format json\nSELECT custID\n  FROM sales\n  LIMIT 2;\n\\timing\nSELECT nope FROM;\nSELECT custID FROM sales LIMIT 1\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        stdout,
        "{\"custID\":\"custA\"}\n{\"custID\":\"custB\"}\n{\"custID\":\"custA\"}\n"
    );
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(
        stderr.contains("format is json")
            && stderr.contains("timing is on")
            && stderr.contains("time: ")
    );
    assert!(stderr.contains("syntax error"));
}
