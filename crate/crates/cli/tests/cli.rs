use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn apmae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apmae"))
        .args(args)
        .current_dir(dir)
        .env_remove("APMAE_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_subcommand_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = apmae(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "[lm]\nwidht = 64\n").unwrap();
    let out = apmae(dir.path(), &["gen-corpus", "--config", "bad.conf", "--out", "c"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("widht"));
    assert!(!dir.path().join("c").exists());
}

#[test]
fn missing_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = apmae(dir.path(), &["cluster-stats", "--models", "absent.apcl", "--out", "s.csv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("absent.apcl"));
}

#[test]
fn malformed_model_pair_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = apmae(dir.path(), &["cross-eval", "--model", "nopath", "--data", "a=x", "--out", "o.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_thread_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_apmae"))
        .args(["gen-corpus", "--out", "c"])
        .current_dir(dir.path())
        .env("APMAE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("APMAE_THREADS"));
}

#[test]
fn plot_writes_one_svg_and_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("counts.csv"), "layer,head,clusters\n0,0,3\n0,1,5\n1,0,0\n1,1,2\n").unwrap();
    let out = apmae(dir.path(), &["plot", "--kind", "cluster-count", "--in", "counts.csv", "--out", "fig"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["counts.csv", "fig.csv", "fig.svg"]);
    let svg = fs::read_to_string(dir.path().join("fig.svg")).unwrap();
    assert!(svg.contains("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn plot_schema_error_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("counts.csv"), "layer,head,count\n0,0,3\n").unwrap();
    let out = apmae(dir.path(), &["plot", "--kind", "cluster-count", "--in", "counts.csv", "--out", "fig"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("clusters"));
}

#[test]
fn corpus_and_mining_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.conf"), "[corpus]\nfiles = 5\n[mine]\nnoise = 3\n").unwrap();
    for run in ["a", "b"] {
        let corpus = format!("corpus_{run}");
        let tasks = format!("tasks_{run}.jsonl");
        let out = apmae(dir.path(), &["gen-corpus", "--config", "small.conf", "--out", &corpus]);
        assert!(out.status.success(), "{}", stderr(&out));
        let out = apmae(dir.path(), &["mine", "--config", "small.conf", "--corpus", &corpus, "--out", &tasks]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("tasks_a.jsonl"), read("tasks_b.jsonl"));
    assert_eq!(read("corpus_a/00000.java"), read("corpus_b/00000.java"));
    assert!(!read("tasks_a.jsonl").is_empty());
}
