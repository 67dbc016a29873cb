use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY_MODEL: &[&str] = &[
    "--set",
    "encoder_layers=1",
    "--set",
    "decoder_layers=1",
    "--set",
    "d_model=16",
    "--set",
    "heads=2",
    "--set",
    "feedforward_dim=32",
    "--set",
    "head_dim=32",
    "--set",
    "n_linguistic=4",
];

fn declid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_declid")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = declid(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_corpus(root: &Path, run_id: &str) -> PathBuf {
    let out = root.display().to_string();
    let stdout = ok(&[
        "corpus-gen",
        "--output-dir",
        &out,
        "--run-id",
        run_id,
        "--per-lang",
        "10",
        "--duration",
        "1",
        "--set",
        "buckets=1",
    ]);
    PathBuf::from(stdout.trim())
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn pipeline_is_byte_deterministic() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().display().to_string();
    let manifest = tiny_corpus(root.path(), "corpus-a");
    let again = tiny_corpus(root.path(), "corpus-b");
    assert_eq!(tree(manifest.parent().unwrap()), tree(again.parent().unwrap()));

    let m = manifest.display().to_string();
    let mut runs = Vec::new();
    for id in ["train-a", "train-b"] {
        let mut args = vec![
            "train",
            "--output-dir",
            &out,
            "--run-id",
            id,
            "--manifest",
            &m,
            "--scheme",
            "dec-lemb",
            "--epochs",
            "1",
            "--batch-size",
            "8",
        ];
        args.extend_from_slice(TINY_MODEL);
        ok(&args);
        runs.push(root.path().join(id));
    }
    for name in ["model.ckpt", "train_log.ndjson", "summary.json"] {
        assert_eq!(
            fs::read(runs[0].join(name)).unwrap(),
            fs::read(runs[1].join(name)).unwrap(),
            "{name}"
        );
    }

    let ckpt = runs[0].join("model.ckpt").display().to_string();
    ok(&[
        "eval",
        "--output-dir",
        &out,
        "--run-id",
        "eval",
        "--checkpoint",
        &ckpt,
        "--manifest",
        &m,
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.path().join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["buckets"].as_array().unwrap().len(), 1);
    assert!(root.path().join("eval/predictions.csv").exists());

    ok(&[
        "embed-export",
        "--output-dir",
        &out,
        "--run-id",
        "emb",
        "--checkpoint",
        &ckpt,
        "--manifest",
        &m,
    ]);
    let emb = root.path().join("emb");
    let train_csv = emb.join("embeddings_train.csv").display().to_string();
    let test_csv = emb.join("embeddings_test_1s.csv").display().to_string();
    ok(&[
        "backend-fit",
        "--output-dir",
        &out,
        "--run-id",
        "be",
        "--train",
        &train_csv,
        "--test",
        &test_csv,
    ]);
    assert!(root.path().join("be/backend.json").exists());
}

#[test]
fn unknown_config_key_is_reported_by_name() {
    let root = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(root.path(), "c");
    let out = declid(&[
        "train",
        "--output-dir",
        &root.path().display().to_string(),
        "--manifest",
        &manifest.display().to_string(),
        "--set",
        "lamda=0.3",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`lamda`"));
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    assert_eq!(declid(&["--help"]).status.code(), Some(0));
    assert_eq!(declid(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(declid(&["frobnicate"]).status.code(), Some(1));
    let root = tempfile::tempdir().unwrap();
    let missing = root.path().join("missing.json").display().to_string();
    let out = declid(&[
        "train",
        "--output-dir",
        &root.path().display().to_string(),
        "--manifest",
        &missing,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn config_snapshot_names_its_inputs() {
    let root = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(root.path(), "c");
    let snapshot = fs::read_to_string(manifest.parent().unwrap().join("config.txt")).unwrap();
    assert!(snapshot.starts_with("# command: corpus-gen\n"));
    assert!(snapshot.contains("per_language = 10"));
}
