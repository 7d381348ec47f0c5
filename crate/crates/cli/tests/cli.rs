use std::path::Path;
use std::process::{Command, Output};

fn mdx(work: &Path, args: &[&str]) -> Output {
    let tiny = [
        "--work",
        work.to_str().unwrap(),
        "--set",
        "n_l1_train=2",
        "--set",
        "n_train=10",
        "--set",
        "n_dev=4",
        "--set",
        "n_test=6",
        "--set",
        "max_epochs=1",
        "--set",
        "patience=1",
        "--set",
        "am_epochs=1",
        "--set",
        "cbow_epochs=2",
        "--set",
        "beam=2",
        "--seed",
        "5",
    ];
    Command::new(env!("CARGO_BIN_EXE_mdx"))
        .args(tiny)
        .args(args)
        .output()
        .expect("spawn mdx")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_corpus_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(&mdx(a.path(), &["gen-corpus"]));
    ok(&mdx(b.path(), &["gen-corpus"]));
    let ma = std::fs::read(a.path().join("corpus/manifest.txt")).unwrap();
    let mb = std::fs::read(b.path().join("corpus/manifest.txt")).unwrap();
    assert_eq!(ma, mb);
    for entry in std::fs::read_dir(a.path().join("corpus")).unwrap() {
        let p = entry.unwrap().path();
        let q = b.path().join("corpus").join(p.file_name().unwrap());
        assert_eq!(
            std::fs::read(&p).unwrap(),
            std::fs::read(&q).unwrap(),
            "{p:?}"
        );
    }
}

#[test]
fn label_aug_without_smoothing_artifact_exits_2() {
    let w = tempfile::tempdir().unwrap();
    ok(&mdx(w.path(), &["gen-corpus"]));
    let out = mdx(w.path(), &["train-md", "--label-aug"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("smoothing"), "stderr: {err}");
    assert!(err.contains("fit-smoothing"), "stderr: {err}");
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let w = tempfile::tempdir().unwrap();
    let out = mdx(w.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn stage_without_prerequisite_exits_2() {
    let w = tempfile::tempdir().unwrap();
    let out = mdx(w.path(), &["train-am"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-corpus"));
}

#[test]
fn pipeline_stages_compose_and_report_is_stable() {
    let w = tempfile::tempdir().unwrap();
    ok(&mdx(w.path(), &["gen-corpus"]));
    ok(&mdx(w.path(), &["train-am"]));
    ok(&mdx(w.path(), &["extract-ppg"]));
    ok(&mdx(w.path(), &["fit-smoothing"]));
    ok(&mdx(w.path(), &["train-md", "--input-aug", "--label-aug"]));
    ok(&mdx(w.path(), &["decode", "--input-aug", "--label-aug"]));
    ok(&mdx(w.path(), &["evaluate", "--input-aug", "--label-aug"]));
    ok(&mdx(w.path(), &["score-gop"]));
    let r1 = mdx(w.path(), &["report"]);
    ok(&r1);
    let report = std::fs::read_to_string(w.path().join("report.txt")).unwrap();
    assert!(report.contains("config-hash:"));
    assert!(report.contains("seed: 5"));
    // command-line overrides are echoed verbatim
    assert!(report.contains("n_train=10"));
    assert!(report.contains("e2e+ia+la"));
    assert!(report.contains("gop"));
    assert!(report.contains("PER"));
    // re-running with identical inputs reproduces the artifact byte for byte
    let r2 = mdx(w.path(), &["report"]);
    ok(&r2);
    assert_eq!(r1.stdout, r2.stdout);
    assert_eq!(
        report,
        std::fs::read_to_string(w.path().join("report.txt")).unwrap()
    );
}
