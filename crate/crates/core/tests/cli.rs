use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cagewatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_corpus(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("corpus");
    let o = run(&["gen-corpus", "--per-class", "12", "--size", "16", "--seed", "1", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.tsv")
}

#[test]
fn summary_line_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let ckpt = tmp.path().join("m.ckpt");
    let o = run(&[
        "train", "--manifest", s(&manifest), "--epochs", "2", "--batch", "8", "--seed", "7", "--input-size", "16",
        "--out", s(&ckpt),
    ]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("STATUS=ok CMD=train "), "{out}");
    assert!(out.contains(" VAL_ACC="), "{out}");
    assert!(ckpt.is_file());

    let report = tmp.path().join("eval.csv");
    let o = run(&["eval", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--out", s(&report)]);
    assert!(o.status.success());
    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("fold,accuracy,precision_macro,recall_macro,f1_macro,auc_abnormal\nall,"));
}

#[test]
fn missing_manifest_exits_two_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    let o = run(&["train", "--manifest", s(&tmp.path().join("missing.tsv")), "--out", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).starts_with("STATUS=fail CMD=train"));
    assert!(!ckpt.exists());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0, "no temp files left behind");
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["nonsense"],
        vec!["train", "--manifest"],
        vec!["gen-corpus", "--out-dir", "x", "--per-class", "-3"],
        vec!["gen-corpus", "--out-dir", "/tmp/never-created-x", "--size", "8"],
        vec!["gen-session", "--out-dir", "/tmp/never-created-y", "--post-rate", "1.5"],
        vec!["gradcheck", "--eps", "-1"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!Path::new("/tmp/never-created-x").exists());
}

#[test]
fn crossval_report_rows_and_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let report = tmp.path().join("cv.csv");
    let args = [
        "crossval", "--manifest", s(&manifest), "--k", "5", "--seed", "7", "--epochs", "1", "--input-size", "16",
        "--out", s(&report),
    ];
    assert!(run(&args).status.success());
    let first = fs::read(&report).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let rows: Vec<&str> = text.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rows, ["fold", "0", "1", "2", "3", "4", "mean", "std"]);
    assert!(run(&args).status.success());
    assert_eq!(fs::read(&report).unwrap(), first);

    let too_many = run(&[
        "crossval", "--manifest", s(&manifest), "--k", "13", "--input-size", "16", "--out", s(&report),
    ]);
    assert_eq!(too_many.status.code(), Some(1));
}

#[test]
fn gradcheck_pass_and_corruption_exit_codes() {
    let ok = run(&["gradcheck", "--seed", "3", "--size", "8"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).starts_with("STATUS=ok CMD=gradcheck"));
    let bad = run(&["gradcheck", "--seed", "3", "--size", "8", "--corrupt-scale", "2"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(stdout(&bad).starts_with("STATUS=fail CMD=gradcheck"));
}

#[test]
fn monitor_writes_log_summary_and_dumps() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let ckpt = tmp.path().join("m.ckpt");
    let o = run(&[
        "train", "--manifest", s(&manifest), "--epochs", "1", "--batch", "8", "--input-size", "16", "--out", s(&ckpt),
    ]);
    assert!(o.status.success());
    let sess = tmp.path().join("sess");
    let o = run(&[
        "gen-session", "--pre", "40", "--post", "40", "--size", "16", "--seed", "2", "--out-dir", s(&sess),
    ]);
    assert!(o.status.success());
    let (log, summary, dump) = (tmp.path().join("alerts.tsv"), tmp.path().join("s.csv"), tmp.path().join("dump"));
    let o = run(&[
        "monitor", "--manifest", s(&sess.join("manifest.tsv")), "--checkpoint", s(&ckpt), "--window", "10",
        "--stride", "10", "--out", s(&log), "--summary", s(&summary), "--dump-dir", s(&dump),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("STATUS=ok CMD=monitor SESSIONS=1 "));
    for line in fs::read_to_string(&log).unwrap().lines() {
        assert_eq!(line.split('\t').count(), 4, "{line}");
        assert!(line.starts_with("session-2\t"));
    }
    let csv = fs::read_to_string(&summary).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("session-2,4,4,"));
    let preds = fs::read_to_string(dump.join("session-2.predictions.tsv")).unwrap();
    assert_eq!(preds.lines().count(), 81);
    assert!(dump.join("session-2.windows.tsv").is_file());

    let bad = run(&[
        "monitor", "--manifest", s(&sess.join("manifest.tsv")), "--checkpoint", s(&ckpt), "--threshold", "1.5",
        "--out", s(&log),
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = small_corpus(tmp.path());
    let ckpt = tmp.path().join("bad.ckpt");
    fs::write(&ckpt, b"MVCK\x01\x00\x00\x00").unwrap();
    let o = run(&["eval", "--manifest", s(&manifest), "--checkpoint", s(&ckpt), "--out", s(&tmp.path().join("r.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
}
