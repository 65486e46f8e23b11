use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use desklcm::harness::checkpoint::Checkpoint;
use desklcm::harness::report::{EvalReport, SampleSet};

fn smoke() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_desklcm")).args(args).output().expect("spawn desklcm")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn oracle_check_exits_zero() {
    let out = ok(&["oracle-check"]);
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn teacher_to_samples_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let cfg = smoke();
    ok(&["train-teacher", "--config", s(&cfg), "--out", s(&p("t.ckpt"))]);
    ok(&["distill", "--teacher", s(&p("t.ckpt")), "--config", s(&cfg), "--out", s(&p("s.ckpt"))]);
    assert!(Checkpoint::load(p("s.ckpt")).unwrap().into_consistency().is_ok());

    let stdout = ok(&[
        "sample", "--model", s(&p("s.ckpt")), "--steps", "3", "--omega", "1.5", "--cond", "5", "--count", "7",
        "--out", s(&p("s.csv")), "--report", s(&p("r.json")),
    ]);
    let report = EvalReport::from_json(&stdout).unwrap();
    assert_eq!(report.nfe, Some(3));
    assert!(report.wall_clock_per_sample.is_some());
    let text = std::fs::read_to_string(p("s.csv")).unwrap();
    assert!(text.starts_with("class,dim0,dim1\n"));
    let set = SampleSet::load(p("s.csv")).unwrap();
    assert_eq!(set.len(), 7);
    assert!(set.labels.iter().all(|&c| c == 5));

    let teacher = EvalReport::from_json(&ok(&[
        "sample", "--model", s(&p("t.ckpt")), "--steps", "4", "--omega", "2", "--cond", "all", "--count", "3",
        "--out", s(&p("t.csv")),
    ]))
    .unwrap();
    assert_eq!(teacher.nfe, Some(8));
    let unguided = EvalReport::from_json(&ok(&[
        "sample", "--model", s(&p("t.ckpt")), "--steps", "4", "--omega", "0", "--cond", "all", "--count", "3",
        "--out", s(&p("t.csv")),
    ]))
    .unwrap();
    assert_eq!(unguided.nfe, Some(4));

    ok(&[
        "--no-timing", "eval", "--samples", s(&p("s.csv")), "--dataset", "rings2d", "--out", s(&p("e.json")),
        "--sample-report", s(&p("r.json")),
    ]);
    let eval = EvalReport::load(p("e.json")).unwrap();
    assert_eq!(eval.sample_count, 7);
    assert_eq!(eval.nfe, Some(3));
    assert_eq!(eval.wall_clock_per_sample, None);
    for m in ["frechet", "per_class_fidelity", "noise_floor"] {
        assert!(eval.metric(m).unwrap().is_finite());
    }
}

#[test]
fn sweeps_emit_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke();
    let out = dir.path().join("steps.csv");
    ok(&["--no-timing", "sweep", "--kind", "steps", "--grid", "1,2,4,8,16", "--config", s(&cfg), "--out", s(&out)]);
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["omega", "steps", "nfe", "frechet", "per_class_fidelity", "wall_clock_per_sample"]
    );
    let nfe: Vec<usize> = r.records().map(|row| row.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(nfe, [1, 2, 4, 8, 16]);

    let out = dir.path().join("omega.csv");
    ok(&["sweep", "--kind", "omega", "--grid", "1,3", "--config", s(&cfg), "--out", s(&out)]);
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&out).unwrap().records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.iter().all(|f| !f.is_empty())));

    let out = dir.path().join("k.csv");
    ok(&["sweep", "--kind", "k", "--grid", "1,5", "--config", s(&cfg), "--out", s(&out)]);
    let rows: Vec<csv::StringRecord> = csv::Reader::from_path(&out).unwrap().records().map(|r| r.unwrap()).collect();
    // smoke config: 40 distillation steps evaluated every 20
    assert_eq!(rows.iter().map(|r| (&r[0], &r[1])).collect::<Vec<_>>(), [("1", "20"), ("1", "40"), ("5", "20"), ("5", "40")]);
}

#[test]
fn ablate_emits_report() {
    let stdout = ok(&["--no-timing", "ablate", "--drop", "rmsnorm", "--config", s(&smoke())]);
    let r = EvalReport::from_json(&stdout).unwrap();
    assert_eq!(r.nfe, Some(2));
    for m in ["frechet", "teacher_frechet", "per_class_fidelity", "teacher_per_class_fidelity"] {
        assert!(r.metric(m).is_some(), "{m}");
    }
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"NOPE0000").unwrap();
    let out = run(&["sample", "--model", s(&junk), "--steps", "1", "--omega", "0", "--cond", "all", "--count", "1", "--out", s(&dir.path().join("x.csv"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));

    assert!(!run(&["ablate", "--drop", "attention", "--config", s(&smoke())]).status.success());
    assert!(!run(&["sweep", "--kind", "steps", "--grid", "1,x", "--config", s(&smoke()), "--out", s(&dir.path().join("y.csv"))]).status.success());

    let csv = dir.path().join("wide.csv");
    std::fs::write(&csv, "class,dim0,dim1,dim2\n0,1,2,3\n").unwrap();
    assert!(!run(&["eval", "--samples", s(&csv), "--dataset", "rings2d", "--out", s(&dir.path().join("e.json"))]).status.success());
}

#[test]
fn distill_rejects_mismatched_teacher() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.ckpt");
    ok(&["train-teacher", "--config", s(&smoke()), "--out", s(&t)]);
    let text = std::fs::read_to_string(smoke()).unwrap().replace("model.width = 16", "model.width = 32");
    let other = dir.path().join("wide.toml");
    std::fs::write(&other, text).unwrap();
    let out = run(&["distill", "--teacher", s(&t), "--config", s(&other), "--out", s(&dir.path().join("s.ckpt"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("architecture"));
}
