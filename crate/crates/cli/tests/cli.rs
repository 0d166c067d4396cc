//! End-to-end runs of the `segot` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use segot::pair::MaskSet;
use segot::tensor::save_tensor;
use serde_json::Value;

fn segot(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segot"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_is_deterministic_and_job_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&segot(&["gen", "--seed", "42", "--pairs", "40", "--out", "a"], d)), 0);
    assert_eq!(
        code(&segot(&["gen", "--seed", "42", "--pairs", "40", "--out", "b", "--jobs", "4"], d)),
        0
    );
    let a = sorted_files(&d.join("a"));
    let manifests = a.iter().filter(|(n, _)| n.ends_with(".json")).count();
    assert_eq!(manifests, 40);
    assert_eq!(a, sorted_files(&d.join("b")));
}

#[test]
fn match_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&segot(&["gen", "--pairs", "6", "--out", "pairs"], d)), 0);

    let one = segot(
        &["match", "--pair", "pairs/pair_0000.json", "--tau", "0.1", "--iters", "50", "--out", "m.json"],
        d,
    );
    assert_eq!(code(&one), 0, "{}", String::from_utf8_lossy(&one.stderr));
    let m = json(&d.join("m.json"));
    assert_eq!(m["assignment"].as_array().unwrap().len(), 12);
    assert!(m["plan_checksum"].as_str().unwrap().len() == 64);

    assert_eq!(code(&segot(&["match", "--pair", "pairs", "--out", "p1"], d)), 0);
    assert_eq!(code(&segot(&["match", "--pair", "pairs", "--out", "p3", "--jobs", "3"], d)), 0);
    assert_eq!(sorted_files(&d.join("p1")), sorted_files(&d.join("p3")));
    assert_eq!(fs::read(d.join("m.json")).unwrap(), fs::read(d.join("p1/pair_0000.json")).unwrap());

    let ev = segot(&["eval", "--pairs", "pairs", "--pred", "p1", "--out", "rep/report.json"], d);
    assert_eq!(code(&ev), 0, "{}", String::from_utf8_lossy(&ev.stderr));
    let report = json(&d.join("rep/report.json"));
    assert_eq!(report["bins"].as_array().unwrap().len(), 4);
    assert_eq!(report["overall"]["pairs"], 6);
    let binned: u64 = report["bins"].as_array().unwrap().iter().map(|b| b["pairs"].as_u64().unwrap()).sum();
    assert_eq!(binned, 6);
    for name in ["pr_bin0", "pr_bin1", "pr_bin2", "pr_bin3", "pr_unbinned", "pr_all"] {
        let csv = fs::read_to_string(d.join(format!("rep/{name}.csv"))).unwrap();
        assert!(csv.starts_with("recall,precision\n"), "{name}");
    }
}

#[test]
fn eval_without_predictions_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&segot(&["gen", "--pairs", "2", "--out", "pairs"], d)), 0);
    fs::create_dir(d.join("empty")).unwrap();
    let o = segot(&["eval", "--pairs", "pairs", "--pred", "empty", "--out", "r.json"], d);
    assert_eq!(code(&o), 2);
    assert!(!d.join("r.json").exists());
}

#[test]
fn vote_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 1x4 image; source masks {0,1} and {2,3}, target masks {0} and {1,2,3}.
    let a = MaskSet::from_labels(1, 4, &[0, 0, 1, 1], 2).unwrap();
    let b = MaskSet::from_labels(1, 4, &[0, 1, 1, 1], 2).unwrap();
    save_tensor(&a.to_tensor(), &d.join("a.sgt")).unwrap();
    save_tensor(&b.to_tensor(), &d.join("b.sgt")).unwrap();
    fs::write(d.join("k.json"), "[[[0,0],[3,0]], [[1,0],[2,0]], [[0,0],[0,0]]]").unwrap();
    let o = segot(
        &["vote", "--masks-a", "a.sgt", "--masks-b", "b.sgt", "--keypoints", "k.json", "--out", "v.json"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&d.join("v.json"));
    assert_eq!(v["votes"], serde_json::json!([[1, 2], [0, 0]]));
    assert_eq!(v["assignment"], serde_json::json!([1, -1]));

    fs::write(d.join("bad.json"), "[[[9,0],[0,0]]]").unwrap();
    let o = segot(
        &["vote", "--masks-a", "a.sgt", "--masks-b", "b.sgt", "--keypoints", "bad.json", "--out", "w.json"],
        d,
    );
    assert_eq!(code(&o), 1);
    assert!(!d.join("w.json").exists());
}

#[test]
fn train_then_match_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let t = segot(&["train", "--steps", "3", "--out", "ckpt"], d);
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    let trace = fs::read_to_string(d.join("ckpt/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);
    assert!(trace.starts_with("step,lr,loss\n"));
    for f in ["w1.sgt", "b1.sgt", "w2.sgt", "b2.sgt", "meta.json"] {
        assert!(d.join("ckpt").join(f).exists(), "{f}");
    }
    assert_eq!(json(&d.join("ckpt/meta.json"))["steps"], 3);

    assert_eq!(code(&segot(&["gen", "--pairs", "1", "--out", "pairs"], d)), 0);
    let m = segot(
        &["match", "--pair", "pairs/pair_0000.json", "--checkpoint", "ckpt", "--out", "m.json"],
        d,
    );
    assert_eq!(code(&m), 0, "{}", String::from_utf8_lossy(&m.stderr));
    assert!(d.join("m.json").exists());
}

#[test]
fn map_recovers_sequence_objects() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let g = segot(&["gen", "--sequence", "6", "--seed", "0", "--out", "seq"], d);
    assert_eq!(code(&g), 0, "{}", String::from_utf8_lossy(&g.stderr));
    let o = segot(&["map", "--sequence", "seq/seq.json", "--out", "map"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&d.join("map/map.json"));
    assert_eq!(report["ap"]["ap50"], 1.0);
    let objects = json(&d.join("map/objects.json"));
    assert_eq!(objects.as_array().unwrap().len() as u64, report["objects"].as_u64().unwrap());
}

#[test]
fn yaw_prints_the_steering_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("one.json"), r#"[{"x": 75, "p": 2}]"#).unwrap();
    let o = segot(&["yaw", "--segments", "one.json", "--width", "100"], d);
    assert_eq!(code(&o), 0);
    let psi: f64 = stdout(&o).trim().parse().unwrap();
    assert!((psi - 0.1).abs() < 1e-12);

    fs::write(d.join("sym.json"), r#"[{"x": 20, "p": 3}, {"x": 80, "p": 3}]"#).unwrap();
    let o = segot(&["yaw", "--segments", "sym.json", "--width", "100", "--tau", "5", "--gain", "0.4"], d);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 0.0);

    assert_eq!(code(&segot(&["yaw", "--segments", "one.json", "--width", "50"], d)), 1);
    fs::write(d.join("empty.json"), "[]").unwrap();
    assert_eq!(code(&segot(&["yaw", "--segments", "empty.json", "--width", "100"], d)), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = segot(&["frobnicate"], d);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&segot(&[], d)), 1);
    assert_eq!(code(&segot(&["--help"], d)), 0);

    assert_eq!(code(&segot(&["match", "--pair", "missing.json", "--out", "m.json"], d)), 2);

    assert_eq!(code(&segot(&["gen", "--pairs", "1", "--out", "pairs"], d)), 0);
    let bad_tau = segot(&["match", "--pair", "pairs/pair_0000.json", "--tau", "-1", "--out", "m.json"], d);
    assert_eq!(code(&bad_tau), 1);
    assert!(!d.join("m.json").exists());
    let zero_jobs = segot(&["match", "--pair", "pairs", "--out", "preds", "--jobs", "0"], d);
    assert_eq!(code(&zero_jobs), 1);
    assert!(!d.join("preds").exists());

    fs::write(d.join("scene.json"), r#"{"min_segments": 9, "max_segments": 3}"#).unwrap();
    let bad_cfg = segot(&["gen", "--pairs", "2", "--config", "scene.json", "--out", "never"], d);
    assert_eq!(code(&bad_cfg), 1);
    assert!(!d.join("never").exists());

    fs::write(d.join("garbled.json"), "{not json").unwrap();
    assert_eq!(code(&segot(&["match", "--pair", "garbled.json", "--out", "m.json"], d)), 1);
}
