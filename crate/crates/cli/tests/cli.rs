use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TABLE1_HEADER: &str = "k_fold,auc,auc_ci95,accuracy,accuracy_ci95,sensitivity,sensitivity_ci95,specificity,specificity_ci95,ppv,ppv_ci95,npv,npv_ci95";
const TABLE2_HEADER: &str =
    "subtable,row,auc,auc_ci95,accuracy,accuracy_ci95,sensitivity,sensitivity_ci95,specificity,specificity_ci95";

fn vwd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vwd"))
        .args(args)
        .env_remove("VWD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vwd(args);
    assert!(
        out.status.success(),
        "vwd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small cohort on disk; returns the manifest path.
fn small_cohort(dir: &Path, preset: &str) -> PathBuf {
    let out = dir.join("cohort");
    ok(&[
        "synth",
        "--patients",
        "4",
        "--duration",
        "300",
        "--seed",
        "3",
        "--preset",
        preset,
        "--out",
        s(&out),
    ]);
    out.join("manifest.json")
}

#[test]
fn synth_writes_a_full_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    ok(&["synth", "--duration", "30", "--out", s(&out)]);
    let flows = fs::read_dir(out.join("flow")).unwrap().count();
    assert_eq!(flows, 40);
    assert!(out.join("manifest.json").is_file());
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["no-such-command"],
        vec!["synth", "--patients", "many"],
        vec!["evaluate"],
        vec!["--threads", "0", "synth", "--out", "/nonexistent/x"],
    ] {
        let out = vwd(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(stderr(&out).starts_with("error[usage]"), "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn out_of_range_cutoff_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_cohort(dir.path(), "default");
    let out = vwd(&[
        "segment",
        "--manifest",
        s(&manifest),
        "--cutoff",
        "30",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[usage]"));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = vwd(&["segment", "--manifest", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error[") && !err.starts_with("error[usage]"), "{err}");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{not json").unwrap();
    let out = vwd(&[
        "predict",
        "--model",
        s(&bad),
        "--manifest",
        s(&missing),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error[json]"));
}

#[test]
fn help_exits_cleanly() {
    let out = ok(&["--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ablation-sweep"));
}

#[test]
fn segment_filter_and_featurize_produce_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_cohort(dir.path(), "default");

    let seg_dir = dir.path().join("seg");
    ok(&["segment", "--manifest", s(&manifest), "--out", s(&seg_dir)]);
    let rows: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(seg_dir.join("segmentation.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let instances = r["instances"].as_u64().unwrap();
        assert_eq!(r["windows"].as_u64().unwrap(), instances / 20);
    }

    let filtered = dir.path().join("filtered");
    ok(&[
        "filter",
        "--manifest",
        s(&manifest),
        "--cutoff",
        "2",
        "--out",
        s(&filtered),
    ]);
    assert_eq!(fs::read_dir(filtered.join("flow")).unwrap().count(), 8);

    let feat = dir.path().join("feat");
    ok(&[
        "featurize",
        "--manifest",
        s(&filtered.join("manifest.json")),
        "--out",
        s(&feat),
    ]);
    let csv = fs::read_to_string(feat.join("features.csv")).unwrap();
    assert!(csv.starts_with("patient_id,label,start_index,"));
    assert!(csv.lines().count() > 1);
}

#[test]
fn trained_models_predict_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_cohort(dir.path(), "high-band");

    let rf = dir.path().join("rf");
    ok(&["train-rf", "--manifest", s(&manifest), "--trees", "10", "--out", s(&rf)]);
    let pred = dir.path().join("pred");
    ok(&[
        "predict",
        "--model",
        s(&rf.join("model.json")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&pred),
    ]);
    let csv = fs::read_to_string(pred.join("predictions.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("patient_id,label,windows,score,predicted"));
    assert_eq!(csv.lines().count(), 9);

    let cnn = dir.path().join("cnn");
    ok(&[
        "train-cnn",
        "--manifest",
        s(&manifest),
        "--input-mode",
        "fft",
        "--epochs",
        "1",
        "--out",
        s(&cnn),
    ]);
    let cam = dir.path().join("cam");
    ok(&[
        "gradcam",
        "--model",
        s(&cnn.join("model.json")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&cam),
    ]);
    assert!(fs::read_to_string(cam.join("gradcam.svg")).unwrap().starts_with("<svg"));

    let out = vwd(&[
        "gradcam",
        "--model",
        s(&rf.join("model.json")),
        "--manifest",
        s(&manifest),
        "--out",
        s(&cam),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn evaluate_rf(manifest: &Path, out: &Path, threads: &str) -> Vec<u8> {
    ok(&[
        "--threads",
        threads,
        "evaluate",
        "--model",
        "rf",
        "--manifest",
        s(manifest),
        "--k",
        "2",
        "--trials",
        "3",
        "--trees",
        "15",
        "--seed",
        "4",
        "--out",
        s(out),
    ]);
    fs::read(out.join("evaluation.json")).unwrap()
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_cohort(dir.path(), "high-band");
    let one = evaluate_rf(&manifest, &dir.path().join("t1"), "1");
    let four = evaluate_rf(&manifest, &dir.path().join("t4"), "4");
    assert_eq!(one, four);

    let sweep = |threads: &str, out: &Path| {
        ok(&[
            "--threads",
            threads,
            "ablation-sweep",
            "--manifest",
            s(&manifest),
            "--models",
            "rf",
            "--cutoffs",
            "10,2",
            "--k",
            "2",
            "--trials",
            "2",
            "--trees",
            "10",
            "--seed",
            "6",
            "--out",
            s(out),
        ]);
        fs::read(out.join("sweep.json")).unwrap()
    };
    assert_eq!(sweep("1", &dir.path().join("s1")), sweep("3", &dir.path().join("s3")));
}

#[test]
fn report_renders_golden_tables() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_cohort(dir.path(), "high-band");
    let eval_dir = dir.path().join("eval");
    evaluate_rf(&manifest, &eval_dir, "2");
    let sweep_dir = dir.path().join("sweep");
    ok(&[
        "ablation-sweep",
        "--manifest",
        s(&manifest),
        "--models",
        "rf",
        "--cutoffs",
        "10,0.5",
        "--k",
        "2",
        "--trials",
        "2",
        "--trees",
        "10",
        "--out",
        s(&sweep_dir),
    ]);

    let rep = dir.path().join("report");
    ok(&[
        "report",
        "--evaluation",
        s(&eval_dir.join("evaluation.json")),
        "--sweep",
        s(&sweep_dir.join("sweep.json")),
        "--out",
        s(&rep),
    ]);
    let t1 = fs::read_to_string(rep.join("table1.csv")).unwrap();
    let keys: Vec<&str> = t1.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(t1.lines().next(), Some(TABLE1_HEADER));
    assert_eq!(keys, ["1", "2", "mean"]);

    let t2 = fs::read_to_string(rep.join("table2.csv")).unwrap();
    assert_eq!(t2.lines().next(), Some(TABLE2_HEADER));
    let keys: Vec<String> = t2
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(2).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(keys, ["A,rf", "C,10", "C,0.5"]);
    assert_eq!(t2, fs::read_to_string(sweep_dir.join("table2.csv")).unwrap());
    assert!(fs::read_to_string(rep.join("roc.svg")).unwrap().contains("<svg"));

    let out = vwd(&["report", "--out", s(&rep)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_accepts_an_evaluation_without_valid_folds() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("short");
    ok(&["synth", "--patients", "2", "--duration", "60", "--out", s(&cohort)]);
    let eval_dir = dir.path().join("eval");
    ok(&[
        "evaluate",
        "--model",
        "rf",
        "--manifest",
        s(&cohort.join("manifest.json")),
        "--k",
        "2",
        "--trials",
        "2",
        "--trees",
        "5",
        "--out",
        s(&eval_dir),
    ]);
    let rep = dir.path().join("report");
    ok(&[
        "report",
        "--evaluation",
        s(&eval_dir.join("evaluation.json")),
        "--out",
        s(&rep),
    ]);
    let t1 = fs::read_to_string(rep.join("table1.csv")).unwrap();
    let mean = t1.lines().last().unwrap();
    assert!(mean.starts_with("mean,NA,NA"), "{mean}");
}
