use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::{Mutex, MutexGuard};

/// Every test holds this so concurrent subprocesses do not skew the timing tests.
fn quiet() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn seqprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqprune")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec!["gen", "--out", s(dir), "--utterances", "30", "--seed", "2"];
    args.extend_from_slice(extra);
    let out = seqprune(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("manifest")
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn help_and_usage_codes() {
    let _quiet = quiet();
    assert_eq!(seqprune(&["--help"]).status.code(), Some(0));
    assert_eq!(seqprune(&["--version"]).status.code(), Some(0));
    assert_eq!(seqprune(&[]).status.code(), Some(1));
    assert_eq!(seqprune(&["sweep", "--bogus"]).status.code(), Some(1));
    assert_eq!(seqprune(&["prune", "--out", "x"]).status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("c"), &[]);
    let out = tmp.path().join("p");
    assert_eq!(seqprune(&["prune", "--manifest", s(&m), "--out", s(&out), "--theta", "1.5"]).status.code(), Some(1));
    let out = seqprune(&["sweep", "--manifest", s(&m), "--out", s(&tmp.path().join("s")), "--thetas", "0.5,0.9"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("descending"));
}

#[test]
fn data_errors_name_file_and_line() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("c"), &[]);
    let mut text = fs::read_to_string(&m).unwrap();
    text.push_str("{\"id\": \"broken\"\n");
    let bad = tmp.path().join("c/bad_manifest");
    fs::write(&bad, text).unwrap();
    let out = seqprune(&["prune", "--manifest", s(&bad), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad_manifest:31:"), "{err}");

    let out = seqprune(&["eval", "--manifest", s(&tmp.path().join("missing")), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, "{\"command\": \"prune\",\n \"manifest\": 3}").unwrap();
    assert_eq!(seqprune(&["prune", "--config", s(&cfg)]).status.code(), Some(1));
}

#[test]
fn refinement_collapse_exits_3() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    // Nothing precise to bypass and anchors too corrupted to agree with at τ = 0.
    let m = gen(
        &tmp.path().join("c"),
        &["--precise-fraction", "0", "--anchor-error", "0.9", "--weak-error", "0"],
    );
    let sweep = tmp.path().join("s");
    assert!(seqprune(&["sweep", "--manifest", s(&m), "--out", s(&sweep), "--thetas", "1.0", "--reps", "3"]).status.success());
    let out = seqprune(&[
        "refine",
        "--manifest",
        s(&m),
        "--out",
        s(&tmp.path().join("r")),
        "--tau",
        "0",
        "--model",
        s(&sweep.join("model.json")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("collapsed"));
}

#[test]
fn refine_without_precise_entries_needs_a_model() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("c"), &["--precise-fraction", "0"]);
    let out = seqprune(&["refine", "--manifest", s(&m), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--model"));
}

#[test]
fn refine_writes_iterations() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("c"), &["--precise-fraction", "0.3"]);
    let out = tmp.path().join("r");
    let o = seqprune(&["refine", "--manifest", s(&m), "--out", s(&out), "--iters", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for k in 0..=2 {
        assert!(out.join(format!("iter_{k}/manifest")).is_file());
    }
    assert!(out.join("iter_1/model.json").is_file());
    assert!(out.join("model.json").is_file());
    let stats = fs::read_to_string(out.join("stats")).unwrap();
    assert_eq!(stats.lines().count(), 3);
    // Refined manifests are usable from anywhere.
    let o = seqprune(&["eval", "--manifest", s(&out.join("iter_2/manifest")), "--out", s(&tmp.path().join("e"))]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn sweep_at_one_is_a_single_unit_row() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("c"), &[]);
    let out = tmp.path().join("s");
    assert!(seqprune(&["sweep", "--manifest", s(&m), "--out", s(&out), "--thetas", "1.0", "--reps", "3"]).status.success());
    let header = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(header.starts_with("theta,kept_fraction,cer,cer_retention,sr_measured,sr_predicted\n"));
    let r = rows(&out.join("sweep.csv"));
    assert_eq!(r.len(), 1);
    assert_eq!(&r[0][0], "1");
    assert_eq!(&r[0][3], "1");
    assert_eq!(&r[0][5], "1");
    // Baseline and row are separate timings of the same workload.
    let sr: f64 = r[0][4].parse().unwrap();
    assert!((0.5..2.0).contains(&sr), "{sr}");
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["command"], "sweep");
    assert_eq!(cfg["cost"]["quad"], 1.0);
}

#[test]
fn bench_half_kept_matches_prediction() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = seqprune(&["bench", "--out", s(&out), "--kept", "0.5", "--reps", "5", "--batch", "1000", "--cost-quad", "1"]);
    assert!(o.status.success());
    let r = rows(&out.join("bench.csv"));
    assert_eq!(r.len(), 1);
    let measured: f64 = r[0][8].parse().unwrap();
    assert_eq!(&r[0][9], "4");
    assert!((measured - 4.0).abs() <= 1.0, "{measured}");
    assert_eq!(&r[0][10], "5");
    assert_eq!(seqprune(&["bench", "--out", s(&out), "--reps", "2"]).status.code(), Some(1));
}

#[test]
fn report_has_two_series_spanning_thetas() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let csv_path = tmp.path().join("sweep.csv");
    let mut text = String::from("theta,kept_fraction,cer,cer_retention,sr_measured,sr_predicted\n");
    for i in 0..10 {
        let theta = 0.99 - 0.05 * i as f64;
        text.push_str(&format!("{theta},{},0.1,{},{},{}\n", 1.0 - 0.08 * i as f64, 1.0 - 0.05 * i as f64, 1.0 + i as f64, 1.0 + i as f64));
    }
    fs::write(&csv_path, text).unwrap();
    let out = tmp.path().join("r");
    assert!(seqprune(&["report", "--input", s(&csv_path), "--out", s(&out)]).status.success());
    let svg = fs::read_to_string(out.join("report.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
    assert!(svg.contains(r#"data-theta-min="0.54""#), "{svg}");
    assert!(svg.contains(r#"data-theta-max="0.99""#));
    assert!(svg.contains(">0.54<") && svg.contains(">0.99<"));
    for line in svg.lines().filter(|l| l.contains("<polyline")) {
        let points = line.split("points=\"").nth(1).unwrap();
        assert_eq!(points.split_whitespace().count(), 10);
    }
}

#[test]
fn prune_writes_subset_and_records() {
    let _quiet = quiet();
    let tmp = tempfile::tempdir().unwrap();
    let m = gen(&tmp.path().join("c"), &[]);
    let out = tmp.path().join("p");
    assert!(seqprune(&["prune", "--manifest", s(&m), "--out", s(&out), "--theta", "0.9"]).status.success());
    let records: Vec<serde_json::Value> = fs::read_to_string(out.join("prune.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 30);
    let ids: Vec<&str> = records.iter().map(|r| r["id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let ds = seqprune::corpus::Dataset::open(out.join("manifest")).unwrap();
    for (u, r) in ds.utterances.iter().zip(&records) {
        let f = ds.features(u).unwrap();
        assert_eq!(f.len(), r["kept_indices"].as_array().unwrap().len());
        assert_eq!(ds.frame_classes(u, f.len()).unwrap().unwrap().len(), f.len());
    }
}
