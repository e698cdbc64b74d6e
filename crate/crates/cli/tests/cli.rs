use geomesh_cli::run::{read_manifest, FAILED_MARKER};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

fn geomesh(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geomesh"))
        .current_dir(dir)
        .env_remove("GEOMESH_SEED")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs a command that must succeed and returns its run directory.
fn ok(dir: &Path, args: &[&str]) -> PathBuf {
    let out = geomesh(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let printed = String::from_utf8(out.stdout).unwrap();
    dir.join(printed.trim())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_usage_error_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geomesh(tmp.path(), &["frobnicate", "--records", "x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn missing_seed_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geomesh(tmp.path(), &["synth-gen", "--users", "10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn unreadable_input_is_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = geomesh(tmp.path(), &["mesh-build", "--records", "absent.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_geomesh"))
        .current_dir(tmp.path())
        .env("GEOMESH_SEED", "5")
        .args(["synth-gen", "--users", "200", "--preset", "fine_p"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join(String::from_utf8(out.stdout).unwrap().trim());
    assert_eq!(read_manifest(&run).unwrap().seed, Some(5));
}

#[test]
fn smoke_pipeline_at_full_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let start = Instant::now();
    let synth = ok(d, &["--seed", "11", "synth-gen"]);
    let records = synth.join("records.csv");
    let mesh = ok(d, &["mesh-build", "--records", s(&records)]).join("mesh.gmm");
    let assigned = ok(d, &["assign", "--mesh", s(&mesh), "--records", s(&records)]);
    let eval = ok(
        d,
        &["eval", "--mesh", s(&mesh), "--records", s(&records), "--probs", s(&synth.join("probs.gmpb"))],
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "pipeline took {elapsed:.1}s");

    let lines = std::fs::read_to_string(records).unwrap().lines().count() - 1;
    assert!(lines >= 90_000, "{lines} records");
    let classes = std::fs::read_to_string(assigned.join("classes.csv")).unwrap();
    assert_eq!(classes.lines().count() - 1, lines);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy_pct"].as_array().unwrap().len(), 5);
    assert_eq!(report["n"].as_u64().unwrap() as usize, lines);
    let table = std::fs::read_to_string(eval.join("report.txt")).unwrap();
    assert!(table.contains("Region 200 km"));
}

#[test]
fn eval_one_of_ten_within_200_km() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let header = "image_id,user_id,lat,lon,posted_time,outdoor,prob_row\n";
    let mut build = header.to_string();
    for i in 0..10 {
        build.push_str(&format!("b{i},u0,10.0,10.0,2012-05-01T12:00:00Z,1,\n"));
    }
    std::fs::write(d.join("build.csv"), build).unwrap();
    let mesh = ok(
        d,
        &["mesh-build", "--records", "build.csv", "--init-rows", "4", "--init-cols", "4",
          "--refinement-limit", "100", "--minimum-examples", "1"],
    )
    .join("mesh.gmm");
    let labels = ok(d, &["labels", "--mesh", s(&mesh), "--records", "build.csv", "--mode", "cell-centroid"])
        .join("labels.json");
    let table: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&labels).unwrap()).unwrap();
    let label = &table["points"][0];
    let (lat, lon) = (label["lat_deg"].as_f64().unwrap(), label["lon_deg"].as_f64().unwrap());

    let mut test = header.to_string();
    let mut preds = "image_id,class\n".to_string();
    for i in 0..10 {
        let (la, lo) = if i == 0 { (lat, lon) } else { (-lat, lon - 180.0) };
        test.push_str(&format!("t{i},u{i},{la},{lo},2013-01-01T00:00:00Z,1,\n"));
        preds.push_str(&format!("t{i},0\n"));
    }
    std::fs::write(d.join("test.csv"), test).unwrap();
    std::fs::write(d.join("preds.csv"), preds).unwrap();
    let eval = ok(
        d,
        &["eval", "--mesh", s(&mesh), "--records", "test.csv", "--predictions", "preds.csv",
          "--labels", s(&labels)],
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy_pct"][2].as_f64().unwrap(), 10.0);
    assert!(std::fs::read_to_string(eval.join("report.txt")).unwrap().contains("10.00"));
}

#[test]
fn training_prediction_and_reporting_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let synth = ok(
        d,
        &["--seed", "3", "synth-gen", "--users", "300", "--init-rows", "6", "--init-cols", "8",
          "--refinement-limit", "400", "--minimum-examples", "40"],
    );
    let (records, probs, mesh) = (synth.join("records.csv"), synth.join("probs.gmpb"), synth.join("mesh.gmm"));
    let base = ["--mesh", s(&mesh), "--records", s(&records), "--probs", s(&probs)];
    let small = ["--hidden", "16", "--lstm-hidden", "8", "--max-epochs", "3", "--dropout", "0.1"];

    let m2 = ok(d, &[&["--seed", "1", "train-m2"][..], &base, &small].concat());
    let history: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(m2.join("history.json")).unwrap()).unwrap();
    assert!(!history["epochs"].as_array().unwrap().is_empty());
    let m3 = ok(d, &[&["--seed", "1", "train-m3"][..], &base, &small].concat());

    let pred2 = ok(d, &["predict", "--weights", s(&m2.join("weights.gmw")), "--records", s(&records), "--probs", s(&probs)]);
    let pred3 = ok(d, &["predict", "--weights", s(&m3.join("weights.gmw")), "--records", s(&records), "--probs", s(&probs)]);
    let ua = ok(d, &["user-average", "--records", s(&records), "--probs", s(&probs)]);

    let labels = ok(d, &["labels", "--mesh", s(&mesh), "--records", s(&records)]).join("labels.json");
    let eval_of = |preds: &Path, extra: &[&str]| {
        ok(
            d,
            &[&["eval", "--mesh", s(&mesh), "--records", s(&records), "--labels", s(&labels),
                "--predictions", s(preds)][..], extra]
            .concat(),
        )
    };
    let e2 = eval_of(&pred2.join("predictions.csv"), &["--compare", s(&ua.join("predictions.csv"))]);
    let e3 = eval_of(&pred3.join("predictions.csv"), &[]);
    let e_ua = eval_of(&ua.join("predictions.csv"), &[]);
    let r2: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(e2.join("report.json")).unwrap()).unwrap();
    assert!(r2["wilcoxon"]["p"].as_f64().is_some());

    let w = ok(d, &["wilcoxon", s(&e3.join("errors.csv")), s(&e_ua.join("errors.csv"))]);
    let wr: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.join("wilcoxon.json")).unwrap()).unwrap();
    let p = wr["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let bias = ok(
        d,
        &["bias-report", "--mesh", s(&mesh), "--records", s(&records), "--labels", s(&labels),
          "--predictions", s(&ua.join("predictions.csv"))],
    );
    assert!(bias.join("bias.json").exists());
    let best = ok(d, &["best-possible", "--mesh", s(&mesh), "--records", s(&records)]);
    let bp: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(best.join("best_possible.json")).unwrap()).unwrap();
    assert!(bp["coverage_pct"].as_f64().unwrap() > 50.0);

    let hits = ok(d, &["retrieve", "--probs", s(&probs), "--query-row", "4", "-k", "3", "--records", s(&records)]);
    let h: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(hits.join("retrieve.json")).unwrap()).unwrap();
    assert_eq!(h[0]["row"].as_u64(), Some(4));
    assert_eq!(h[0]["distance"].as_f64(), Some(0.0));

    let rep = ok(
        d,
        &["report", &format!("M2={}", s(&e2.join("report.json"))), &format!("M3={}", s(&e3.join("report.json"))),
          &format!("UA={}", s(&e_ua.join("report.json")))],
    );
    let text = std::fs::read_to_string(rep.join("report.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("M") || l.starts_with("UA")).count(), 4);
}

#[test]
fn rerun_from_manifest_reproduces_checksums() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let first = ok(d, &["--seed", "9", "synth-gen", "--users", "200", "--preset", "fine_p"]);
    let manifest = read_manifest(&first).unwrap();
    let argv: Vec<&str> = manifest.argv.iter().map(String::as_str).collect();
    let second = ok(d, &argv);
    assert_ne!(first, second);
    assert_eq!(read_manifest(&second).unwrap().outputs, manifest.outputs);
    assert!(!first.join(FAILED_MARKER).exists());
}

#[test]
fn failure_before_any_output_leaves_no_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.json"), "{}").unwrap();
    let out = geomesh(d, &["report", "x=bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("runs").exists());
}
