use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn csct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csct"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = csct(args);
    assert!(
        out.status.success(),
        "csct {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: [&str; 6] = ["--set", "kernel_counts=2,3", "--set", "seeds=0,1", "--set", "q_grid=22,85"];

fn fixture(dir: &Path) {
    ok(&["synth", "--out", p(dir)]);
    assert!(dir.join("target.csv").exists());
    assert!(dir.join("source.csv").exists());
}

fn without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn searched_run_writes_a_deterministic_report() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let (src, tgt) = (dir.path().join("source.csv"), dir.path().join("target.csv"));
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let mut args = vec!["run", "--variant", "cstlok_s2", "--source", p(&src), "--target", p(&tgt), "--out", p(&out), "--seed", "3"];
        args.extend(SMALL);
        ok(&args);
        for f in ["report.json", "trials.csv", "metrics.csv", "config.txt"] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        outputs.push((without_timing(&out.join("report.json")), fs::read(out.join("trials.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    let report = &outputs[0].0;
    assert_eq!(report["variant"], "cstlok_s2");
    assert_eq!(report["trials"].as_array().unwrap().len(), (2 + 3) * 2 * 2);
    for fold in report["per_fold"].as_array().unwrap() {
        let held = &fold["held_out"];
        assert!(!fold["train_ids"].as_array().unwrap().contains(held));
    }

    let summary = ok(&["report", p(&dir.path().join("a/report.json"))]);
    assert!(String::from_utf8_lossy(&summary.stdout).contains("accuracy"));
    let metrics = ok(&["report", p(&dir.path().join("a/report.json")), "--format", "metrics"]);
    assert!(String::from_utf8_lossy(&metrics.stdout).starts_with("accuracy,sensitivity,specificity"));

    // the echoed configuration reproduces the run
    let cfg = dir.path().join("a/config.txt");
    let again = dir.path().join("c");
    ok(&["run", "--config", p(&cfg), "--out", p(&again)]);
    assert_eq!(without_timing(&again.join("report.json")), outputs[0].0);
}

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let d = dir.path();
    let bank = d.join("bank.bin");
    ok(&["learn-kernels", "--source", p(&d.join("source.csv")), "--h0", "13", "--out", p(&bank), "--set", "kernel_count=2"]);
    assert!(d.join("bank.bin.json").exists());
    let table = d.join("features.csv");
    ok(&["encode", "--target", p(&d.join("target.csv")), "--kernels", p(&bank), "--out", p(&table), "--set", "map_index=1"]);
    let header = fs::read_to_string(&table).unwrap();
    assert!(header.starts_with("subject_id,label,g1,"));
    assert_eq!(header.lines().count(), 21);
    let eval = ok(&["evaluate", "--target", p(&d.join("target.csv")), "--kernels", p(&bank), "--set", "map_index=1"]);
    let v: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(v["metrics"]["accuracy"].as_f64().unwrap() >= 0.9);
}

#[test]
fn usage_and_config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let tgt = dir.path().join("target.csv");
    assert_eq!(csct(&["frobnicate"]).status.code(), Some(2));
    let missing_source = csct(&["run", "--variant", "cstl_s2", "--target", p(&tgt)]);
    assert_eq!(missing_source.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing_source.stderr).contains("source"));
    assert_eq!(csct(&["run", "--variant", "csc_s2", "--target", p(&tgt), "--set", "bogus=1"]).status.code(), Some(2));
    assert_eq!(csct(&["run", "--variant", "csc_s3", "--target", p(&tgt)]).status.code(), Some(2));
    assert_eq!(csct(&["run", "--variant", "csc_s2", "--target", "/nonexistent.csv"]).status.code(), Some(2));
}

#[test]
fn bad_data_exits_with_3_and_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let tgt = dir.path().join("bad.csv");
    fs::write(&tgt, "subject_id,label,f1,f2\ns1,1,0.1,0.2\ns2,0,0.3,inf\n").unwrap();
    let out = csct(&["run", "--variant", "csc_s2", "--target", p(&tgt)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("row 3") && err.contains("f2"), "{err}");
}

fn write_tone(path: &Path, freq: f64, len: usize) {
    let spec = hound_spec();
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for t in 0..len {
        w.write_sample(((t as f64 * freq).sin() * 10_000.0) as i16).unwrap();
    }
    w.finalize().unwrap();
}

fn hound_spec() -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

#[test]
fn augmentation_expands_every_signal() {
    let dir = tempfile::tempdir().unwrap();
    let (sig, noise) = (dir.path().join("sig"), dir.path().join("noise"));
    fs::create_dir_all(&sig).unwrap();
    fs::create_dir_all(&noise).unwrap();
    write_tone(&sig.join("a.wav"), 0.05, 3000);
    write_tone(&sig.join("b.wav"), 0.11, 2500);
    write_tone(&noise.join("n.wav"), 1.7, 400);
    let out = dir.path().join("rows.csv");
    let wavs = dir.path().join("mixed");
    ok(&[
        "augment", "--signals", p(&sig), "--noise", p(&noise), "--snr", "-5,10,20", "--features", "13", "--out", p(&out),
        "--wav-out", p(&wavs),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert!(text.starts_with("f1,"));
    assert_eq!(fs::read_dir(&wavs).unwrap().count(), 6);
}

#[test]
fn one_worker_reproduces_the_default_pool() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path());
    let (src, tgt) = (dir.path().join("source.csv"), dir.path().join("target.csv"));
    let mut reports = Vec::new();
    for threads in [None, Some("1")] {
        let mut args = vec!["run", "--variant", "cstlok_s2", "--source", p(&src), "--target", p(&tgt)];
        args.extend(SMALL);
        if let Some(t) = threads {
            args.extend(["--threads", t]);
        }
        let out = ok(&args);
        let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        v.as_object_mut().unwrap().remove("timing");
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
}
