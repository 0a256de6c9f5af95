use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 10] = [
    "--set",
    "network.encoder_widths=[16, 16]",
    "--set",
    "network.head_hidden=16",
    "--set",
    "train.epochs=3",
    "--set",
    "train.warmup_epochs=1",
    "--set",
    "train.batch_size=32",
];

fn ecgpain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgpain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_matrix_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let o = ecgpain(&["synth-cohort", "--subjects", "4", "--windows-per-label", "6", "--seed", "3", "--out", p(&cohort)]);
    assert!(o.status.success(), "{o:?}");
    let data = cohort.join("dataset.csv");
    assert!(data.is_file());
    assert!(cohort.join("config.toml").is_file());

    let model = dir.path().join("model");
    let mut args = vec!["train", "--data", p(&data), "--task", "np-vs-p4", "--method", "MT-NN+T(GA)", "--out", p(&model)];
    args.extend(SMALL);
    let o = ecgpain(&args);
    assert!(o.status.success(), "{o:?}");
    assert!(model.join("checkpoint.json").is_file());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(model.join("train.json")).unwrap()).unwrap();
    assert_eq!(summary["loss_history"].as_array().unwrap().len(), 3);

    let results = dir.path().join("results");
    let mut args = vec![
        "run-matrix",
        "--data",
        p(&data),
        "--out",
        p(&results),
        "--workers",
        "2",
        "--set",
        "tasks=[\"np-vs-p1\", \"multi-class\"]",
        "--set",
        "methods=[\"ST-NN\", \"ST-NN+F(GA)\"]",
    ];
    args.extend(SMALL);
    let o = ecgpain(&args);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("NP vs P1") && text.contains("ST-NN+F(GA)"), "{text}");
    let run_dir = fs::read_dir(&results).unwrap().next().unwrap().unwrap().path();
    assert!(run_dir.join("matrix.csv").is_file());
    assert!(run_dir.join("folds/all/multi-class/st-nn.json").is_file());
    let echoed = fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("workers = 2"), "{echoed}");

    let o = ecgpain(&["report", "--run", p(&run_dir)]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("Comparison: basic | all"), "{text}");
    assert!(text.contains("vs ST-NN"), "{text}");
}

#[test]
fn raw_export_then_extract_features_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let o = ecgpain(&["synth-cohort", "--raw", "--subjects", "2", "--windows-per-label", "1", "--out", p(&raw)]);
    assert!(o.status.success(), "{o:?}");
    let input = raw.join("dataset.csv");

    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ecgpain(&["extract-features", "--input", p(&input), "--out", p(&out)]);
        assert!(o.status.success(), "{o:?}");
        assert!(stdout(&o).contains("10 feature rows, 0 rejected"), "{}", stdout(&o));
        let rejects = fs::read_to_string(out.join("features.rejects.csv")).unwrap();
        assert_eq!(rejects.lines().count(), 1);
        fs::read(out.join("features.csv")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn detect_prints_peaks_and_dumps_stages() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    assert!(ecgpain(&["synth-cohort", "--raw", "--subjects", "2", "--windows-per-label", "1", "--out", p(&raw)])
        .status
        .success());
    let ecg = raw.join("ecg").join("S001_000.txt");
    let stages = dir.path().join("stages.csv");
    let o = ecgpain(&["detect", "--input", p(&ecg), "--stages", p(&stages)]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert!(text.contains("r_indices: [") && text.contains("heart_rate_bpm"), "{text}");

    let csv = fs::read_to_string(&stages).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "raw,bandpassed,derivative,squared,integrated");
    let rows: Vec<&str> = lines.collect();
    let n_samples = fs::read_to_string(&ecg).unwrap().lines().count();
    assert_eq!(rows.len(), n_samples);
    assert!(rows.iter().all(|r| r.split(',').count() == 5));
}

#[test]
fn flat_line_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.txt");
    fs::write(&flat, "0.5\n".repeat(4096)).unwrap();
    let o = ecgpain(&["detect", "--input", p(&flat)]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("flat-line"));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgpain(&["synth-cohort", "--set", "train.epoch=3", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let o = ecgpain(&["synth-cohort", "--workers", "0", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[loss]\nform = \"sideways\"\n").unwrap();
    let o = ecgpain(&["synth-cohort", "--config", p(&bad), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{o:?}");
}

#[test]
fn missing_dataset_is_not_success() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecgpain(&["run-matrix", "--data", p(&dir.path().join("nope.csv")), "--out", p(dir.path())]);
    assert!(!o.status.success());
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn gradcheck_passes_and_detects_corruption() {
    let o = ecgpain(&["gradcheck", "--samples", "40"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    assert_eq!(text.matches("PASS").count(), 4, "{text}");
    assert!(text.contains("paper-literal"));

    let o = ecgpain(&["gradcheck", "--samples", "40", "--corrupt", "1.5"]);
    assert_eq!(o.status.code(), Some(4), "{o:?}");
    assert!(stdout(&o).contains("FAIL"));
}
