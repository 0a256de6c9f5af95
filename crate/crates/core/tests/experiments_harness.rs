use std::collections::BTreeSet;
use std::fs;

use ecgpain::experiments::{
    compare_methods, extract_features, generate_synthetic_cohort, load_fold_reports, make_scheme,
    render_tables, run_loso, run_matrix, write_matrix, write_raw_cohort, CohortSpec, DataRecord,
    Dataset, ExperimentConfig, Group, Method, MethodScores, Payload, Provenance, SchemeKind,
    TaskKind,
};
use ecgpain::hrv::HrvOptions;
use ecgpain::qrs::DetectorConfig;
use ecgpain::signal::Gender;
use ecgpain::Error;

fn small_config(extra: &[&str]) -> ExperimentConfig {
    let mut ov: Vec<String> = [
        "network.encoder_widths=[16, 16]",
        "network.head_hidden=16",
        "train.epochs=4",
        "train.warmup_epochs=1",
        "train.batch_size=32",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    ov.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::load(None, &ov).unwrap()
}

fn all_group(ds: &Dataset) -> Group {
    make_scheme(ds, SchemeKind::Basic).unwrap().groups.remove(0)
}

#[test]
fn schemes_partition_the_cohort() {
    let ds = generate_synthetic_cohort(14, 2).unwrap();
    let everyone: BTreeSet<String> = ds.subjects().into_iter().map(|s| s.id).collect();
    for (kind, n_groups) in [
        (SchemeKind::Basic, 1),
        (SchemeKind::Gender, 2),
        (SchemeKind::Age, 3),
        (SchemeKind::GenderAge, 6),
    ] {
        let scheme = make_scheme(&ds, kind).unwrap();
        assert_eq!(scheme.groups.len(), n_groups);
        let mut seen = BTreeSet::new();
        for g in &scheme.groups {
            for s in &g.subjects {
                assert!(seen.insert(s.clone()), "{s} in two {kind} groups");
            }
        }
        assert_eq!(seen, everyone);
        let total: usize = scheme.groups.iter().map(|g| g.subjects.len()).sum();
        assert_eq!(total, 14);
    }
}

#[test]
fn boundary_ages_use_closed_bins() {
    let rec = |id: &str, age: u32, w: &str| DataRecord {
        subject_id: id.into(),
        gender: Gender::Female,
        age,
        pain_label: "NP".parse().unwrap(),
        window_id: w.into(),
        payload: Payload::Features([800.0, 30.0, 25.0, 0.5, 0.8, 75.0]),
    };
    let ds = Dataset::new(
        vec![rec("a", 35, "0"), rec("b", 36, "0"), rec("c", 50, "0"), rec("d", 51, "0")],
        Provenance::BioVidCsv,
    )
    .unwrap();
    let age = make_scheme(&ds, SchemeKind::Age).unwrap();
    let names: Vec<Vec<String>> = age.groups.iter().map(|g| g.subjects.clone()).collect();
    assert_eq!(names, [vec!["a".to_string()], vec!["b".into(), "c".into()], vec!["d".into()]]);
}

#[test]
fn majority_baseline_is_chance_on_balanced_binary() {
    let ds = generate_synthetic_cohort(50, 4).unwrap();
    let cfg = small_config(&["methods=[\"Majority\"]"]);
    let r = run_loso(&ds, &all_group(&ds), TaskKind::NpVsP2, Method::Majority, &cfg).unwrap();
    assert_eq!(r.folds.len(), 50);
    assert_eq!(r.n_windows, 2000);
    assert!((r.accuracy - 50.0).abs() <= 5.0, "{}", r.accuracy);
}

#[test]
fn one_fold_per_subject_and_pooled_accuracy() {
    let ds = generate_synthetic_cohort(6, 5).unwrap();
    let cfg = small_config(&[]);
    let method: Method = "MT-NN+T(GA)".parse().unwrap();
    let r = run_loso(&ds, &all_group(&ds), TaskKind::MultiClass, method, &cfg).unwrap();
    assert_eq!(r.folds.len(), 6);
    let mut weighted = 0.0;
    let mut total = 0;
    for f in &r.folds {
        let acc = f.accuracy.unwrap();
        assert!((0.0..=100.0).contains(&acc));
        weighted += acc * f.n_test as f64;
        total += f.n_test;
        assert_eq!(f.audit.violations, 0);
        assert!(!f.audit.training_subjects.contains(&f.test_subject));
        assert!(!f.audit.normalization_subjects.contains(&f.test_subject));
        assert_eq!(f.audit.training_subjects.len(), 5);
    }
    assert_eq!(total, r.n_windows);
    assert!((weighted / total as f64 - r.accuracy).abs() <= 1e-9);
}

#[test]
fn reports_are_byte_identical_across_runs_and_workers() {
    let ds = generate_synthetic_cohort(4, 6).unwrap();
    let method: Method = "ST-NN+F(GA)".parse().unwrap();
    let run = |workers: &str| {
        let cfg = small_config(&[&format!("workers={workers}"), "seed=11"]);
        let r = run_loso(&ds, &all_group(&ds), TaskKind::NpVsP3, method, &cfg).unwrap();
        serde_json::to_string(&r).unwrap()
    };
    let a = run("1");
    assert_eq!(a, run("1"));
    assert_eq!(a, run("3"));
}

#[test]
fn held_out_rows_do_not_reach_the_fold_model() {
    let ds = generate_synthetic_cohort(4, 8).unwrap();
    let cfg = small_config(&[]);
    let group = all_group(&ds);
    let base = run_loso(&ds, &group, TaskKind::NpVsP4, "ST-NN".parse::<Method>().unwrap(), &cfg).unwrap();

    let victim = group.subjects[2].clone();
    let perturbed: Vec<DataRecord> = ds
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if r.subject_id == victim {
                if let Payload::Features(f) = &mut r.payload {
                    f.iter_mut().for_each(|x| *x = *x * 3.0 + 17.0);
                }
            }
            r
        })
        .collect();
    let ds2 = Dataset::new(perturbed, ds.provenance).unwrap();
    let pert = run_loso(&ds2, &group, TaskKind::NpVsP4, "ST-NN".parse::<Method>().unwrap(), &cfg).unwrap();
    for (a, b) in base.folds.iter().zip(&pert.folds) {
        if a.test_subject == victim {
            assert_eq!(a.model_digest, b.model_digest, "held-out subject changed its own fold model");
        } else {
            assert_ne!(a.model_digest, b.model_digest, "training data change not reflected");
        }
    }
}

#[test]
fn degenerate_folds_are_skipped_and_flagged() {
    let ds = generate_synthetic_cohort(2, 3).unwrap();
    let records: Vec<DataRecord> = ds
        .records()
        .iter()
        .filter(|r| r.subject_id == "S001" || r.pain_label.index() == 0)
        .cloned()
        .collect();
    let ds = Dataset::new(records, ds.provenance).unwrap();
    let cfg = small_config(&[]);
    let r = run_loso(&ds, &all_group(&ds), TaskKind::NpVsP1, Method::Majority, &cfg).unwrap();
    // holding out S001 leaves only S002's NP windows for training
    assert_eq!(r.skipped_folds, 1);
    assert!(r.folds[0].skipped.as_deref().unwrap().contains("degenerate"));
    assert!(r.folds[1].skipped.is_none());
}

#[test]
fn too_small_groups_are_rejected() {
    let ds = generate_synthetic_cohort(2, 3).unwrap();
    let g = Group {
        name: "one".into(),
        subjects: vec!["S001".into()],
    };
    assert!(run_loso(&ds, &g, TaskKind::NpVsP1, Method::Majority, &small_config(&[])).is_err());
}

#[test]
fn augmentation_changes_only_input_dim() {
    let ds = generate_synthetic_cohort(2, 3).unwrap();
    let cfg = small_config(&["train.epochs=2"]);
    let g = all_group(&ds);
    let st = run_loso(&ds, &g, TaskKind::NpVsP1, "ST-NN".parse().unwrap(), &cfg).unwrap();
    let fga = run_loso(&ds, &g, TaskKind::NpVsP1, "ST-NN+F(GA)".parse().unwrap(), &cfg).unwrap();
    let differing: Vec<&String> = st
        .component_hashes
        .iter()
        .filter(|(k, v)| fga.component_hashes[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    assert_eq!(differing, ["augmentation", "method", "network"]);
    let mut a = st.cell_config["network"].clone();
    let b = &fga.cell_config["network"];
    assert_eq!(a["input_dim"], 6);
    assert_eq!(b["input_dim"], 8);
    a["input_dim"] = b["input_dim"].clone();
    assert_eq!(&a, b);
    assert_ne!(st.config_hash, fga.config_hash);
}

#[test]
fn matrix_writes_traceable_cells() {
    let ds = generate_synthetic_cohort(6, 9).unwrap();
    let cfg = small_config(&[
        "train.epochs=2",
        "schemes=[\"basic\", \"gender-age\"]",
        "tasks=[\"np-vs-p4\", \"multi-class\"]",
        "methods=[\"ST-NN\", \"Majority\"]",
    ]);
    let report = run_matrix(&ds, &cfg).unwrap();
    // basic: 1 group; gender-age: 6 single-subject groups that fail per cell
    assert_eq!(report.cells.len(), 7 * 2 * 2);
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    assert_eq!(failed, 6 * 2 * 2);
    for c in report.cells.iter().filter(|c| c.report.is_some()) {
        let r = c.report.as_ref().unwrap();
        assert_eq!(r.seed, cfg.seed);
        assert_eq!(r.config_hash.len(), 64);
    }
    let tables = render_tables(&report.cells);
    assert!(tables.contains("NP vs P4"));
    assert!(tables.contains("ST-NN"));
    assert!(tables.contains("err"));

    let dir = tempfile::tempdir().unwrap();
    let run_dir = write_matrix(&report, dir.path()).unwrap();
    assert!(run_dir.join("matrix.csv").is_file());
    assert!(run_dir.join("matrix.txt").is_file());
    assert!(run_dir.join("folds/all/np-vs-p4/st-nn.json").is_file());
    let mut loaded = load_fold_reports(&run_dir).unwrap();
    let mut original = report.cells.clone();
    let key = |c: &ecgpain::experiments::MatrixCell| (c.scheme, c.group.clone(), c.method, c.task);
    loaded.sort_by_key(key);
    original.sort_by_key(key);
    assert_eq!(loaded, original);

    let empty = ExperimentConfig::load(None, &["methods=[]".to_string()]);
    assert!(matches!(empty, Err(Error::Config(_))));
}

#[test]
fn compare_methods_over_matrix_rows() {
    let t = TaskKind::ALL;
    let a = MethodScores::new("ST-NN", &t, &[50.0, 52.0, 54.0, 56.0, 20.0]).unwrap();
    let b = MethodScores::new("MT-NN+T(GA)", &t, &[51.0, 52.0, 55.0, 56.0, 21.0]).unwrap();
    let cmp = compare_methods(&[a, b]).unwrap();
    assert!((cmp.delta("ST-NN", "MT-NN+T(GA)").unwrap() - 0.6).abs() < 1e-12);
}

#[test]
fn raw_cohort_extracts_cleanly_and_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = CohortSpec::new(2, 21);
    spec.windows_per_label = 2;
    let csv = write_raw_cohort(&spec, dir.path()).unwrap();
    let raw = Dataset::load_csv(&csv, Provenance::SyntheticCohort).unwrap();
    assert!(!raw.is_feature_mode());
    assert_eq!(raw.len(), 20);

    let det = DetectorConfig::default();
    let (feat, rejects) = extract_features(&raw, &det, HrvOptions::default()).unwrap();
    assert!(rejects.is_empty(), "{rejects:?}");
    assert_eq!(feat.len(), raw.len());

    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    feat.write_csv(&a).unwrap();
    extract_features(&raw, &det, HrvOptions::default()).unwrap().0.write_csv(&b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    // extracted features follow the injected heart-rate effect
    let hr = |label: usize| -> f64 {
        let rows: Vec<f64> = feat
            .records()
            .iter()
            .filter(|r| r.pain_label.index() == label)
            .map(|r| r.features().unwrap()[5])
            .collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    assert!(hr(4) > hr(0));
    let reloaded = Dataset::load_csv(&a, Provenance::SyntheticCohort).unwrap();
    assert_eq!(reloaded.len(), feat.len());
}

#[test]
fn sparse_windows_are_rejected_with_reason() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = CohortSpec::new(2, 21);
    spec.windows_per_label = 1;
    let csv = write_raw_cohort(&spec, dir.path()).unwrap();
    // overwrite one window with a 2-beat recording
    let raw = Dataset::load_csv(&csv, Provenance::SyntheticCohort).unwrap();
    let Payload::Ecg { samples_path, .. } = &raw.records()[0].payload else {
        panic!("raw mode expected")
    };
    let spec2 = ecgpain::signal::SyntheticEcgSpec::new(vec![2750.0, 2750.0]);
    let (two_beats, _) = ecgpain::signal::generate_synthetic_ecg(&spec2, 1).unwrap();
    ecgpain::signal::write_samples(samples_path, two_beats.samples()).unwrap();

    let (feat, rejects) = extract_features(&raw, &DetectorConfig::default(), HrvOptions::default()).unwrap();
    assert_eq!(rejects.len(), 1);
    assert_eq!(rejects[0].subject_id, raw.records()[0].subject_id);
    assert!(rejects[0].reason.starts_with("insufficient-beats"), "{}", rejects[0].reason);
    assert_eq!(feat.len(), raw.len() - 1);
}
