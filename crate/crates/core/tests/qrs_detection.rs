use ecgpain::qrs::{detect_qrs, detect_qrs_with_stages, DetectorConfig};
use ecgpain::signal::{generate_synthetic_ecg, noise_std_for_snr, SyntheticEcgSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 512.0;

fn matched(truth: &[usize], found: &[usize], tol: usize) -> usize {
    truth
        .iter()
        .filter(|t| found.iter().any(|f| f.abs_diff(**t) <= tol))
        .count()
}

#[test]
fn noisy_three_beats_recovered_within_25ms() {
    let spec = SyntheticEcgSpec::new(vec![800.0, 820.0, 790.0]).with_noise(0.05);
    let (rec, truth) = generate_synthetic_ecg(&spec, 7).unwrap();
    assert_eq!(truth.len(), 3);
    let res = detect_qrs(&rec, &DetectorConfig::default()).unwrap();
    let tol = (0.025 * FS) as usize;
    assert_eq!(matched(&truth, &res.r_indices, tol), 3);
    assert_eq!(res.r_indices.len(), 3);
}

#[test]
fn weak_beat_recovered_by_searchback() {
    let mut spec = SyntheticEcgSpec::new(vec![1000.0; 10]);
    spec.beat_amplitudes = vec![1.0; 10];
    spec.beat_amplitudes[5] = 0.25;
    let (rec, truth) = generate_synthetic_ecg(&spec, 0).unwrap();
    let res = detect_qrs(&rec, &DetectorConfig::default()).unwrap();
    assert_eq!(res.r_indices.len(), 10, "{:?} vs {:?}", res.r_indices, truth);
    assert!(res.searchback_count >= 1);
    assert_eq!(matched(&truth, &res.r_indices, (0.025 * FS) as usize), 10);
}

#[test]
fn detection_is_deterministic_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rr: Vec<f64> = (0..40).map(|_| rng.random_range(500.0..1200.0)).collect();
    let clean = generate_synthetic_ecg(&SyntheticEcgSpec::new(rr.clone()), 0).unwrap().0;
    let sigma = noise_std_for_snr(clean.samples(), 20.0);
    let (rec, _) = generate_synthetic_ecg(&SyntheticEcgSpec::new(rr).with_noise(sigma), 11).unwrap();
    let cfg = DetectorConfig::default();
    let base = detect_qrs(&rec, &cfg).unwrap();
    assert_eq!(base, detect_qrs(&rec, &cfg).unwrap());
    for a in [0.1, 10.0, 3.7e-3] {
        assert_eq!(detect_qrs(&rec.scaled(a), &cfg).unwrap().r_indices, base.r_indices, "a = {a}");
    }
}

#[test]
fn detections_respect_refractory_period() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..5 {
        let rr: Vec<f64> = (0..30).map(|_| rng.random_range(400.0..1300.0)).collect();
        let (rec, _) =
            generate_synthetic_ecg(&SyntheticEcgSpec::new(rr).with_noise(0.15), trial).unwrap();
        let res = detect_qrs(&rec, &DetectorConfig::default()).unwrap();
        assert!(res
            .r_indices
            .windows(2)
            .all(|w| w[1] >= w[0] + res.refractory_samples));
        assert!(res.r_indices.iter().all(|&i| i < rec.samples().len()));
    }
}

#[test]
fn stages_have_equal_lengths() {
    let (rec, _) = generate_synthetic_ecg(&SyntheticEcgSpec::new(vec![900.0; 6]), 0).unwrap();
    let (_, st) = detect_qrs_with_stages(&rec, &DetectorConfig::default()).unwrap();
    let n = rec.samples().len();
    for s in [&st.bandpassed, &st.derivative, &st.squared, &st.integrated] {
        assert_eq!(s.len(), n);
    }
    assert!(st.squared.iter().all(|x| *x >= 0.0));
}
