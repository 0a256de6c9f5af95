use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{DataRecord, Dataset, Payload, Provenance};
use super::AGE_BINS;
use crate::error::{Error, Result};
use crate::hrv::{compute_features_with, HrvOptions, IbiSeries};
use crate::signal::{
    generate_synthetic_ecg, noise_std_for_snr, write_samples, Gender, PainLabel, SyntheticEcgSpec,
    BIOVID_SAMPLE_RATE,
};

/// Parameters of the synthetic cohort. Each pain level `k` shortens the
/// subject's mean inter-beat interval by `effect * k` (relative), reduces
/// beat-to-beat variability, and adds a within-window acceleration, so the
/// label is recoverable from the HRV features.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub windows_per_label: usize,
    pub window_s: f64,
    pub effect: f64,
    pub seed: u64,
    /// Signal-to-noise ratio of the raw ECG export, in dB.
    pub snr_db: f64,
}

impl CohortSpec {
    pub fn new(n_subjects: usize, seed: u64) -> Self {
        Self {
            n_subjects,
            windows_per_label: 20,
            window_s: 5.5,
            effect: 0.08,
            seed,
            snr_db: 25.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::InvalidArgument(format!(
                "a cohort needs at least 2 subjects, got {}",
                self.n_subjects
            )));
        }
        if self.windows_per_label == 0 || !(self.window_s >= 3.0) {
            return Err(Error::InvalidArgument("windows must be nonempty and at least 3 s long".into()));
        }
        if !(0.0..0.2).contains(&self.effect) {
            return Err(Error::InvalidArgument(format!("effect {} outside [0, 0.2)", self.effect)));
        }
        Ok(())
    }
}

struct SubjectPlan {
    id: String,
    gender: Gender,
    age: u32,
    base_ibi: f64,
    base_sd: f64,
    rng: ChaCha8Rng,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Genders alternate and age bins rotate every two subjects, so any
/// multiple of six subjects is balanced across all six gender-age cells.
fn plan_subjects(spec: &CohortSpec) -> Vec<SubjectPlan> {
    (0..spec.n_subjects)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ splitmix(i as u64));
            let gender = if i % 2 == 0 { Gender::Male } else { Gender::Female };
            let (lo, hi) = AGE_BINS[(i / 2) % AGE_BINS.len()];
            let age = rng.random_range(lo..=hi);
            let female = gender == Gender::Female;
            let base_ibi = 900.0 - if female { 40.0 } else { 0.0 } - 1.0 * (age as f64 - 40.0)
                + 25.0 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let base_sd =
                (40.0 - 0.3 * (age as f64 - 20.0) + 4.0 * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(10.0);
            SubjectPlan {
                id: format!("S{:03}", i + 1),
                gender,
                age,
                base_ibi,
                base_sd,
                rng,
            }
        })
        .collect()
}

/// Beat-to-beat intervals covering one window.
fn window_rr(plan: &mut SubjectPlan, label: PainLabel, spec: &CohortSpec) -> Vec<f64> {
    let k = label.index() as f64;
    let mean = plan.base_ibi * (1.0 - spec.effect * k);
    let sd = plan.base_sd * (1.0 - 0.12 * k);
    let trend = -1.5 * k;
    let noise = Normal::new(0.0, sd).expect("positive sd");
    let total = spec.window_s * 1000.0;
    let mut rr = Vec::new();
    let mut acc = 0.0;
    while acc < total {
        let j = rr.len() as f64;
        let v = (mean + trend * j + noise.sample(&mut plan.rng)).max(320.0);
        acc += v;
        rr.push(v);
    }
    rr
}

fn for_each_window(
    spec: &CohortSpec,
    mut f: impl FnMut(&SubjectPlan, PainLabel, usize, Vec<f64>) -> Result<DataRecord>,
) -> Result<Dataset> {
    spec.validate()?;
    let mut plans = plan_subjects(spec);
    let mut records = Vec::with_capacity(spec.n_subjects * 5 * spec.windows_per_label);
    for plan in &mut plans {
        for label in PainLabel::ALL {
            for rep in 0..spec.windows_per_label {
                let rr = window_rr(plan, label, spec);
                let window = label.index() * spec.windows_per_label + rep;
                records.push(f(plan, label, window, rr)?);
            }
        }
    }
    Dataset::new(records, Provenance::SyntheticCohort)
}

/// Feature-mode cohort; features are computed from the intervals between
/// successive synthetic R peaks.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Dataset> {
    for_each_window(spec, |plan, label, window, rr| {
        // the first interval only positions the first R peak
        let ibis = IbiSeries::new(rr[1..].to_vec())?;
        let f = compute_features_with(&ibis, HrvOptions::default())?;
        Ok(DataRecord {
            subject_id: plan.id.clone(),
            gender: plan.gender,
            age: plan.age,
            pain_label: label,
            window_id: window.to_string(),
            payload: Payload::Features(f.to_array()),
        })
    })
}

pub fn generate_synthetic_cohort(n_subjects: usize, seed: u64) -> Result<Dataset> {
    generate_cohort(&CohortSpec::new(n_subjects, seed))
}

/// Raw-ECG export of the same cohort: one samples file per window under
/// `dir/ecg/` and a raw-mode `dir/dataset.csv`. Returns the CSV path.
pub fn write_raw_cohort(spec: &CohortSpec, dir: &Path) -> Result<PathBuf> {
    let ecg_dir = dir.join("ecg");
    fs::create_dir_all(&ecg_dir).map_err(|e| Error::io(&ecg_dir, e))?;
    let ds = for_each_window(spec, |plan, label, window, rr| {
        let clean_spec = SyntheticEcgSpec::new(rr);
        let wseed = splitmix(plan.rng.clone().random::<u64>() ^ window as u64);
        let (clean, _) = generate_synthetic_ecg(&clean_spec, wseed)?;
        let sigma = noise_std_for_snr(clean.samples(), spec.snr_db);
        let (noisy, _) = generate_synthetic_ecg(&clean_spec.with_noise(sigma), wseed)?;
        let path = ecg_dir.join(format!("{}_{window:03}.txt", plan.id));
        write_samples(&path, noisy.samples())?;
        Ok(DataRecord {
            subject_id: plan.id.clone(),
            gender: plan.gender,
            age: plan.age,
            pain_label: label,
            window_id: window.to_string(),
            payload: Payload::Ecg {
                sample_rate: BIOVID_SAMPLE_RATE,
                samples_path: path,
            },
        })
    })?;
    let csv = dir.join("dataset.csv");
    ds.write_csv(&csv)?;
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{make_scheme, SchemeKind};

    #[test]
    fn six_subjects_balanced() {
        let ds = generate_synthetic_cohort(6, 1).unwrap();
        assert_eq!(ds.len(), 600);
        for (_, c) in ds.label_counts() {
            assert_eq!(c, [20; 5]);
        }
        let ga = make_scheme(&ds, SchemeKind::GenderAge).unwrap();
        assert!(ga.groups.iter().all(|g| g.subjects.len() == 1));
        assert!(generate_synthetic_cohort(1, 1).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_synthetic_cohort(4, 9).unwrap(), generate_synthetic_cohort(4, 9).unwrap());
        assert_ne!(generate_synthetic_cohort(4, 9).unwrap(), generate_synthetic_cohort(4, 10).unwrap());
    }

    #[test]
    fn heart_rate_rises_with_pain() {
        let ds = generate_synthetic_cohort(2, 3).unwrap();
        let mut hr = [0.0; 5];
        for r in ds.records() {
            hr[r.pain_label.index()] += r.features().unwrap()[5];
        }
        assert!(hr.windows(2).all(|w| w[1] > w[0]), "{hr:?}");
    }
}
