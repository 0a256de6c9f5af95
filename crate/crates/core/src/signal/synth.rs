//! Gaussian-bump PQRST generator. R-peak locations are known exactly, which
//! makes the generator a ground-truth oracle for the detector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EcgRecord, BIOVID_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Shortest RR interval the generator accepts (240 bpm).
pub const MIN_RR_MS: f64 = 250.0;

/// One Gaussian component of the complex, positioned relative to the R peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveShape {
    pub amplitude: f64,
    /// Standard deviation of the bump.
    pub width_ms: f64,
    pub offset_ms: f64,
}

impl WaveShape {
    pub const fn new(amplitude: f64, width_ms: f64, offset_ms: f64) -> Self {
        Self {
            amplitude,
            width_ms,
            offset_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEcgSpec {
    pub rr_intervals_ms: Vec<f64>,
    pub p: WaveShape,
    pub q: WaveShape,
    pub r: WaveShape,
    pub s: WaveShape,
    /// The T offset is given for a 1000 ms cycle and scaled by sqrt(RR/1000).
    pub t: WaveShape,
    /// Per-beat amplitude multipliers; empty means all ones.
    pub beat_amplitudes: Vec<f64>,
    pub noise_std: f64,
    pub sample_rate: f64,
}

impl SyntheticEcgSpec {
    /// Lead-II-like morphology at 512 Hz, no noise.
    pub fn new(rr_intervals_ms: Vec<f64>) -> Self {
        Self {
            rr_intervals_ms,
            p: WaveShape::new(0.15, 20.0, -170.0),
            q: WaveShape::new(-0.12, 8.0, -28.0),
            r: WaveShape::new(1.0, 10.0, 0.0),
            s: WaveShape::new(-0.25, 9.0, 28.0),
            t: WaveShape::new(0.3, 40.0, 300.0),
            beat_amplitudes: Vec::new(),
            noise_std: 0.0,
            sample_rate: BIOVID_SAMPLE_RATE,
        }
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_sample_rate(mut self, sample_rate: f64) -> Self {
        self.sample_rate = sample_rate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rr_intervals_ms.is_empty() {
            return Err(Error::InvalidArgument("rr_intervals_ms is empty".into()));
        }
        if let Some(rr) = self
            .rr_intervals_ms
            .iter()
            .find(|rr| !(**rr >= MIN_RR_MS && rr.is_finite()))
        {
            return Err(Error::InvalidArgument(format!(
                "RR interval {rr} ms below the {MIN_RR_MS} ms floor"
            )));
        }
        for (name, w) in self.waves() {
            if !(w.width_ms > 0.0 && w.width_ms.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} wave width must be positive"
                )));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if !self.beat_amplitudes.is_empty()
            && self.beat_amplitudes.len() != self.rr_intervals_ms.len()
        {
            return Err(Error::DimensionMismatch {
                expected: self.rr_intervals_ms.len(),
                actual: self.beat_amplitudes.len(),
            });
        }
        Ok(())
    }

    fn waves(&self) -> [(&'static str, WaveShape); 5] {
        [
            ("P", self.p),
            ("Q", self.q),
            ("R", self.r),
            ("S", self.s),
            ("T", self.t),
        ]
    }

    /// R-peak times in ms. Beat k sits half of the first RR interval into the
    /// record plus the sum of the preceding intervals, so consecutive peaks
    /// are exactly one RR interval apart.
    pub fn r_peak_times_ms(&self) -> Vec<f64> {
        let mut t = self.rr_intervals_ms[0] / 2.0;
        self.rr_intervals_ms
            .iter()
            .map(|rr| {
                let at = t;
                t += rr;
                at
            })
            .collect()
    }
}

/// Renders the spec into a record plus the ground-truth R-peak indices.
pub fn generate_synthetic_ecg(
    spec: &SyntheticEcgSpec,
    seed: u64,
) -> Result<(EcgRecord, Vec<usize>)> {
    spec.validate()?;
    let fs = spec.sample_rate;
    let total_ms: f64 = spec.rr_intervals_ms.iter().sum();
    let len = (total_ms * fs / 1000.0).round() as usize;
    let mut samples = vec![0.0; len];

    let peaks_ms = spec.r_peak_times_ms();
    for (k, (&r_ms, &rr)) in peaks_ms.iter().zip(&spec.rr_intervals_ms).enumerate() {
        let gain = spec.beat_amplitudes.get(k).copied().unwrap_or(1.0);
        for (name, wave) in spec.waves() {
            let offset = if name == "T" {
                wave.offset_ms * (rr / 1000.0).sqrt()
            } else {
                wave.offset_ms
            };
            add_bump(
                &mut samples,
                fs,
                r_ms + offset,
                wave.width_ms,
                gain * wave.amplitude,
            );
        }
    }

    if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for x in &mut samples {
            *x += normal.sample(&mut rng);
        }
    }

    let truth = peaks_ms
        .iter()
        .map(|t| ((t * fs / 1000.0).round() as usize).min(len.saturating_sub(1)))
        .collect();
    Ok((EcgRecord::unlabeled(samples, fs)?, truth))
}

fn add_bump(samples: &mut [f64], fs: f64, centre_ms: f64, width_ms: f64, amplitude: f64) {
    let centre = centre_ms * fs / 1000.0;
    let sigma = width_ms * fs / 1000.0;
    let lo = (centre - 6.0 * sigma).floor().max(0.0) as usize;
    let hi = ((centre + 6.0 * sigma).ceil().max(0.0) as usize).min(samples.len());
    for (i, x) in samples.iter_mut().enumerate().take(hi).skip(lo) {
        let z = (i as f64 - centre) / sigma;
        *x += amplitude * (-0.5 * z * z).exp();
    }
}

/// Noise standard deviation giving `snr_db` relative to the mean power of
/// `clean`.
pub fn noise_std_for_snr(clean: &[f64], snr_db: f64) -> f64 {
    let power = clean.iter().map(|x| x * x).sum::<f64>() / clean.len().max(1) as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_beats_at_one_hz() {
        let (rec, truth) =
            generate_synthetic_ecg(&SyntheticEcgSpec::new(vec![1000.0; 3]), 1).unwrap();
        assert_eq!(truth.len(), 3);
        assert_eq!(truth[1] - truth[0], 512);
        assert_eq!(truth[2] - truth[1], 512);
        assert_eq!(rec.samples().len(), 1536);
        // the R wave is the global maximum of each beat
        for &r in &truth {
            let lo = r.saturating_sub(100);
            let hi = (r + 100).min(rec.samples().len());
            let argmax = (lo..hi)
                .max_by(|&a, &b| rec.samples()[a].total_cmp(&rec.samples()[b]))
                .unwrap();
            assert_eq!(argmax, r);
        }
    }

    #[test]
    fn length_matches_rr_sum() {
        let rr = vec![812.3, 790.1, 1033.7, 655.5];
        let (rec, truth) = generate_synthetic_ecg(&SyntheticEcgSpec::new(rr.clone()), 0).unwrap();
        let expected = rr.iter().sum::<f64>() * 512.0 / 1000.0;
        assert!((rec.samples().len() as f64 - expected).abs() <= 1.0);
        assert_eq!(truth.len(), rr.len());
        assert!(truth.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticEcgSpec::new(vec![900.0; 5]).with_noise(0.05);
        let (a, _) = generate_synthetic_ecg(&spec, 42).unwrap();
        let (b, _) = generate_synthetic_ecg(&spec, 42).unwrap();
        let (c, _) = generate_synthetic_ecg(&spec, 43).unwrap();
        assert!(a
            .samples()
            .iter()
            .zip(b.samples())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(generate_synthetic_ecg(&SyntheticEcgSpec::new(vec![]), 0).is_err());
        assert!(generate_synthetic_ecg(&SyntheticEcgSpec::new(vec![200.0]), 0).is_err());
        let mut spec = SyntheticEcgSpec::new(vec![800.0]);
        spec.r.width_ms = 0.0;
        assert!(generate_synthetic_ecg(&spec, 0).is_err());
        let mut spec = SyntheticEcgSpec::new(vec![800.0, 800.0]);
        spec.beat_amplitudes = vec![1.0];
        assert!(generate_synthetic_ecg(&spec, 0).is_err());
    }

    #[test]
    fn snr_helper() {
        let clean = vec![1.0, -1.0, 1.0, -1.0];
        assert!((noise_std_for_snr(&clean, 20.0) - 0.1).abs() < 1e-12);
    }
}
