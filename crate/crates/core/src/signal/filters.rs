//! Sample-rate-generic versions of the four Pan-Tompkins pre-processing
//! stages. All filters are causal and run in a single pass.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Group delay of [`derivative_filter`], in samples.
pub const DERIVATIVE_DELAY: usize = 2;

/// Second-order IIR section, normalized so that `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/sqrt 2) low-pass via the bilinear transform with
    /// the cutoff pre-warped.
    pub fn lowpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let (cos_w, alpha) = Self::prewarp(cutoff_hz, sample_rate);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 - cos_w) / 2.0;
        Self {
            b: [b0 / a0, (1.0 - cos_w) / a0, b0 / a0],
            a: [-2.0 * cos_w / a0, (1.0 - alpha) / a0],
        }
    }

    /// Butterworth high-pass, see [`Biquad::lowpass`].
    pub fn highpass(cutoff_hz: f64, sample_rate: f64) -> Self {
        let (cos_w, alpha) = Self::prewarp(cutoff_hz, sample_rate);
        let a0 = 1.0 + alpha;
        let b0 = (1.0 + cos_w) / 2.0;
        Self {
            b: [b0 / a0, -(1.0 + cos_w) / a0, b0 / a0],
            a: [-2.0 * cos_w / a0, (1.0 - alpha) / a0],
        }
    }

    fn prewarp(cutoff_hz: f64, sample_rate: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        (w0.cos(), w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2))
    }

    /// Zero-initial-state filtering (transposed direct form II).
    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let (mut z1, mut z2) = (0.0, 0.0);
        input
            .iter()
            .map(|&x| {
                let y = b0 * x + z1;
                z1 = b1 * x - a1 * y + z2;
                z2 = b2 * x - a2 * y;
                y
            })
            .collect()
    }

    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }
}

/// The 5-15 Hz (by default) band-pass: a high-pass section followed by a
/// low-pass section, both designed for the actual sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    sample_rate: f64,
    low_hz: f64,
    high_hz: f64,
    sections: [Biquad; 2],
}

impl BandPass {
    pub fn new(sample_rate: f64, low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate / 2.0) {
            return Err(Error::InvalidArgument(format!(
                "band edges must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} at {sample_rate} Hz"
            )));
        }
        Ok(Self {
            sample_rate,
            low_hz,
            high_hz,
            sections: [
                Biquad::highpass(low_hz, sample_rate),
                Biquad::lowpass(high_hz, sample_rate),
            ],
        })
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let stage = self.sections[0].apply(input);
        self.sections[1].apply(&stage)
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        self.sections
            .iter()
            .map(|s| s.response(freq_hz, self.sample_rate))
            .product()
    }

    /// Group delay in samples at `freq_hz`, from the phase slope of the
    /// analytic response.
    pub fn group_delay(&self, freq_hz: f64) -> f64 {
        let df = 1e-3;
        let ratio = self.response(freq_hz + df) * self.response(freq_hz - df).conj();
        let dphi = ratio.arg();
        let dw = 2.0 * PI * (2.0 * df) / self.sample_rate;
        -dphi / dw
    }

    /// Group delay at the geometric band centre, rounded to whole samples.
    pub fn center_delay_samples(&self) -> usize {
        let centre = (self.low_hz * self.high_hz).sqrt();
        self.group_delay(centre).round().max(0.0) as usize
    }
}

pub fn bandpass_filter(
    samples: &[f64],
    sample_rate: f64,
    low_hz: f64,
    high_hz: f64,
) -> Result<Vec<f64>> {
    Ok(BandPass::new(sample_rate, low_hz, high_hz)?.apply(samples))
}

/// Five-point causal derivative
/// `y[n] = fs/8 * (2x[n] + x[n-1] - x[n-3] - 2x[n-4])`.
///
/// Samples before the start are taken equal to the first sample, so a
/// constant input gives an all-zero output. The kernel delays by
/// [`DERIVATIVE_DELAY`] samples and its gain at low frequencies is
/// `1.25 * 2*pi*f`.
pub fn derivative_filter(samples: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    if samples.len() < 5 {
        return Err(Error::SignalTooShort {
            samples: samples.len(),
            required: 5,
        });
    }
    let scale = sample_rate / 8.0;
    let at = |i: isize| samples[i.max(0) as usize];
    Ok((0..samples.len() as isize)
        .map(|n| scale * (2.0 * at(n) + at(n - 1) - at(n - 3) - 2.0 * at(n - 4)))
        .collect())
}

pub fn square_signal(samples: &[f64]) -> Vec<f64> {
    samples.iter().map(|x| x * x).collect()
}

/// Trailing moving average over `window` samples. Near the start, where
/// fewer than `window` samples exist, the mean is over what is available.
pub fn moving_window_integrate(samples: &[f64], window: usize) -> Result<Vec<f64>> {
    if window < 1 {
        return Err(Error::InvalidArgument(
            "integration window must be at least one sample".into(),
        ));
    }
    let mut out = Vec::with_capacity(samples.len());
    let mut sum = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        sum += x;
        if i >= window {
            sum -= samples[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 512.0;

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    fn steady_amplitude(x: &[f64]) -> f64 {
        // last two seconds, well past the transient
        x[x.len() - 2 * FS as usize..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn bandpass_rejects_dc() {
        let out = bandpass_filter(&vec![5.0; 5 * FS as usize], FS, 5.0, 15.0).unwrap();
        assert!(out.last().unwrap().abs() < 1e-6);
        assert!(steady_amplitude(&out) < 5.0 * 0.1);
    }

    #[test]
    fn bandpass_passband_and_stopband() {
        let n = 8 * FS as usize;
        let ten = steady_amplitude(&bandpass_filter(&sine(10.0, n), FS, 5.0, 15.0).unwrap());
        let db = 20.0 * ten.log10();
        assert!(db.abs() < 3.0, "10 Hz gain {db} dB");
        let sixty = steady_amplitude(&bandpass_filter(&sine(60.0, n), FS, 5.0, 15.0).unwrap());
        assert!(sixty <= 0.1, "60 Hz amplitude {sixty}");
    }

    #[test]
    fn measured_gain_matches_analytic_response() {
        let bp = BandPass::new(FS, 5.0, 15.0).unwrap();
        for f in [3.0, 8.0, 12.0, 25.0] {
            let measured = steady_amplitude(&bp.apply(&sine(f, 10 * FS as usize)));
            let analytic = bp.response(f).norm();
            assert!((measured - analytic).abs() < 2e-3, "{f} Hz: {measured} vs {analytic}");
        }
        assert!(bp.response(0.0).norm() < 1e-12);
    }

    #[test]
    fn bandpass_cutoff_validation() {
        assert!(bandpass_filter(&[0.0; 10], FS, 15.0, 5.0).is_err());
        assert!(bandpass_filter(&[0.0; 10], FS, 0.0, 5.0).is_err());
        assert!(bandpass_filter(&[0.0; 10], FS, 5.0, 256.0).is_err());
    }

    #[test]
    fn group_delay_is_plausible() {
        let bp = BandPass::new(FS, 5.0, 15.0).unwrap();
        let d = bp.center_delay_samples();
        assert!(d > 0 && d < (0.05 * FS) as usize, "{d}");
    }

    #[test]
    fn derivative_of_constant_and_ramp() {
        assert!(derivative_filter(&[3.0; 20], FS)
            .unwrap()
            .iter()
            .all(|&y| y == 0.0));
        let k = 0.25;
        let ramp: Vec<f64> = (0..50).map(|i| k * i as f64).collect();
        let d = derivative_filter(&ramp, FS).unwrap();
        for y in &d[4..] {
            assert!((y - 1.25 * k * FS).abs() < 1e-9);
        }
        assert!(derivative_filter(&[1.0; 4], FS).is_err());
    }

    #[test]
    fn derivative_gain_tracks_frequency() {
        // analytic gain of the kernel: fs/4 * (2 sin 2w + sin w)
        let n = 4 * FS as usize;
        let mut prev = 0.0;
        for f in [1.0, 2.0, 4.0, 8.0] {
            let d = derivative_filter(&sine(f, n), FS).unwrap();
            let amp = steady_amplitude(&d);
            let w = 2.0 * PI * f / FS;
            let expected = FS / 4.0 * (2.0 * (2.0 * w).sin() + w.sin());
            assert!((amp - expected).abs() / expected < 1e-3, "{f}: {amp} vs {expected}");
            assert!(amp > prev);
            prev = amp;
        }
    }

    #[test]
    fn squaring() {
        assert_eq!(square_signal(&[-2.0, 3.0]), vec![4.0, 9.0]);
        assert_eq!(square_signal(&[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn integration_cases() {
        assert_eq!(moving_window_integrate(&[2.5; 30], 7).unwrap(), vec![2.5; 30]);
        let mut impulse = vec![0.0; 40];
        impulse[10] = 1.0;
        let out = moving_window_integrate(&impulse, 8).unwrap();
        for (i, y) in out.iter().enumerate() {
            let expected = if (10..18).contains(&i) { 1.0 / 8.0 } else { 0.0 };
            assert!((y - expected).abs() < 1e-15, "{i}");
        }
        let x = [0.3, -1.0, 2.0, 7.5];
        assert_eq!(moving_window_integrate(&x, 1).unwrap(), x.to_vec());
        assert!(moving_window_integrate(&x, 0).is_err());
    }
}
