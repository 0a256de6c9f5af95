//! Inter-beat intervals and the six time-domain HRV features, plus the
//! demographic augmentation and per-fold z-scoring used downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Gender;

/// Number of HRV features before augmentation.
pub const BASE_FEATURES: usize = 6;

pub const FEATURE_NAMES: [&str; BASE_FEATURES] = [
    "mean_ibi_ms",
    "rmssd_ms",
    "sdnn_ms",
    "ibi_slope",
    "sdnn_rmssd_ratio",
    "heart_rate_bpm",
];

/// Inter-beat intervals in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbiSeries(Vec<f64>);

impl IbiSeries {
    pub fn new(ibis_ms: Vec<f64>) -> Result<Self> {
        if let Some(x) = ibis_ms.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "inter-beat intervals must be positive, got {x}"
            )));
        }
        Ok(Self(ibis_ms))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn compute_ibis(r_indices: &[usize], sample_rate: f64) -> Result<IbiSeries> {
    if r_indices.len() < 3 {
        return Err(Error::InsufficientBeats {
            found: r_indices.len(),
            required: 3,
        });
    }
    if !(sample_rate > 0.0) {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let ibis = r_indices
        .windows(2)
        .map(|w| {
            if w[1] <= w[0] {
                Err(Error::InvalidArgument(
                    "R indices must be strictly increasing".into(),
                ))
            } else {
                Ok((w[1] - w[0]) as f64 / sample_rate * 1000.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    IbiSeries::new(ibis)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdnnEstimator {
    /// Divide by N.
    #[default]
    Population,
    /// Divide by N - 1.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeAxis {
    /// Regress IBI against its 0-based position (ms per beat).
    #[default]
    BeatIndex,
    /// Regress IBI against the cumulative time at the end of each interval (ms per second).
    Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HrvOptions {
    pub sdnn: SdnnEstimator,
    pub slope_axis: SlopeAxis,
}

/// The six base features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrvFeatures {
    pub mean_ibi_ms: f64,
    pub rmssd_ms: f64,
    pub sdnn_ms: f64,
    pub ibi_slope: f64,
    pub sdnn_rmssd_ratio: f64,
    pub heart_rate_bpm: f64,
    /// Set when RMSSD is zero and the ratio was emitted as 0.
    pub ratio_degenerate: bool,
}

impl HrvFeatures {
    pub fn to_array(&self) -> [f64; BASE_FEATURES] {
        [
            self.mean_ibi_ms,
            self.rmssd_ms,
            self.sdnn_ms,
            self.ibi_slope,
            self.sdnn_rmssd_ratio,
            self.heart_rate_bpm,
        ]
    }

    pub fn from_array(v: [f64; BASE_FEATURES]) -> Self {
        Self {
            mean_ibi_ms: v[0],
            rmssd_ms: v[1],
            sdnn_ms: v[2],
            ibi_slope: v[3],
            sdnn_rmssd_ratio: v[4],
            heart_rate_bpm: v[5],
            ratio_degenerate: v[1] == 0.0,
        }
    }
}

pub fn compute_features(ibis: &IbiSeries) -> Result<HrvFeatures> {
    compute_features_with(ibis, HrvOptions::default())
}

pub fn compute_features_with(ibis: &IbiSeries, opts: HrvOptions) -> Result<HrvFeatures> {
    let x = ibis.as_slice();
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientBeats {
            found: n + 1,
            required: 3,
        });
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let sdnn = match opts.sdnn {
        SdnnEstimator::Population => (ss / nf).sqrt(),
        SdnnEstimator::Sample => (ss / (nf - 1.0)).sqrt(),
    };
    let rmssd = (x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();

    let axis: Vec<f64> = match opts.slope_axis {
        SlopeAxis::BeatIndex => (0..n).map(|i| i as f64).collect(),
        SlopeAxis::Time => x
            .iter()
            .scan(0.0, |t, v| {
                *t += v / 1000.0;
                Some(*t)
            })
            .collect(),
    };
    let slope = least_squares_slope(&axis, x);

    let degenerate = rmssd == 0.0;
    let ratio = if degenerate { 0.0 } else { sdnn / rmssd };
    Ok(HrvFeatures {
        mean_ibi_ms: mean,
        rmssd_ms: rmssd,
        sdnn_ms: sdnn,
        ibi_slope: slope,
        sdnn_rmssd_ratio: ratio,
        heart_rate_bpm: 60_000.0 / mean,
        ratio_degenerate: degenerate,
    })
}

fn least_squares_slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sxy += (a - mt) * (b - my);
        sxx += (a - mt) * (a - mt);
    }
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Which demographic entries to append to the base features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub enum Augmentation {
    #[default]
    None,
    G,
    A,
    GA,
}

impl Augmentation {
    pub fn extra_dims(self) -> usize {
        match self {
            Augmentation::None => 0,
            Augmentation::G | Augmentation::A => 1,
            Augmentation::GA => 2,
        }
    }

    pub fn input_dim(self) -> usize {
        BASE_FEATURES + self.extra_dims()
    }

    pub fn uses_gender(self) -> bool {
        matches!(self, Augmentation::G | Augmentation::GA)
    }

    pub fn uses_age(self) -> bool {
        matches!(self, Augmentation::A | Augmentation::GA)
    }

    /// Tag used in report tables: `F(G)` etc.
    pub fn tag(self) -> &'static str {
        match self {
            Augmentation::None => "-",
            Augmentation::G => "F(G)",
            Augmentation::A => "F(A)",
            Augmentation::GA => "F(GA)",
        }
    }
}

/// Base HRV features, optionally followed by gender (Male 0, Female 1) and
/// age in years, in that order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hrv: HrvFeatures,
    pub gender: Option<f64>,
    pub age: Option<f64>,
}

impl FeatureVector {
    pub fn base(hrv: HrvFeatures) -> Self {
        Self {
            hrv,
            gender: None,
            age: None,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.hrv.to_array().to_vec();
        v.extend(self.gender);
        v.extend(self.age);
        v
    }

    pub fn len(&self) -> usize {
        BASE_FEATURES + self.gender.is_some() as usize + self.age.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn augment_features(
    fv: &FeatureVector,
    mode: Augmentation,
    gender: Option<Gender>,
    age: Option<u32>,
) -> Result<FeatureVector> {
    let mut out = FeatureVector::base(fv.hrv);
    if mode.uses_gender() {
        let g = gender.ok_or(Error::MissingDemographic("gender"))?;
        out.gender = Some(g.code() as f64);
    }
    if mode.uses_age() {
        let a = age.ok_or(Error::MissingDemographic("age"))?;
        out.age = Some(a as f64);
    }
    if out.to_vec().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite feature value".into()));
    }
    Ok(out)
}

/// Per-dimension z-scoring fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot normalize with an empty training set".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.len(),
                });
            }
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Dimensions whose spread is negligible relative to their magnitude
    /// are passed through untouched.
    fn is_constant(&self, d: usize) -> bool {
        self.std[d] <= 1e-12 * self.mean[d].abs().max(1.0)
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(d, x)| {
                if self.is_constant(d) {
                    *x
                } else {
                    (x - self.mean[d]) / self.std[d]
                }
            })
            .collect())
    }
}

/// Normalized train and apply sets, plus the statistics they came from.
pub type NormalizedSets = (Vec<Vec<f64>>, Vec<Vec<f64>>, Standardizer);

/// Fits z-scoring on `train` only and applies it to both sets.
pub fn normalize_features(train: &[Vec<f64>], apply: &[Vec<f64>]) -> Result<NormalizedSets> {
    let stats = Standardizer::fit(train)?;
    let t = train
        .iter()
        .map(|r| stats.transform(r))
        .collect::<Result<Vec<_>>>()?;
    let a = apply
        .iter()
        .map(|r| stats.transform(r))
        .collect::<Result<Vec<_>>>()?;
    Ok((t, a, stats))
}
