//! Core signal types, the synthetic ECG generator, and the filter cascade
//! the QRS detector is built from.

mod filters;
mod io;
mod synth;

pub use filters::{
    bandpass_filter, derivative_filter, moving_window_integrate, square_signal, Biquad, BandPass,
    DERIVATIVE_DELAY,
};
pub use io::{read_samples, write_samples};
pub use synth::{generate_synthetic_ecg, noise_std_for_snr, SyntheticEcgSpec, WaveShape, MIN_RR_MS};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling rate of the BioVid ECG channel.
pub const BIOVID_SAMPLE_RATE: f64 = 512.0;

pub const MIN_AGE: u32 = 20;
pub const MAX_AGE: u32 = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Male = 0, Female = 1. Also the class index of the gender head.
    pub fn code(self) -> usize {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" | "male" | "Male" => Ok(Gender::Male),
            "F" | "f" | "female" | "Female" => Ok(Gender::Female),
            other => Err(Error::InvalidArgument(format!("unknown gender `{other}`"))),
        }
    }
}

/// Stimulus intensity: no pain plus four heat-pain levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PainLabel {
    NP,
    P1,
    P2,
    P3,
    P4,
}

impl PainLabel {
    pub const ALL: [PainLabel; 5] = [
        PainLabel::NP,
        PainLabel::P1,
        PainLabel::P2,
        PainLabel::P3,
        PainLabel::P4,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PainLabel::NP => "NP",
            PainLabel::P1 => "P1",
            PainLabel::P2 => "P2",
            PainLabel::P3 => "P3",
            PainLabel::P4 => "P4",
        }
    }
}

impl fmt::Display for PainLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PainLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "NP" => Ok(PainLabel::NP),
            "P1" => Ok(PainLabel::P1),
            "P2" => Ok(PainLabel::P2),
            "P3" => Ok(PainLabel::P3),
            "P4" => Ok(PainLabel::P4),
            other => Err(Error::InvalidArgument(format!("unknown pain label `{other}`"))),
        }
    }
}

/// Subject metadata. Demographics are optional because exports may omit them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectInfo {
    pub id: String,
    pub gender: Option<Gender>,
    pub age: Option<u32>,
}

impl SubjectInfo {
    pub fn new(id: impl Into<String>, gender: Option<Gender>, age: Option<u32>) -> Result<Self> {
        if let Some(age) = age {
            check_age(age)?;
        }
        Ok(Self {
            id: id.into(),
            gender,
            age,
        })
    }

    pub fn anonymous() -> Self {
        Self {
            id: "synthetic".to_string(),
            gender: None,
            age: None,
        }
    }
}

pub(crate) fn check_age(age: u32) -> Result<()> {
    if (MIN_AGE..=MAX_AGE).contains(&age) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "age {age} outside [{MIN_AGE}, {MAX_AGE}]"
        )))
    }
}

/// One stimulus window of single-lead ECG.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    samples: Vec<f64>,
    sample_rate: f64,
    pub subject: SubjectInfo,
    pub pain_label: PainLabel,
}

impl EcgRecord {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: f64,
        subject: SubjectInfo,
        pain_label: PainLabel,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("ECG record has no samples".into()));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
            subject,
            pain_label,
        })
    }

    /// A record with anonymous subject metadata and the NP label.
    pub fn unlabeled(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        Self::new(samples, sample_rate, SubjectInfo::anonymous(), PainLabel::NP)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * factor).collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn ms_to_samples(ms: f64, sample_rate: f64) -> usize {
    (ms * sample_rate / 1000.0).round().max(1.0) as usize
}
