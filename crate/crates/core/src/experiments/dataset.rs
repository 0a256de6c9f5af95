use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hrv::{compute_features_with, compute_ibis, HrvOptions, BASE_FEATURES};
use crate::qrs::{detect_qrs, DetectorConfig};
use crate::signal::{check_age, read_samples, EcgRecord, Gender, PainLabel, SubjectInfo};

const FEATURE_HEADER: [&str; 11] = [
    "subject_id",
    "gender",
    "age",
    "pain_label",
    "window_id",
    "f1",
    "f2",
    "f3",
    "f4",
    "f5",
    "f6",
];
const RAW_HEADER: [&str; 7] = [
    "subject_id",
    "gender",
    "age",
    "pain_label",
    "window_id",
    "sample_rate",
    "samples_path",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    BioVidCsv,
    SyntheticCohort,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Features([f64; BASE_FEATURES]),
    Ecg { sample_rate: f64, samples_path: PathBuf },
}

/// One stimulus window.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRecord {
    pub subject_id: String,
    pub gender: Gender,
    pub age: u32,
    pub pain_label: PainLabel,
    pub window_id: String,
    pub payload: Payload,
}

impl DataRecord {
    pub fn features(&self) -> Option<&[f64; BASE_FEATURES]> {
        match &self.payload {
            Payload::Features(f) => Some(f),
            Payload::Ecg { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<DataRecord>,
    pub provenance: Provenance,
}

fn row_err(path: Option<&Path>, row: usize, message: impl Into<String>) -> Error {
    Error::Row {
        path: path.map(Path::to_path_buf),
        row,
        message: message.into(),
    }
}

impl Dataset {
    /// Validates keys and per-subject demographics. `rows` gives the source
    /// line of each record for error messages (defaults to 1-based index).
    fn build(
        records: Vec<DataRecord>,
        provenance: Provenance,
        path: Option<&Path>,
        rows: Option<&[usize]>,
    ) -> Result<Self> {
        let row_of = |i: usize| rows.map_or(i + 1, |r| r[i]);
        let mut keys = HashSet::new();
        let mut demo: HashMap<&str, (Gender, u32)> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.subject_id.is_empty() {
                return Err(row_err(path, row_of(i), "empty subject_id"));
            }
            check_age(r.age).map_err(|e| row_err(path, row_of(i), e.to_string()))?;
            if !keys.insert((r.subject_id.as_str(), r.window_id.as_str())) {
                return Err(row_err(
                    path,
                    row_of(i),
                    format!("duplicate window `{}` for subject `{}`", r.window_id, r.subject_id),
                ));
            }
            let d = *demo.entry(&r.subject_id).or_insert((r.gender, r.age));
            if d != (r.gender, r.age) {
                return Err(row_err(
                    path,
                    row_of(i),
                    format!("inconsistent gender/age for subject `{}`", r.subject_id),
                ));
            }
            match &r.payload {
                Payload::Features(f) if f.iter().any(|x| !x.is_finite()) => {
                    return Err(row_err(path, row_of(i), "non-finite feature value"));
                }
                Payload::Ecg { sample_rate, .. } if !(*sample_rate > 0.0 && sample_rate.is_finite()) => {
                    return Err(row_err(path, row_of(i), format!("invalid sample_rate {sample_rate}")));
                }
                _ => {}
            }
        }
        if records.is_empty() {
            return Err(Error::Data("dataset has no records".into()));
        }
        let mixed = records
            .iter()
            .any(|r| matches!(r.payload, Payload::Features(_)) != matches!(records[0].payload, Payload::Features(_)));
        if mixed {
            return Err(Error::Data("dataset mixes feature and raw-ECG records".into()));
        }
        Ok(Self { records, provenance })
    }

    pub fn new(records: Vec<DataRecord>, provenance: Provenance) -> Result<Self> {
        Self::build(records, provenance, None, None)
    }

    pub fn records(&self) -> &[DataRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_feature_mode(&self) -> bool {
        matches!(self.records[0].payload, Payload::Features(_))
    }

    /// Subjects in order of first appearance.
    pub fn subjects(&self) -> Vec<SubjectInfo> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.subject_id.as_str()))
            .map(|r| SubjectInfo {
                id: r.subject_id.clone(),
                gender: Some(r.gender),
                age: Some(r.age),
            })
            .collect()
    }

    pub fn label_counts(&self) -> BTreeMap<String, [usize; 5]> {
        let mut counts: BTreeMap<String, [usize; 5]> = BTreeMap::new();
        for r in &self.records {
            counts.entry(r.subject_id.clone()).or_default()[r.pain_label.index()] += 1;
        }
        counts
    }

    /// Label-coverage problems that do not prevent an evaluation run:
    /// subjects missing a label or with a label distribution unlike the
    /// first subject's.
    pub fn coverage_warnings(&self) -> Vec<String> {
        let counts = self.label_counts();
        let order = self.subjects();
        let reference = counts[&order[0].id];
        let mut warnings = Vec::new();
        for s in &order {
            let c = counts[&s.id];
            if let Some(l) = PainLabel::ALL.iter().find(|l| c[l.index()] == 0) {
                warnings.push(format!("subject {} has no {l} windows", s.id));
            } else if c != reference {
                warnings.push(format!(
                    "subject {} label counts {c:?} differ from subject {} ({reference:?})",
                    s.id, order[0].id
                ));
            }
        }
        warnings
    }

    /// Loads a feature or raw-ECG CSV, chosen by the header. Raw-mode
    /// `samples_path` entries are resolved against the CSV's directory.
    pub fn load_csv(path: &Path, provenance: Provenance) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let raw = if header == FEATURE_HEADER {
            false
        } else if header == RAW_HEADER {
            true
        } else {
            return Err(row_err(
                Some(path),
                1,
                format!(
                    "unrecognised header; expected `{}` or `{}`",
                    FEATURE_HEADER.join(","),
                    RAW_HEADER.join(",")
                ),
            ));
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let mut records = Vec::new();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                row_err(Some(path), line, e.to_string())
            })?;
            let line = rec.position().map_or(records.len() + 2, |p| p.line() as usize);
            let err = |m: String| row_err(Some(path), line, m);
            let field = |i: usize| rec.get(i).unwrap_or("").trim();
            let gender: Gender = field(1).parse().map_err(|e: Error| err(e.to_string()))?;
            let age: u32 = field(2)
                .parse()
                .map_err(|_| err(format!("age `{}` is not an integer", field(2))))?;
            let pain_label: PainLabel = field(3).parse().map_err(|e: Error| err(e.to_string()))?;
            let payload = if raw {
                let sample_rate: f64 = field(5)
                    .parse()
                    .map_err(|_| err(format!("sample_rate `{}` is not a number", field(5))))?;
                let p = PathBuf::from(field(6));
                Payload::Ecg {
                    sample_rate,
                    samples_path: if p.is_absolute() { p } else { base.join(p) },
                }
            } else {
                let mut f = [0.0; BASE_FEATURES];
                for (k, v) in f.iter_mut().enumerate() {
                    *v = field(5 + k)
                        .parse()
                        .map_err(|_| err(format!("f{} `{}` is not a number", k + 1, field(5 + k))))?;
                }
                Payload::Features(f)
            };
            records.push(DataRecord {
                subject_id: field(0).to_string(),
                gender,
                age,
                pain_label,
                window_id: field(4).to_string(),
                payload,
            });
            rows.push(line);
        }
        Self::build(records, provenance, Some(path), Some(&rows))
    }

    /// Writes the dataset in the CSV layout `load_csv` reads. Raw-mode paths
    /// are written relative to the output directory when possible.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Data(format!("{other:?}")),
        })?;
        let dir = path.parent().unwrap_or(Path::new(""));
        if self.is_feature_mode() {
            wtr.write_record(FEATURE_HEADER)?;
        } else {
            wtr.write_record(RAW_HEADER)?;
        }
        for r in &self.records {
            let mut row = vec![
                r.subject_id.clone(),
                r.gender.short().to_string(),
                r.age.to_string(),
                r.pain_label.to_string(),
                r.window_id.clone(),
            ];
            match &r.payload {
                Payload::Features(f) => row.extend(f.iter().map(|v| v.to_string())),
                Payload::Ecg {
                    sample_rate,
                    samples_path,
                } => {
                    row.push(sample_rate.to_string());
                    let rel = samples_path.strip_prefix(dir).unwrap_or(samples_path);
                    row.push(rel.to_string_lossy().into_owned());
                }
            }
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }
}

/// A window dropped during feature extraction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub subject_id: String,
    pub window_id: String,
    pub reason: String,
}

fn window_features(
    r: &DataRecord,
    det: &DetectorConfig,
    hrv: HrvOptions,
) -> Result<std::result::Result<[f64; BASE_FEATURES], String>> {
    let Payload::Ecg {
        sample_rate,
        samples_path,
    } = &r.payload
    else {
        return Err(Error::Data("feature extraction needs a raw-ECG dataset".into()));
    };
    let samples = read_samples(samples_path)?;
    let record = EcgRecord::unlabeled(samples, *sample_rate)?;
    let outcome = detect_qrs(&record, det)
        .and_then(|q| compute_ibis(&q.r_indices, *sample_rate))
        .and_then(|ibis| compute_features_with(&ibis, hrv));
    Ok(match outcome {
        Ok(f) => Ok(f.to_array()),
        Err(Error::InsufficientBeats { found, .. }) => Err(format!("insufficient-beats: {found} R peaks")),
        Err(Error::FlatLine { .. }) => Err("flat-line".into()),
        Err(Error::SignalTooShort { samples, .. }) => Err(format!("signal-too-short: {samples} samples")),
        Err(e) => return Err(e),
    })
}

/// Runs detection and HRV extraction on every window of a raw-ECG dataset.
/// Windows that cannot yield features are returned as rejects; unreadable
/// sample files are hard errors.
pub fn extract_features(
    dataset: &Dataset,
    det: &DetectorConfig,
    hrv: HrvOptions,
) -> Result<(Dataset, Vec<Reject>)> {
    det.validate()?;
    let outcomes: Vec<_> = dataset
        .records
        .par_iter()
        .map(|r| window_features(r, det, hrv))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    for (r, o) in dataset.records.iter().zip(outcomes) {
        match o {
            Ok(f) => records.push(DataRecord {
                payload: Payload::Features(f),
                ..r.clone()
            }),
            Err(reason) => rejects.push(Reject {
                subject_id: r.subject_id.clone(),
                window_id: r.window_id.clone(),
                reason,
            }),
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("all {} windows were rejected", rejects.len())));
    }
    Ok((Dataset::new(records, dataset.provenance)?, rejects))
}

pub fn write_rejects(path: &Path, rejects: &[Reject]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["subject_id", "window_id", "reason"])?;
    for r in rejects {
        wtr.write_record([&r.subject_id, &r.window_id, &r.reason])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
