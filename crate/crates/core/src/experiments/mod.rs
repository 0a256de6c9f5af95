//! Dataset ingestion, demographic schemes, leave-one-subject-out
//! evaluation and report generation.

mod cohort;
mod compare;
mod config;
mod dataset;
mod loso;
mod matrix;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hrv::Augmentation;
use crate::models::TaskSet;
use crate::signal::{Gender, PainLabel};

pub use cohort::{generate_cohort, generate_synthetic_cohort, write_raw_cohort, CohortSpec};
pub use compare::{compare_methods, MethodComparison, MethodDelta, MethodScores};
pub use config::{apply_overrides, ArchitectureConfig, ExperimentConfig};
pub use dataset::{
    extract_features, write_rejects, DataRecord, Dataset, Payload, Provenance, Reject,
};
pub use loso::{fold_seed, run_loso, train_model, AgeEncoder, FoldAudit, FoldReport, FoldResult, TrainedModel};
pub use matrix::{
    load_fold_reports, render_csv, render_tables, run_matrix, write_matrix, MatrixCell,
    MatrixReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Basic,
    Gender,
    Age,
    GenderAge,
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "basic" => Ok(SchemeKind::Basic),
            "gender" => Ok(SchemeKind::Gender),
            "age" => Ok(SchemeKind::Age),
            "gender-age" | "genderage" => Ok(SchemeKind::GenderAge),
            other => Err(Error::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Basic => "basic",
            SchemeKind::Gender => "gender",
            SchemeKind::Age => "age",
            SchemeKind::GenderAge => "gender-age",
        })
    }
}

/// Closed age bins used by the age and gender-age schemes.
pub const AGE_BINS: [(u32, u32); 3] = [(20, 35), (36, 50), (51, 65)];

pub fn age_bin(age: u32) -> Result<usize> {
    AGE_BINS
        .iter()
        .position(|(lo, hi)| (*lo..=*hi).contains(&age))
        .ok_or_else(|| Error::Data(format!("age {age} outside every bin (20-65)")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub kind: SchemeKind,
    pub groups: Vec<Group>,
}

/// Partitions the dataset's subjects. Every group of the scheme is
/// returned, including empty ones.
pub fn make_scheme(dataset: &Dataset, kind: SchemeKind) -> Result<Scheme> {
    let subjects = dataset.subjects();
    let genders = [Gender::Male, Gender::Female];
    let mut groups: Vec<Group> = match kind {
        SchemeKind::Basic => vec![Group {
            name: "all".into(),
            subjects: Vec::new(),
        }],
        SchemeKind::Gender => genders
            .iter()
            .map(|g| Group {
                name: gender_name(*g).into(),
                subjects: Vec::new(),
            })
            .collect(),
        SchemeKind::Age => AGE_BINS
            .iter()
            .map(|(lo, hi)| Group {
                name: format!("{lo}-{hi}"),
                subjects: Vec::new(),
            })
            .collect(),
        SchemeKind::GenderAge => genders
            .iter()
            .flat_map(|g| {
                AGE_BINS.iter().map(move |(lo, hi)| Group {
                    name: format!("{}-{lo}-{hi}", gender_name(*g)),
                    subjects: Vec::new(),
                })
            })
            .collect(),
    };
    for s in subjects {
        let gender = s.gender.ok_or(Error::MissingDemographic("gender"))?;
        let age = s.age.ok_or(Error::MissingDemographic("age"))?;
        let bin = age_bin(age)?;
        let g = match kind {
            SchemeKind::Basic => 0,
            SchemeKind::Gender => gender.code(),
            SchemeKind::Age => bin,
            SchemeKind::GenderAge => gender.code() * AGE_BINS.len() + bin,
        };
        groups[g].subjects.push(s.id);
    }
    Ok(Scheme { kind, groups })
}

fn gender_name(g: Gender) -> &'static str {
    match g {
        Gender::Male => "male",
        Gender::Female => "female",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    NpVsP1,
    NpVsP2,
    NpVsP3,
    NpVsP4,
    MultiClass,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::NpVsP1,
        TaskKind::NpVsP2,
        TaskKind::NpVsP3,
        TaskKind::NpVsP4,
        TaskKind::MultiClass,
    ];

    pub fn n_classes(self) -> usize {
        match self {
            TaskKind::MultiClass => 5,
            _ => 2,
        }
    }

    /// Class index of a window with this label, or `None` if the task
    /// drops it.
    pub fn class_of(self, label: PainLabel) -> Option<usize> {
        let pain = match self {
            TaskKind::NpVsP1 => PainLabel::P1,
            TaskKind::NpVsP2 => PainLabel::P2,
            TaskKind::NpVsP3 => PainLabel::P3,
            TaskKind::NpVsP4 => PainLabel::P4,
            TaskKind::MultiClass => return Some(label.index()),
        };
        if label == PainLabel::NP {
            Some(0)
        } else if label == pain {
            Some(1)
        } else {
            None
        }
    }

    /// Column header: `NP vs P1` ... `MC`.
    pub fn title(self) -> &'static str {
        match self {
            TaskKind::NpVsP1 => "NP vs P1",
            TaskKind::NpVsP2 => "NP vs P2",
            TaskKind::NpVsP3 => "NP vs P3",
            TaskKind::NpVsP4 => "NP vs P4",
            TaskKind::MultiClass => "MC",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            TaskKind::NpVsP1 => "np-vs-p1",
            TaskKind::NpVsP2 => "np-vs-p2",
            TaskKind::NpVsP3 => "np-vs-p3",
            TaskKind::NpVsP4 => "np-vs-p4",
            TaskKind::MultiClass => "multi-class",
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "npvsp1" | "npp1" => Ok(TaskKind::NpVsP1),
            "npvsp2" | "npp2" => Ok(TaskKind::NpVsP2),
            "npvsp3" | "npp3" => Ok(TaskKind::NpVsP3),
            "npvsp4" | "npp4" => Ok(TaskKind::NpVsP4),
            "mc" | "multiclass" => Ok(TaskKind::MultiClass),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// Classifier evaluated in a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Predicts the most frequent training class.
    Majority,
    /// Single-task network, optionally with demographics appended to the input.
    StNn(Augmentation),
    /// Multi-task network with auxiliary heads; input is the base features.
    MtNn(TaskSet),
}

impl Method {
    pub fn augmentation(self) -> Augmentation {
        match self {
            Method::StNn(a) => a,
            _ => Augmentation::None,
        }
    }

    pub fn tasks(self) -> TaskSet {
        match self {
            Method::MtNn(t) => t,
            _ => TaskSet::PAIN_ONLY,
        }
    }

    pub fn tag(self) -> String {
        match self {
            Method::Majority => "Majority".into(),
            Method::StNn(Augmentation::None) => "ST-NN".into(),
            Method::StNn(a) => format!("ST-NN+{}", a.tag()),
            Method::MtNn(t) if t.is_single_task() => "ST-NN".into(),
            Method::MtNn(t) => format!("MT-NN+{}", t.tag()),
        }
    }

    /// File-name form of the tag.
    pub fn slug(self) -> String {
        self.tag()
            .to_ascii_lowercase()
            .replace('+', "_")
            .replace(['(', ')'], "")
    }

    pub fn network_methods() -> Vec<Method> {
        let all = TaskSet {
            age: true,
            gender: true,
        };
        vec![
            Method::StNn(Augmentation::None),
            Method::StNn(Augmentation::G),
            Method::StNn(Augmentation::A),
            Method::StNn(Augmentation::GA),
            Method::MtNn(TaskSet {
                age: false,
                gender: true,
            }),
            Method::MtNn(TaskSet {
                age: true,
                gender: false,
            }),
            Method::MtNn(all),
        ]
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        let t = |age, gender| TaskSet { age, gender };
        match norm.as_str() {
            "majority" => Ok(Method::Majority),
            "stnn" => Ok(Method::StNn(Augmentation::None)),
            "stnnfg" => Ok(Method::StNn(Augmentation::G)),
            "stnnfa" => Ok(Method::StNn(Augmentation::A)),
            "stnnfga" => Ok(Method::StNn(Augmentation::GA)),
            "mtnntg" => Ok(Method::MtNn(t(false, true))),
            "mtnnta" => Ok(Method::MtNn(t(true, false))),
            "mtnntga" => Ok(Method::MtNn(t(true, true))),
            _ => Err(Error::Config(format!("unknown method `{s}`"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.tag()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_tags_round_trip() {
        for m in Method::network_methods().into_iter().chain([Method::Majority]) {
            assert_eq!(m.tag().parse::<Method>().unwrap(), m);
        }
        assert_eq!("mt-nn+t(ga)".parse::<Method>().unwrap().tag(), "MT-NN+T(GA)");
        assert_eq!(Method::StNn(Augmentation::GA).slug(), "st-nn_fga");
        assert!("cnn".parse::<Method>().is_err());
    }

    #[test]
    fn task_label_filters() {
        assert_eq!(TaskKind::NpVsP2.class_of(PainLabel::NP), Some(0));
        assert_eq!(TaskKind::NpVsP2.class_of(PainLabel::P2), Some(1));
        assert_eq!(TaskKind::NpVsP2.class_of(PainLabel::P3), None);
        assert_eq!(TaskKind::MultiClass.class_of(PainLabel::P4), Some(4));
        assert_eq!("NP vs P4".parse::<TaskKind>().unwrap(), TaskKind::NpVsP4);
        assert_eq!("mc".parse::<TaskKind>().unwrap(), TaskKind::MultiClass);
    }

    #[test]
    fn age_bins_are_closed() {
        assert_eq!(age_bin(20).unwrap(), 0);
        assert_eq!(age_bin(35).unwrap(), 0);
        assert_eq!(age_bin(36).unwrap(), 1);
        assert_eq!(age_bin(50).unwrap(), 1);
        assert_eq!(age_bin(51).unwrap(), 2);
        assert_eq!(age_bin(65).unwrap(), 2);
        assert!(age_bin(66).is_err());
        assert!(age_bin(19).is_err());
    }
}
