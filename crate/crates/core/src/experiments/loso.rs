use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{DataRecord, Dataset};
use super::{ExperimentConfig, Group, Method, TaskKind};
use crate::error::{Error, Result};
use crate::hrv::{augment_features, FeatureVector, HrvFeatures, Standardizer};
use crate::models::{config_hash, Batch, PainNet, Trainer};
use crate::signal::{MAX_AGE, MIN_AGE};

/// Per-fold seed: the run seed XOR a mixed hash of the fold index.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    let mut z = (fold as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    seed ^ (z ^ (z >> 31))
}

/// Maps ages to age-head classes. Each distinct training age gets its own
/// class; if there are more distinct ages than classes, ages fall into
/// equal-width bins over the valid range instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeEncoder {
    ages: Vec<u32>,
    width: usize,
    binned: bool,
}

impl AgeEncoder {
    pub fn fit(train_ages: impl IntoIterator<Item = u32>, width: usize) -> Self {
        let ages: Vec<u32> = train_ages.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let binned = ages.len() > width;
        Self { ages, width, binned }
    }

    pub fn is_binned(&self) -> bool {
        self.binned
    }

    pub fn class_of(&self, age: u32) -> Result<usize> {
        if self.binned {
            let span = (MAX_AGE - MIN_AGE + 1) as f64;
            let rel = (age.clamp(MIN_AGE, MAX_AGE) - MIN_AGE) as f64 / span;
            return Ok(((rel * self.width as f64) as usize).min(self.width - 1));
        }
        self.ages
            .binary_search(&age)
            .map_err(|_| Error::Data(format!("age {age} not seen in the training fold")))
    }
}

/// Which subjects actually fed each training-side computation of a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub test_subject: String,
    pub normalization_subjects: Vec<String>,
    pub training_subjects: Vec<String>,
    pub normalization_rows: usize,
    pub training_rows: usize,
    pub test_rows: usize,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub test_subject: String,
    pub seed: u64,
    pub n_test: usize,
    pub n_correct: usize,
    /// Percent; absent for skipped folds.
    pub accuracy: Option<f64>,
    pub skipped: Option<String>,
    pub final_train_loss: Option<f64>,
    /// SHA-256 over the evaluated parameters and normalization statistics.
    pub model_digest: Option<String>,
    pub audit: FoldAudit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub group: String,
    pub task: TaskKind,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    /// Hash of each part of the cell config, so runs can be compared
    /// component by component.
    pub component_hashes: BTreeMap<String, String>,
    pub cell_config: serde_json::Value,
    pub folds: Vec<FoldResult>,
    pub n_windows: usize,
    pub n_correct: usize,
    /// Pooled accuracy over all held-out windows of non-skipped folds, in percent.
    pub accuracy: f64,
    pub skipped_folds: usize,
}

#[derive(Serialize)]
struct CellConfig<'a> {
    method: String,
    augmentation: crate::hrv::Augmentation,
    task: TaskKind,
    seed: u64,
    network: crate::models::NetworkConfig,
    train: &'a crate::models::TrainConfig,
    features: (&'a crate::qrs::DetectorConfig, &'a crate::hrv::HrvOptions),
}

fn cell_config(cfg: &ExperimentConfig, method: Method, task: TaskKind) -> Result<(serde_json::Value, String, BTreeMap<String, String>)> {
    let cell = CellConfig {
        method: method.tag(),
        augmentation: method.augmentation(),
        task,
        seed: cfg.seed,
        network: cfg.network_config(method, task),
        train: &cfg.train,
        features: (&cfg.detector, &cfg.hrv),
    };
    let value = serde_json::to_value(&cell)?;
    let mut components = BTreeMap::new();
    if let serde_json::Value::Object(map) = &value {
        for (k, v) in map {
            components.insert(k.clone(), config_hash(v)?);
        }
    }
    Ok((value.clone(), config_hash(&value)?, components))
}

struct Row<'a> {
    record: &'a DataRecord,
    class: usize,
}

fn digest(net: &PainNet, norm: &Standardizer) -> String {
    let mut h = Sha256::new();
    for t in net.tensors() {
        for v in t {
            h.update(v.to_le_bytes());
        }
    }
    for v in norm.mean.iter().chain(&norm.std) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn feature_row(r: &DataRecord, method: Method) -> Result<Vec<f64>> {
    let f = r
        .features()
        .ok_or_else(|| Error::Data("evaluation needs a feature-mode dataset".into()))?;
    let fv = FeatureVector::base(HrvFeatures::from_array(*f));
    Ok(augment_features(&fv, method.augmentation(), Some(r.gender), Some(r.age))?.to_vec())
}

fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

fn subjects_of(rows: &[&Row]) -> Vec<String> {
    rows.iter()
        .map(|r| r.record.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// A network trained on the rows of one task, together with the statistics
/// needed to feed it new windows.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub task: TaskKind,
    pub trainer: Trainer,
    pub normalizer: Standardizer,
    pub ages: AgeEncoder,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

impl TrainedModel {
    /// Network used for prediction (EMA weights when enabled) and its
    /// predicted classes for `records`.
    pub fn predict_records(&self, records: &[&DataRecord]) -> Result<(PainNet, Vec<usize>)> {
        let raw = records.iter().map(|r| feature_row(r, self.method)).collect::<Result<Vec<_>>>()?;
        let x = to_matrix(&raw.iter().map(|r| self.normalizer.transform(r)).collect::<Result<Vec<_>>>()?);
        let eval = self.trainer.eval_network()?;
        let preds = eval.predict(x.view())?;
        Ok((eval, preds))
    }
}

fn fit(train: &[&Row], method: Method, task: TaskKind, cfg: &ExperimentConfig, seed: u64) -> Result<TrainedModel> {
    let raw_train = train.iter().map(|r| feature_row(r.record, method)).collect::<Result<Vec<_>>>()?;
    let normalizer = Standardizer::fit(&raw_train)?;
    let x_train = to_matrix(&raw_train.iter().map(|r| normalizer.transform(r)).collect::<Result<Vec<_>>>()?);

    let net_cfg = cfg.network_config(method, task);
    let tasks = net_cfg.tasks;
    let ages = AgeEncoder::fit(train.iter().map(|r| r.record.age), net_cfg.age_classes);
    let train_y: Vec<usize> = train.iter().map(|r| r.class).collect();
    let age_y = train.iter().map(|r| ages.class_of(r.record.age)).collect::<Result<Vec<_>>>()?;
    let gender_y: Vec<usize> = train.iter().map(|r| r.record.gender.code()).collect();
    let data = Batch {
        inputs: x_train.view(),
        pain: &train_y,
        age: tasks.age.then_some(age_y.as_slice()),
        gender: tasks.gender.then_some(gender_y.as_slice()),
    };
    let mut trainer = Trainer::new(PainNet::new(net_cfg, seed)?, cfg.train.clone(), seed)?;
    let history = trainer.fit(&data)?;
    Ok(TrainedModel {
        method,
        task,
        trainer,
        normalizer,
        ages,
        history,
    })
}

/// Trains one network on every window of `dataset` that belongs to `task`,
/// with the run seed. Used for standalone training outside LOSO.
pub fn train_model(dataset: &Dataset, task: TaskKind, method: Method, cfg: &ExperimentConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if method == Method::Majority {
        return Err(Error::Config("the majority baseline has no network to train".into()));
    }
    let rows: Vec<Row> = dataset
        .records()
        .iter()
        .filter_map(|r| task.class_of(r.pain_label).map(|class| Row { record: r, class }))
        .collect();
    let refs: Vec<&Row> = rows.iter().collect();
    if refs.iter().map(|r| r.class).collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::Data(format!("task {} needs windows of at least two classes", task.title())));
    }
    fit(&refs, method, task, cfg, cfg.seed)
}

fn run_fold(
    fold: usize,
    test_subject: &str,
    rows: &[Row],
    method: Method,
    task: TaskKind,
    cfg: &ExperimentConfig,
) -> Result<FoldResult> {
    let seed = fold_seed(cfg.seed, fold);
    let train: Vec<&Row> = rows.iter().filter(|r| r.record.subject_id != test_subject).collect();
    let test: Vec<&Row> = rows.iter().filter(|r| r.record.subject_id == test_subject).collect();

    // the audit is derived from the rows handed to each stage
    let normalization_subjects = subjects_of(&train);
    let training_subjects = subjects_of(&train);
    let violations = normalization_subjects
        .iter()
        .chain(&training_subjects)
        .filter(|s| s.as_str() == test_subject)
        .count()
        + test.iter().filter(|r| r.record.subject_id != test_subject).count();
    let audit = FoldAudit {
        test_subject: test_subject.to_string(),
        normalization_subjects,
        training_subjects,
        normalization_rows: train.len(),
        training_rows: train.len(),
        test_rows: test.len(),
        violations,
    };
    if violations > 0 {
        return Err(Error::Leakage(format!(
            "fold {fold}: held-out subject {test_subject} reached training ({violations} violations)"
        )));
    }

    let mut result = FoldResult {
        fold,
        test_subject: test_subject.to_string(),
        seed,
        n_test: test.len(),
        n_correct: 0,
        accuracy: None,
        skipped: None,
        final_train_loss: None,
        model_digest: None,
        audit,
    };
    let train_classes: BTreeSet<usize> = train.iter().map(|r| r.class).collect();
    if test.is_empty() {
        result.skipped = Some("held-out subject has no windows for this task".into());
        return Ok(result);
    }
    if train_classes.len() < 2 {
        result.skipped = Some(format!(
            "degenerate fold: training labels cover {} class(es)",
            train_classes.len()
        ));
        return Ok(result);
    }

    let train_y: Vec<usize> = train.iter().map(|r| r.class).collect();
    let test_y: Vec<usize> = test.iter().map(|r| r.class).collect();
    let predictions = match method {
        Method::Majority => {
            let mut counts = vec![0usize; task.n_classes()];
            train_y.iter().for_each(|c| counts[*c] += 1);
            let best = (0..counts.len()).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
            vec![best; test.len()]
        }
        _ => {
            let model = fit(&train, method, task, cfg, seed)?;
            result.final_train_loss = model.history.last().copied();
            let test_records: Vec<&DataRecord> = test.iter().map(|r| r.record).collect();
            let (eval, preds) = model.predict_records(&test_records)?;
            result.model_digest = Some(digest(&eval, &model.normalizer));
            preds
        }
    };
    result.n_correct = predictions.iter().zip(&test_y).filter(|(p, y)| p == y).count();
    result.accuracy = Some(100.0 * result.n_correct as f64 / test.len() as f64);
    Ok(result)
}

/// Leave-one-subject-out evaluation of one (group, task, method) cell.
/// Folds run on `cfg.workers` threads; results do not depend on the
/// worker count.
pub fn run_loso(
    dataset: &Dataset,
    group: &Group,
    task: TaskKind,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<FoldReport> {
    if group.subjects.len() < 2 {
        return Err(Error::Data(format!(
            "group {} has {} subject(s); LOSO needs at least 2",
            group.name,
            group.subjects.len()
        )));
    }
    let members: BTreeSet<&str> = group.subjects.iter().map(String::as_str).collect();
    let rows: Vec<Row> = dataset
        .records()
        .iter()
        .filter(|r| members.contains(r.subject_id.as_str()))
        .filter_map(|r| task.class_of(r.pain_label).map(|class| Row { record: r, class }))
        .collect();
    let (cell_config, hash, components) = cell_config(cfg, method, task)?;

    let job = |(fold, s): (usize, &String)| run_fold(fold, s, &rows, method, task, cfg);
    let folds: Vec<FoldResult> = if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| group.subjects.par_iter().enumerate().map(job).collect::<Result<_>>())?
    } else {
        group.subjects.iter().enumerate().map(job).collect::<Result<_>>()?
    };

    let scored: Vec<&FoldResult> = folds.iter().filter(|f| f.skipped.is_none()).collect();
    let n_windows: usize = scored.iter().map(|f| f.n_test).sum();
    let n_correct: usize = scored.iter().map(|f| f.n_correct).sum();
    Ok(FoldReport {
        group: group.name.clone(),
        task,
        method,
        seed: cfg.seed,
        config_hash: hash,
        component_hashes: components,
        cell_config,
        accuracy: if n_windows == 0 {
            0.0
        } else {
            100.0 * n_correct as f64 / n_windows as f64
        },
        skipped_folds: folds.len() - scored.len(),
        n_windows,
        n_correct,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_seeds_differ_and_are_stable() {
        let a: Vec<u64> = (0..10).map(|f| fold_seed(7, f)).collect();
        assert_eq!(a, (0..10).map(|f| fold_seed(7, f)).collect::<Vec<_>>());
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn age_encoder() {
        let e = AgeEncoder::fit([30, 22, 30, 64], 36);
        assert!(!e.is_binned());
        assert_eq!(e.class_of(22).unwrap(), 0);
        assert_eq!(e.class_of(64).unwrap(), 2);
        assert!(e.class_of(40).is_err());
        let b = AgeEncoder::fit(20..=65, 36);
        assert!(b.is_binned());
        assert_eq!(b.class_of(20).unwrap(), 0);
        assert_eq!(b.class_of(65).unwrap(), 35);
    }
}
