use serde::Serialize;

use super::TaskKind;
use crate::error::{Error, Result};

/// Accuracy per task for one method, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScores {
    pub method: String,
    pub scores: Vec<(TaskKind, f64)>,
}

impl MethodScores {
    pub fn new(method: impl Into<String>, tasks: &[TaskKind], accuracies: &[f64]) -> Result<Self> {
        if tasks.len() != accuracies.len() {
            return Err(Error::DimensionMismatch {
                expected: tasks.len(),
                actual: accuracies.len(),
            });
        }
        Ok(Self {
            method: method.into(),
            scores: tasks.iter().copied().zip(accuracies.iter().copied()).collect(),
        })
    }

    pub fn mean(&self) -> f64 {
        self.scores.iter().map(|(_, a)| a).sum::<f64>() / self.scores.len() as f64
    }

    fn tasks(&self) -> Vec<TaskKind> {
        let mut t: Vec<TaskKind> = self.scores.iter().map(|(t, _)| *t).collect();
        t.sort();
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodDelta {
    pub from: String,
    pub to: String,
    /// `mean(to) - mean(from)`, percentage points.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodComparison {
    pub means: Vec<(String, f64)>,
    /// Every ordered pair `(i, j)` with `i < j`.
    pub deltas: Vec<MethodDelta>,
}

impl MethodComparison {
    pub fn delta(&self, from: &str, to: &str) -> Option<f64> {
        self.deltas.iter().find_map(|d| {
            if d.from == from && d.to == to {
                Some(d.delta)
            } else if d.from == to && d.to == from {
                Some(-d.delta)
            } else {
                None
            }
        })
    }

    pub fn mean_of(&self, method: &str) -> Option<f64> {
        self.means.iter().find(|(m, _)| m == method).map(|(_, v)| *v)
    }
}

/// Mean accuracy over tasks for each method and the pairwise differences.
pub fn compare_methods(reports: &[MethodScores]) -> Result<MethodComparison> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to compare".into()))?;
    let tasks = first.tasks();
    if tasks.is_empty() || tasks.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!(
            "{}: tasks must be nonempty and distinct",
            first.method
        )));
    }
    for r in reports {
        if r.tasks() != tasks {
            return Err(Error::InvalidArgument(format!(
                "{} covers {:?}, expected {:?}",
                r.method,
                r.tasks(),
                tasks
            )));
        }
    }
    let means: Vec<(String, f64)> = reports.iter().map(|r| (r.method.clone(), r.mean())).collect();
    let mut deltas = Vec::new();
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            deltas.push(MethodDelta {
                from: means[i].0.clone(),
                to: means[j].0.clone(),
                delta: means[j].1 - means[i].1,
            });
        }
    }
    Ok(MethodComparison { means, deltas })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_single_task() {
        let t = TaskKind::ALL;
        let a = MethodScores::new("a", &t, &[60.0, 61.0, 62.0, 63.0, 30.0]).unwrap();
        let cmp = compare_methods(&[a.clone(), MethodScores { method: "b".into(), ..a.clone() }]).unwrap();
        assert_eq!(cmp.delta("a", "b"), Some(0.0));

        let x = MethodScores::new("x", &t[..1], &[55.5]).unwrap();
        let y = MethodScores::new("y", &t[..1], &[58.25]).unwrap();
        let cmp = compare_methods(&[x, y]).unwrap();
        assert_eq!(cmp.delta("x", "y"), Some(2.75));
        assert_eq!(cmp.delta("y", "x"), Some(-2.75));
    }

    #[test]
    fn mismatched_tasks_rejected() {
        let a = MethodScores::new("a", &TaskKind::ALL[..2], &[1.0, 2.0]).unwrap();
        let b = MethodScores::new("b", &TaskKind::ALL[1..3], &[1.0, 2.0]).unwrap();
        assert!(compare_methods(&[a, b]).is_err());
        assert!(compare_methods(&[]).is_err());
    }
}
