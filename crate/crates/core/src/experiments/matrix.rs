use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::loso::{run_loso, FoldReport};
use super::{make_scheme, ExperimentConfig, Method, SchemeKind, TaskKind};
use crate::error::{Error, Result};
use crate::models::config_hash;

/// One (scheme, group, task, method) cell; failed cells keep the error
/// message instead of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub scheme: SchemeKind,
    pub group: String,
    pub n_subjects: usize,
    pub task: TaskKind,
    pub method: Method,
    pub report: Option<FoldReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub run_id: String,
    pub config_hash: String,
    pub cells: Vec<MatrixCell>,
}

/// Runs every requested scheme x group x method x task cell. A failing cell
/// is recorded and the run continues.
pub fn run_matrix(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<MatrixReport> {
    cfg.validate()?;
    if !dataset.is_feature_mode() {
        return Err(Error::Data("run-matrix needs a feature-mode dataset; run extract-features first".into()));
    }
    let hash = config_hash(cfg)?;
    let mut cells = Vec::new();
    for &scheme in &cfg.schemes {
        for group in make_scheme(dataset, scheme)?.groups {
            for &method in &cfg.methods {
                for &task in &cfg.tasks {
                    let (report, error) = match run_loso(dataset, &group, task, method, cfg) {
                        Ok(r) => (Some(r), None),
                        // leakage means the harness itself is broken; stop
                        Err(e @ Error::Leakage(_)) => return Err(e),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    cells.push(MatrixCell {
                        scheme,
                        group: group.name.clone(),
                        n_subjects: group.subjects.len(),
                        task,
                        method,
                        report,
                        error,
                    });
                }
            }
        }
    }
    Ok(MatrixReport {
        run_id: format!("run-{}", &hash[..12]),
        config_hash: hash,
        cells,
    })
}

fn cell_text(c: &MatrixCell) -> String {
    match (&c.report, &c.error) {
        (Some(r), _) if r.n_windows > 0 => format!("{:.2}", r.accuracy),
        (Some(_), _) => "skip".into(),
        _ => "err".into(),
    }
}

/// Aligned text tables: one per (scheme, group), methods as rows and tasks
/// as columns.
pub fn render_tables(cells: &[MatrixCell]) -> String {
    let mut blocks: BTreeMap<(SchemeKind, String), Vec<&MatrixCell>> = BTreeMap::new();
    let mut order = Vec::new();
    for c in cells {
        let key = (c.scheme, c.group.clone());
        if !blocks.contains_key(&key) {
            order.push(key.clone());
        }
        blocks.entry(key).or_default().push(c);
    }
    let mut out = String::new();
    for key in order {
        let block = &blocks[&key];
        let mut tasks: Vec<TaskKind> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        for c in block {
            if !tasks.contains(&c.task) {
                tasks.push(c.task);
            }
            if !methods.contains(&c.method) {
                methods.push(c.method);
            }
        }
        let mut header = vec!["Method".to_string()];
        header.extend(tasks.iter().map(|t| t.title().to_string()));
        let mut rows = vec![header];
        for m in &methods {
            let mut row = vec![m.tag()];
            for t in &tasks {
                let text = block
                    .iter()
                    .find(|c| c.method == *m && c.task == *t)
                    .map_or("-".to_string(), |c| cell_text(c));
                row.push(text);
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let n = block[0].n_subjects;
        let _ = writeln!(out, "Scheme: {} | Group: {} ({n} subjects)", key.0, key.1);
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    if j == 0 {
                        format!("{s:<w$}", w = widths[j])
                    } else {
                        format!("{s:>w$}", w = widths[j])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_csv(cells: &[MatrixCell]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "scheme",
        "group",
        "method",
        "task",
        "accuracy",
        "n_windows",
        "n_correct",
        "folds",
        "skipped_folds",
        "seed",
        "config_hash",
        "error",
    ])?;
    for c in cells {
        let (acc, nw, nc, nf, sk, seed, hash) = match &c.report {
            Some(r) => (
                format!("{:.4}", r.accuracy),
                r.n_windows.to_string(),
                r.n_correct.to_string(),
                r.folds.len().to_string(),
                r.skipped_folds.to_string(),
                r.seed.to_string(),
                r.config_hash.clone(),
            ),
            None => Default::default(),
        };
        wtr.write_record([
            c.scheme.to_string(),
            c.group.clone(),
            c.method.tag(),
            c.task.slug().to_string(),
            acc,
            nw,
            nc,
            nf,
            sk,
            seed,
            hash,
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Writes `matrix.csv`, `matrix.txt` and one JSON per cell under
/// `root/<run-id>/`. Returns the run directory.
pub fn write_matrix(report: &MatrixReport, root: &Path) -> Result<PathBuf> {
    let dir = root.join(&report.run_id);
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(&dir)?;
    let write = |p: PathBuf, text: &str| fs::write(&p, text).map_err(|e| Error::io(&p, e));
    write(dir.join("matrix.csv"), &render_csv(&report.cells)?)?;
    write(dir.join("matrix.txt"), &render_tables(&report.cells))?;
    for c in &report.cells {
        let cell_dir = dir.join("folds").join(&c.group).join(c.task.slug());
        mkdir(&cell_dir)?;
        let json = serde_json::to_string_pretty(c)?;
        write(cell_dir.join(format!("{}.json", c.method.slug())), &json)?;
    }
    Ok(dir)
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_json(&p, out)?;
        } else if p.extension().is_some_and(|e| e == "json") {
            out.push(p);
        }
    }
    Ok(())
}

/// Reads back the per-cell JSON files of a run directory, ordered as in
/// the original run where possible (scheme, group, method, task).
pub fn load_fold_reports(run_dir: &Path) -> Result<Vec<MatrixCell>> {
    let folds = run_dir.join("folds");
    let mut paths = Vec::new();
    collect_json(&folds, &mut paths)?;
    let mut cells = paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str::<MatrixCell>(&text)?)
        })
        .collect::<Result<Vec<_>>>()?;
    if cells.is_empty() {
        return Err(Error::Data(format!("no cell reports under {}", folds.display())));
    }
    cells.sort_by(|a, b| {
        (a.scheme, &a.group, a.method, a.task).cmp(&(b.scheme, &b.group, b.method, b.task))
    });
    Ok(cells)
}
