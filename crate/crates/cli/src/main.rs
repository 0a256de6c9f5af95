use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ecgpain::experiments::{
    compare_methods, extract_features, generate_cohort, load_fold_reports, render_tables,
    run_matrix, train_model, write_matrix, write_raw_cohort, write_rejects, CohortSpec, Dataset,
    ExperimentConfig, Method, MethodScores, Provenance, TaskKind,
};
use ecgpain::hrv::compute_ibis;
use ecgpain::models::{gradcheck_suite, save_checkpoint, GradCheckOptions};
use ecgpain::qrs::detect_qrs_with_stages;
use ecgpain::signal::{read_samples, EcgRecord, BIOVID_SAMPLE_RATE};
use ecgpain::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "ecgpain", version, about = "ECG-based pain estimation pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the number of worker threads for LOSO folds.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override as dotted.key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run QRS detection and HRV extraction over a raw-ECG dataset.
    ExtractFeatures {
        /// Raw-mode dataset CSV.
        #[arg(long)]
        input: PathBuf,
        /// Feature CSV to write; defaults to <out>/features.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic cohort with an injected pain effect.
    SynthCohort {
        #[arg(long, default_value_t = 12)]
        subjects: usize,
        #[arg(long, default_value_t = 20)]
        windows_per_label: usize,
        /// Write ECG sample files and a raw-mode dataset instead of features.
        #[arg(long)]
        raw: bool,
    },
    /// Train one network on a whole feature dataset and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "np-vs-p4")]
        task: TaskKind,
        #[arg(long, default_value = "ST-NN")]
        method: Method,
        /// Checkpoint path; defaults to <out>/checkpoint.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the configured scheme x task x method matrix with LOSO.
    RunMatrix {
        #[arg(long)]
        data: PathBuf,
    },
    /// Render tables and method comparisons from a finished run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Finite-difference gradient check of the network graphs.
    Gradcheck {
        #[arg(long, default_value_t = 120)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Test hook: scale every analytic gradient by this factor.
        #[arg(long)]
        corrupt: Option<f64>,
    },
    /// Detect R peaks in a single-channel samples file.
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = BIOVID_SAMPLE_RATE)]
        sample_rate: f64,
        /// Write raw and intermediate stage signals to this CSV.
        #[arg(long)]
        stages: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Other(String),
    /// Already reported to the user; carries the exit code.
    Reported(u8),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
        ErrorKind::Io => 1,
    }
}

fn resolve_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(workers) = common.workers {
        overrides.push(format!("workers={workers}"));
    }
    Ok(ExperimentConfig::load(common.config.as_deref(), &overrides)?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

/// Writes the fully resolved config next to the outputs.
fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    write_file(&dir.join("config.toml"), &cfg.to_toml()?)
}

fn out_dir(common: &Common) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn extract(common: &Common, cfg: &ExperimentConfig, input: &Path, output: Option<PathBuf>) -> CliResult<()> {
    let out = out_dir(common);
    echo_config(cfg, &out)?;
    let output = output.unwrap_or_else(|| out.join("features.csv"));
    let raw = Dataset::load_csv(input, Provenance::BioVidCsv)?;
    let (features, rejects) = extract_features(&raw, &cfg.detector, cfg.hrv)?;
    features.write_csv(&output)?;
    let rejects_path = output.with_extension("rejects.csv");
    write_rejects(&rejects_path, &rejects)?;
    println!(
        "{} windows -> {} feature rows, {} rejected",
        raw.len(),
        features.len(),
        rejects.len()
    );
    println!("features: {}", output.display());
    println!("rejects: {}", rejects_path.display());
    Ok(())
}

fn synth(common: &Common, cfg: &ExperimentConfig, subjects: usize, windows: usize, raw: bool) -> CliResult<()> {
    let out = out_dir(common);
    echo_config(cfg, &out)?;
    let mut spec = CohortSpec::new(subjects, cfg.seed);
    spec.windows_per_label = windows;
    let path = if raw {
        write_raw_cohort(&spec, &out)?
    } else {
        let ds = generate_cohort(&spec)?;
        let p = out.join("dataset.csv");
        ds.write_csv(&p)?;
        p
    };
    println!("{subjects} subjects, {} windows each: {}", 5 * windows, path.display());
    Ok(())
}

fn train(
    common: &Common,
    cfg: &ExperimentConfig,
    data: &Path,
    task: TaskKind,
    method: Method,
    checkpoint: Option<PathBuf>,
) -> CliResult<()> {
    let out = out_dir(common);
    echo_config(cfg, &out)?;
    let ds = Dataset::load_csv(data, Provenance::BioVidCsv)?;
    for w in ds.coverage_warnings() {
        eprintln!("warning: {w}");
    }
    let model = train_model(&ds, task, method, cfg)?;
    let records: Vec<_> = ds.records().iter().filter(|r| task.class_of(r.pain_label).is_some()).collect();
    let (_, preds) = model.predict_records(&records)?;
    let correct = records
        .iter()
        .zip(&preds)
        .filter(|(r, p)| task.class_of(r.pain_label) == Some(**p))
        .count();
    let acc = 100.0 * correct as f64 / records.len() as f64;

    let ckpt = checkpoint.unwrap_or_else(|| out.join("checkpoint.json"));
    let net = model.trainer.network();
    save_checkpoint(&ckpt, net, model.trainer.ema(), model.trainer.optimizer_step())?;
    let summary = serde_json::json!({
        "method": method.tag(),
        "task": task.slug(),
        "seed": cfg.seed,
        "windows": records.len(),
        "train_accuracy": acc,
        "loss_history": model.history,
        "normalizer": model.normalizer,
        "checkpoint": ckpt,
    });
    write_file(&out.join("train.json"), &serde_json::to_string_pretty(&summary).map_err(Error::from)?)?;
    println!(
        "{} on {}: {} windows, final loss {:.4}, training accuracy {acc:.2}%",
        method.tag(),
        task.title(),
        records.len(),
        model.history.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn matrix(common: &Common, cfg: &ExperimentConfig, data: &Path) -> CliResult<()> {
    let ds = Dataset::load_csv(data, Provenance::BioVidCsv)?;
    for w in ds.coverage_warnings() {
        eprintln!("warning: {w}");
    }
    let report = run_matrix(&ds, cfg)?;
    let run_dir = write_matrix(&report, &out_dir(common))?;
    echo_config(cfg, &run_dir)?;
    print!("{}", render_tables(&report.cells));
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!(
            "cell {}/{}/{}: {}",
            c.group,
            c.task.slug(),
            c.method.tag(),
            c.error.as_deref().unwrap_or_default()
        );
    }
    println!("run: {}", run_dir.display());
    Ok(())
}

/// Tables plus, for each group, mean accuracy per method and its difference
/// from the first method, over the tasks every method completed.
fn report(run: &Path) -> CliResult<()> {
    let cells = load_fold_reports(run)?;
    let mut text = render_tables(&cells);
    let mut groups: BTreeMap<(String, String), BTreeMap<Method, Vec<(TaskKind, f64)>>> = BTreeMap::new();
    for c in &cells {
        if let Some(r) = c.report.as_ref().filter(|r| r.n_windows > 0) {
            groups
                .entry((c.scheme.to_string(), c.group.clone()))
                .or_default()
                .entry(c.method)
                .or_default()
                .push((c.task, r.accuracy));
        }
    }
    for ((scheme, group), methods) in groups {
        let mut common: Option<Vec<TaskKind>> = None;
        for scores in methods.values() {
            let tasks: Vec<TaskKind> = scores.iter().map(|(t, _)| *t).collect();
            common = Some(match common {
                None => tasks,
                Some(c) => c.into_iter().filter(|t| tasks.contains(t)).collect(),
            });
        }
        let tasks = common.unwrap_or_default();
        if tasks.is_empty() {
            continue;
        }
        let scores = methods
            .iter()
            .map(|(m, s)| {
                let accs: Vec<f64> = tasks
                    .iter()
                    .map(|t| s.iter().find(|(u, _)| u == t).map(|(_, a)| *a).unwrap_or(f64::NAN))
                    .collect();
                MethodScores::new(m.tag(), &tasks, &accs)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cmp = compare_methods(&scores)?;
        let _ = writeln!(text, "Comparison: {scheme} | {group} ({} tasks)", tasks.len());
        let base = &cmp.means[0].0;
        for (m, mean) in &cmp.means {
            let delta = cmp.delta(base, m).unwrap_or(0.0);
            let _ = writeln!(text, "  {m:<14} mean {mean:6.2}  vs {base}: {delta:+.3}");
        }
        text.push('\n');
    }
    print!("{text}");
    Ok(())
}

fn gradcheck(cfg: &ExperimentConfig, samples: usize, tolerance: f64, corrupt: Option<f64>) -> CliResult<()> {
    let opts = GradCheckOptions {
        samples,
        tolerance,
        seed: cfg.seed,
        corrupt,
        ..GradCheckOptions::default()
    };
    let reports = match gradcheck_suite(&opts) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL gradient check aborted: {e}");
            return Err(Failure::Reported(4));
        }
    };
    let mut all = true;
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        all &= r.passed();
        println!(
            "{status} {:<30} max rel error {:.3e} over {} params ({} kink draws skipped, tolerance {:.0e})",
            r.label,
            r.max_rel_error,
            r.entries.len(),
            r.skipped_kinks,
            r.tolerance
        );
    }
    if all {
        Ok(())
    } else {
        Err(Failure::Reported(4))
    }
}

fn detect(cfg: &ExperimentConfig, input: &Path, sample_rate: f64, stages_path: Option<PathBuf>) -> CliResult<()> {
    let samples = read_samples(input)?;
    let record = EcgRecord::unlabeled(samples, sample_rate)?;
    let (result, stages) = detect_qrs_with_stages(&record, &cfg.detector)?;
    let r = &result.r_indices;
    println!("R peaks: {}", r.len());
    println!("r_indices: {r:?}");
    match compute_ibis(r, sample_rate) {
        Ok(ibis) => {
            let x = ibis.as_slice();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            let ibis_txt: Vec<String> = x.iter().map(|v| format!("{v:.1}")).collect();
            println!("ibis_ms: [{}]", ibis_txt.join(", "));
            println!("heart_rate_bpm: {:.2}", 60_000.0 / mean);
        }
        Err(e) => println!("ibis_ms: unavailable ({e})"),
    }
    if let Some(path) = stages_path {
        let mut wtr = csv::Writer::from_path(&path).map_err(Error::from)?;
        wtr.write_record(["raw", "bandpassed", "derivative", "squared", "integrated"])
            .map_err(Error::from)?;
        for i in 0..record.samples().len() {
            let row = [
                record.samples()[i],
                stages.bandpassed[i],
                stages.derivative[i],
                stages.squared[i],
                stages.integrated[i],
            ];
            wtr.write_record(row.iter().map(|v| v.to_string())).map_err(Error::from)?;
        }
        wtr.flush().map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
        println!("stages: {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(&cli.common)?;
    let common = &cli.common;
    match cli.command {
        Command::ExtractFeatures { input, output } => extract(common, &cfg, &input, output),
        Command::SynthCohort {
            subjects,
            windows_per_label,
            raw,
        } => synth(common, &cfg, subjects, windows_per_label, raw),
        Command::Train {
            data,
            task,
            method,
            checkpoint,
        } => train(common, &cfg, &data, task, method, checkpoint),
        Command::RunMatrix { data } => matrix(common, &cfg, &data),
        Command::Report { run } => report(&run),
        Command::Gradcheck {
            samples,
            tolerance,
            corrupt,
        } => {
            if let Some(out) = &common.out {
                echo_config(&cfg, out)?;
            }
            gradcheck(&cfg, samples, tolerance, corrupt)
        }
        Command::Detect {
            input,
            sample_rate,
            stages,
        } => {
            if let Some(out) = &common.out {
                echo_config(&cfg, out)?;
            }
            detect(&cfg, &input, sample_rate, stages)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Reported(code)) => ExitCode::from(code),
    }
}
