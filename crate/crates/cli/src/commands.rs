//! Command-line surface: argument parsing and dispatch.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mcdd_core::data::{load_unlabeled_csv, zscore_apply, zscore_fit};
use mcdd_core::gradcheck::{run_gradcheck, GradGroup, GradcheckOptions, GradcheckReport};
use mcdd_core::{load_csv, train_method, Checkpoint, LabelColumn, Matrix};

use crate::benchmark::{markdown_table, run_benchmark, sweep_nu, DEFAULT_NU_GRID};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::export::{export_latent, ExportScope};

#[derive(Debug, Parser)]
#[command(
    name = "mcdd",
    version,
    about = "Out-of-distribution detection experiments on tabular data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key; applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<ExperimentConfig> {
        ExperimentConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Leave-one-class-out benchmark with cross-validation.
    Benchmark {
        #[command(flatten)]
        config: ConfigArgs,
        /// Scenarios trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Repeat the benchmark for several values of nu.
    SweepNu {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated grid; defaults to 0.001 through 1000 by decades.
        #[arg(long, value_delimiter = ',')]
        nu: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train with a 2-D latent space and write coordinates as CSV.
    ExportLatent {
        #[command(flatten)]
        config: ConfigArgs,
        /// Hold this class out (with --fold); otherwise train on every row.
        #[arg(long)]
        ood_class: Option<usize>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Distort one group's analytic gradient (negative control).
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Train one model on the whole dataset and save a checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a CSV with a saved checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Label column of the input, if it has one (`last`, index or name).
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        no_header: bool,
        /// Output CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Benchmark { config, jobs } => {
            let cfg = config.load()?;
            let (result, path) = run_benchmark(&cfg, jobs)?;
            print!("{}", markdown_table(&result));
            println!("\nwrote {}", path.display());
        }
        Command::SweepNu { config, nu, jobs } => {
            let cfg = config.load()?;
            let grid = if nu.is_empty() { DEFAULT_NU_GRID.to_vec() } else { nu };
            let (sweep, path) = sweep_nu(&cfg, &grid, jobs)?;
            for row in &sweep.rows {
                let m = &row.grand_average;
                println!(
                    "nu={:<8} accuracy={} auroc={:.2}",
                    row.nu,
                    m.classification_accuracy
                        .map_or_else(|| "-".into(), |a| format!("{:.2}", 100.0 * a)),
                    100.0 * m.auroc
                );
            }
            println!("wrote {}", path.display());
        }
        Command::ExportLatent {
            config,
            ood_class,
            fold,
            out,
        } => {
            let cfg = config.load()?;
            let scope = match ood_class {
                Some(ood_class) => ExportScope::Scenario { ood_class, fold },
                None => ExportScope::AllClasses,
            };
            let path = export_latent(&cfg, scope, out)?;
            println!("wrote {}", path.display());
        }
        Command::Gradcheck { seed, corrupt } => {
            let opts = GradcheckOptions {
                corrupt: corrupt.map(|g| g.parse::<GradGroup>()).transpose()?,
                ..GradcheckOptions::default()
            };
            let report = run_gradcheck(seed, &opts)?;
            print!("{}", format_gradcheck(&report));
            if !report.passed() {
                let groups: Vec<String> = report.failed_groups().iter().map(|g| g.to_string()).collect();
                return Err(CliError::CheckFailed(format!(
                    "gradient mismatch in {}",
                    groups.join(", ")
                )));
            }
        }
        Command::Train { config, out } => {
            let cfg = config.load()?;
            let path = train_checkpoint(&cfg, out)?;
            println!("wrote {}", path.display());
        }
        Command::Score {
            checkpoint,
            data,
            label_column,
            no_header,
            out,
        } => {
            let text = score_file(&checkpoint, &data, label_column.as_deref(), !no_header)?;
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| CliError::io(&path, e))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

pub fn format_gradcheck(report: &GradcheckReport) -> String {
    let mut out = String::new();
    for g in &report.groups {
        let _ = writeln!(
            out,
            "{:<10} max_rel_error={:.3e} worst={} checked={} {}",
            g.group.name(),
            g.max_rel_error,
            g.worst_param,
            g.checked,
            if g.passed { "PASS" } else { "FAIL" }
        );
    }
    out
}

/// Trains on every row (all classes in-distribution) and saves a checkpoint
/// holding the normalization statistics.
pub fn train_checkpoint(cfg: &ExperimentConfig, out: Option<PathBuf>) -> CliResult<PathBuf> {
    let dataset = load_csv(&cfg.dataset, &cfg.label_column()?, cfg.has_header)?;
    let all: Vec<usize> = (0..dataset.n_samples()).collect();
    let stats = zscore_fit(&dataset.features, &all)?;
    let x = zscore_apply(&dataset.features, &stats)?;
    let arch = cfg.arch();
    let train_cfg = cfg.train_config();
    let outcome = train_method(cfg.method, &x, &dataset.labels, dataset.n_classes(), &arch, &train_cfg)?;
    let ckpt = Checkpoint::new(outcome.model, arch, train_cfg, Some(stats), dataset.class_names.clone())?;
    let path = out.unwrap_or_else(|| {
        cfg.output_dir
            .join(format!("{}-{}.checkpoint.json", dataset.name, cfg.method))
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    ckpt.save(&path)?;
    Ok(path)
}

/// CSV with one line per input row: index, confidence score, predicted
/// class name (empty for methods that do not classify) and, when the input
/// is labeled, the true label.
pub fn score_file(
    checkpoint: &std::path::Path,
    data: &std::path::Path,
    label_column: Option<&str>,
    has_header: bool,
) -> CliResult<String> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (features, labels): (Matrix, Option<Vec<String>>) = match label_column {
        Some(col) => {
            let ds = load_csv(data, &col.parse::<LabelColumn>()?, has_header)?;
            let names = ds.labels.iter().map(|&y| ds.class_names[y].clone()).collect();
            (ds.features, Some(names))
        }
        None => (load_unlabeled_csv(data, has_header)?, None),
    };
    let x = match &ckpt.normalization {
        Some(stats) => zscore_apply(&features, stats)?,
        None => features,
    };
    let latent = ckpt.model.latent(&x)?;
    let scores = ckpt.model.scores_from_latent(&latent)?;
    let predictions = ckpt.model.predict_from_latent(&latent)?;

    let mut out = String::from("row,score,prediction");
    if labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, score) in scores.iter().enumerate() {
        let pred = predictions
            .as_ref()
            .map(|p| ckpt.class_names.get(p[i]).cloned().unwrap_or_else(|| p[i].to_string()))
            .unwrap_or_default();
        let _ = write!(out, "{i},{score},{pred}");
        if let Some(l) = &labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    Ok(out)
}
