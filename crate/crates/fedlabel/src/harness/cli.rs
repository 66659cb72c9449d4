//! Command-line interface. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::data::features::make_feature_window;
use crate::data::ingest::ingest_csv;
use crate::data::recording::window;
use crate::error::{Error, Result};
use crate::harness::config::{load_config, load_preprocess_schema};
use crate::harness::experiment::run_experiment;
use crate::harness::report::{emit_report, emit_report_rows, load_metrics_rows};

#[derive(Parser, Debug)]
#[command(
    name = "fedlabel",
    about = "Federated learning simulator with heterogeneous labels and models",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a full federated experiment and write metrics, snapshots, and
    /// charts.
    Simulate {
        /// Experiment config file (flat key = value format).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's experiment.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the preprocessing pipeline (windowing, decimation, wavelet
    /// features) over an accelerometer CSV and write a feature-window file.
    Preprocess {
        /// Input accelerometer CSV.
        #[arg(long)]
        input: PathBuf,
        /// Schema config file (csv.* keys).
        #[arg(long)]
        schema: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate summary.csv and charts from an existing metrics directory.
    Report {
        /// Directory containing metrics.csv.
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse and dispatch; never panics on user input.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help to stdout and errors to stderr.
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => simulate(&config, seed, &out),
        Command::Preprocess { input, schema, out } => preprocess(&input, &schema, &out),
        Command::Report { metrics, out } => report(&metrics, &out),
    }
}

fn simulate(config: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let outcome = run_experiment(&cfg, Some(out))?;
    emit_report(&outcome.rounds, out)?;
    for round in &outcome.rounds {
        println!(
            "iteration {:2}: global avg {:.4} (local phase {:.2}s, aggregate {:.3}s)",
            round.iteration,
            round.global_average_accuracy,
            round.timings.local_update_secs,
            round.timings.aggregate_secs
        );
    }
    println!("wrote metrics, snapshots, and charts to {}", out.display());
    Ok(())
}

fn preprocess(input: &Path, schema_path: &Path, out: &Path) -> Result<()> {
    let (schema, window_seconds, target_rate) = load_preprocess_schema(schema_path)?;
    let ingest = ingest_csv(input, &schema)?;
    std::fs::create_dir_all(out)?;

    let mut features_csv = String::new();
    let mut windows = 0usize;
    let mut feature_dim: Option<usize> = None;
    for rec in &ingest.recordings {
        let rate = rec.rate.round();
        if (rec.rate - rate).abs() > 0.5 || rate <= 0.0 {
            return Err(Error::InvalidRate(format!(
                "recording rate {} Hz is not a whole number",
                rec.rate
            )));
        }
        for seg in window(rec, window_seconds) {
            let fw = make_feature_window(&seg, rate as u32, target_rate, &rec.label)?;
            let dim = *feature_dim.get_or_insert(fw.features.len());
            if fw.features.len() != dim {
                return Err(Error::Shape(format!(
                    "inconsistent feature lengths {dim} vs {}",
                    fw.features.len()
                )));
            }
            if windows == 0 {
                features_csv.push_str("label");
                for i in 0..dim {
                    let _ = write!(features_csv, ",f{i}");
                }
                features_csv.push('\n');
            }
            features_csv.push_str(&fw.label.name);
            for v in &fw.features {
                let _ = write!(features_csv, ",{v}");
            }
            features_csv.push('\n');
            windows += 1;
        }
    }
    if windows == 0 {
        return Err(Error::InvalidInput("input produced no feature windows".into()));
    }
    let path = out.join("features.csv");
    std::fs::write(&path, features_csv)?;
    println!(
        "wrote {windows} feature windows ({} values each) to {} ({} malformed rows skipped)",
        feature_dim.unwrap_or(0),
        path.display(),
        ingest.malformed_rows
    );
    Ok(())
}

fn report(metrics_dir: &Path, out: &Path) -> Result<()> {
    let rows = load_metrics_rows(&metrics_dir.join("metrics.csv"))?;
    let files = emit_report_rows(&rows, out)?;
    println!("wrote {} report files to {}", files.len(), out.display());
    Ok(())
}
