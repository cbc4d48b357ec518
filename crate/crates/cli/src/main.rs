//! `ssfl`: partition data, run federated experiments and tabulate results.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data or
//! capacity error, 4 training divergence, 5 unreadable report input.

mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ssfl_core::partitioner::AssignmentPlan;
use ssfl_core::runlog::{self, RecordWriter};
use ssfl_core::{ExperimentConfig, RunOptions, Simulator, SsflError};

#[derive(Parser)]
#[command(name = "ssfl", version, about = "Semi-supervised federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Replace a seed, e.g. `partition=7`; keys: partition, weights, schedule, dataset.
    #[arg(long = "seed-override", value_name = "KEY=VALUE")]
    seed_overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Split the dataset between server and users and print the realized non-iid level.
    Partition {
        #[command(flatten)]
        config: ConfigArgs,
        /// Where to write the assignment JSON.
        #[arg(long, default_value = "assignment.json")]
        out: PathBuf,
    },
    /// Train and write records.jsonl, manifest.json and final.ckpt.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory, created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Threads for local updates; 0 picks automatically. Output does not depend on it.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Convert run directories into long-format CSV tables.
    Report {
        /// Run directories to include.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for accuracy.csv, loss.csv and diversity.csv.
        #[arg(long)]
        out: PathBuf,
    },
}

/// An error paired with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

/// Exit code for errors raised while building the simulator.
fn setup_code(err: &SsflError) -> u8 {
    match err {
        SsflError::Config(_) => 2,
        SsflError::Diverged { .. } => 4,
        _ => 3,
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))
        .map_err(|e| Failure::new(2, e))?;
    for o in &args.seed_overrides {
        cfg.apply_seed_override(o).map_err(|e| Failure::new(2, e))?;
    }
    cfg.validate().map_err(|e| Failure::new(2, e))?;
    Ok(cfg)
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn build(args: &ConfigArgs) -> Result<Simulator, Failure> {
    let cfg = load_config(args)?;
    Simulator::new(cfg, &base_dir(&args.config)).map_err(|e| Failure::new(setup_code(&e), e))
}

fn partition(args: &ConfigArgs, out: &Path) -> Result<(), Failure> {
    let sim = build(args)?;
    let a = sim.assignment();
    let json = serde_json::to_string_pretty(a).map_err(|e| Failure::new(1, e))?;
    std::fs::write(out, json)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(|e| Failure::new(1, e))?;

    let f = &sim.config().federation;
    let classes = a.user_counts.first().map_or(0, Vec::len);
    print!("user  main  total");
    (0..classes).for_each(|c| print!(" {:>6}", format!("c{c}")));
    println!();
    for (k, counts) in a.user_counts.iter().enumerate() {
        print!("{k:>4} {:>5} {:>6}", a.main_class[k], counts.iter().sum::<usize>());
        counts.iter().for_each(|n| print!(" {n:>6}"));
        println!();
    }
    let realized = a.realized_noniid().map_err(|e| Failure::new(1, e))?;
    let slack = {
        let counts = {
            let mut c = vec![0usize; classes];
            for row in &a.user_counts {
                row.iter().enumerate().for_each(|(j, n)| c[j] += n);
            }
            c
        };
        let users_per_class = {
            let mut m = vec![0usize; classes];
            a.main_class.iter().for_each(|&j| m[j] += 1);
            m
        };
        AssignmentPlan::from_parts(counts, users_per_class, f.noniid, f.server_samples)
            .map(|p| p.rounding_slack())
            .unwrap_or(f64::NAN)
    };
    println!("server samples: {}", a.server_indices.len());
    println!("target R: {:.6}  realized R: {realized:.6}  rounding slack: {slack:.6}", f.noniid);
    Ok(())
}

fn run(args: &ConfigArgs, out: &Path, workers: usize) -> Result<(), Failure> {
    let sim = build(args)?;
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating {}", out.display()))
        .map_err(|e| Failure::new(1, e))?;
    runlog::write_manifest(out, sim.config()).map_err(|e| Failure::new(1, e))?;
    let mut writer = RecordWriter::create(&out.join(runlog::RECORDS_FILE)).map_err(|e| Failure::new(1, e))?;
    let mut write_error = None;
    let result = sim.run(RunOptions { workers }, |record| {
        if write_error.is_none() {
            write_error = writer.append(record).err();
        }
        if let Some(acc) = record.test_accuracy {
            eprintln!("round {:>5}  lr {:.5}  user loss {:.4}  accuracy {acc:.4}", record.round, record.lr, record.mean_user_loss);
        }
    });
    if let Some(e) = write_error {
        return Err(Failure::new(1, e));
    }
    let output = result.map_err(|e| {
        let code = if matches!(e, SsflError::Diverged { .. }) { 4 } else { 1 };
        Failure::new(code, e)
    })?;
    runlog::write_checkpoint(out, &output.final_state).map_err(|e| Failure::new(1, e))?;
    println!("wrote {} rounds to {}", output.records.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Partition { config, out } => partition(config, out),
        Command::Run { config, out, workers } => run(config, out, *workers),
        Command::Report { runs, out } => report::write_reports(runs, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
