//! Command-line driver: run experiments, simulate trajectories, and inspect
//! single fusion steps.
//!
//! Config files are flat `key = value` text with `#` comments; every key can
//! also be overridden with repeatable `--set key=value` flags. Each run
//! writes `details.csv`, `summary.csv`, and a `manifest.txt` that echoes the
//! exact resolved configuration, so any output is reconstructible from the
//! manifest and the tool version alone.

mod config_file;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use mpfusion::experiment::{run_experiment, trajectory_for};
use mpfusion::gaussian::{fuse, FusionOutcome, DEFAULT_PD_FLOOR};

use config_file::{format_vector, load_config, parse_fuse_inputs};
use manifest::write_manifest;

#[derive(Parser)]
#[command(name = "mpfusion", version, about = "Particle filtering with fused static-parameter estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment grid and write CSV results
    Run {
        /// Config file (key = value lines, # comments); defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. --set d_theta_g=3 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory for details.csv, summary.csv, manifest.txt
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Master seed (overrides the config value)
        #[arg(long)]
        seed: Option<u64>,
        /// Cap on worker threads; defaults to machine parallelism
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Simulate one ground-truth trajectory and write it as CSV
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Master seed (overrides the config value)
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV file path
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse Gaussians listed in a file and print the fused moments
    FuseDebug {
        /// Input file: dim, prior_mean/prior_cov, then local_mean/local_cov pairs
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            set,
            out,
            seed,
            threads,
        } => cmd_run(config.as_deref(), &set, &out, seed, threads),
        Command::Simulate { config, set, seed, out } => cmd_simulate(config.as_deref(), &set, seed, &out),
        Command::FuseDebug { input } => cmd_fuse_debug(&input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn cmd_run(
    config_path: Option<&Path>,
    sets: &[String],
    out_dir: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
) -> Result<(), String> {
    let config = load_config(config_path, sets, seed)?;
    let started = unix_now();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| format!("cannot build thread pool: {e}"))?;
    let table = pool
        .install(|| run_experiment(&config))
        .map_err(|e| e.to_string())?;
    let finished = unix_now();

    fs::create_dir_all(out_dir).map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    let details_path = out_dir.join("details.csv");
    let summary_path = out_dir.join("summary.csv");
    let manifest_path = out_dir.join("manifest.txt");

    let mut details = Vec::new();
    table.write_details_csv(&mut details).map_err(|e| e.to_string())?;
    fs::write(&details_path, details).map_err(|e| format!("cannot write {}: {e}", details_path.display()))?;

    let mut summary = Vec::new();
    table.write_summary_csv(&mut summary).map_err(|e| e.to_string())?;
    fs::write(&summary_path, summary).map_err(|e| format!("cannot write {}: {e}", summary_path.display()))?;

    let manifest = write_manifest(&config, started, finished, Some(&table));
    fs::write(&manifest_path, manifest).map_err(|e| format!("cannot write {}: {e}", manifest_path.display()))?;

    println!(
        "wrote {}, {}, {}",
        details_path.display(),
        summary_path.display(),
        manifest_path.display()
    );
    Ok(())
}

fn cmd_simulate(config_path: Option<&Path>, sets: &[String], seed: Option<u64>, out_path: &Path) -> Result<(), String> {
    let config = load_config(config_path, sets, seed)?;
    let started = unix_now();
    let traj = trajectory_for(&config, 0).map_err(|e| e.to_string())?;

    let mut text = String::new();
    text.push('t');
    for i in 0..config.d_x {
        text.push_str(&format!(",x_{i}"));
    }
    for i in 0..config.d_x {
        text.push_str(&format!(",y_{i}"));
    }
    text.push('\n');
    for t in 0..traj.len() {
        text.push_str(&format!("{}", t + 1));
        for i in 0..config.d_x {
            text.push_str(&format!(",{}", traj.states[(t, i)]));
        }
        for i in 0..config.d_x {
            text.push_str(&format!(",{}", traj.observations[(t, i)]));
        }
        text.push('\n');
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| format!("cannot create {}: {e}", parent.display()))?;
        }
    }
    fs::write(out_path, text).map_err(|e| format!("cannot write {}: {e}", out_path.display()))?;

    let manifest = write_manifest(&config, started, unix_now(), None);
    let manifest_path = PathBuf::from(format!("{}.manifest", out_path.display()));
    fs::write(&manifest_path, manifest).map_err(|e| format!("cannot write {}: {e}", manifest_path.display()))?;

    println!("wrote {}", out_path.display());
    Ok(())
}

fn cmd_fuse_debug(input: &Path) -> Result<(), String> {
    let text = fs::read_to_string(input).map_err(|e| format!("cannot read {}: {e}", input.display()))?;
    let (locals, prior) = parse_fuse_inputs(&text)?;
    let (fused, outcome) = fuse(&locals, &prior, DEFAULT_PD_FLOOR).map_err(|e| e.to_string())?;
    println!("fused_mean = {}", format_vector(fused.mean().iter()));
    println!("fused_cov = {}", format_vector(fused.cov().iter()));
    let label = match outcome {
        FusionOutcome::Exact => "none",
        FusionOutcome::ProductOnly => "product-only",
    };
    println!("fallback = {label}");
    Ok(())
}
