//! Command-line front end: synthetic-cohort generation, the cluster-wise
//! experiment, and the age-group experiment.
//!
//! Exit codes: 0 success, 1 data error, 2 config error, 3 numerical failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use riskcluster::config::AppConfig;
use riskcluster::pipeline::{
    run_age_group_experiment, run_cluster_experiment, write_reports, ExperimentReport,
    PipelineError,
};
use riskcluster::schema::{parse_cohort_csv, write_cohort_csv};
use riskcluster::synth::{generate_cohort, SynthError};

#[derive(Parser)]
#[command(
    name = "riskcluster",
    version,
    about = "Cluster-wise predictive risk modelling for child-protection notifications"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic notification cohort as CSV.
    Generate {
        /// TOML configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the cluster-wise experiment on a cohort CSV.
    Run(RunArgs),
    /// Run the age-group experiment on a cohort CSV.
    Agegroups(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Cohort CSV produced by `generate` or matching its schema.
    #[arg(long)]
    input: PathBuf,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed for every stochastic stage.
    #[arg(long)]
    seed: u64,
    /// Report directory; refused if it already holds a run (see --force).
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    /// Fixed number of clusters, skipping elbow selection.
    #[arg(long)]
    k: Option<usize>,
    /// Largest K scanned by the elbow method.
    #[arg(long)]
    kmax: Option<usize>,
    /// Classification threshold on predicted probability.
    #[arg(long)]
    threshold: Option<f64>,
    /// Lambda selection rule: deviance minimum or one-standard-error.
    #[arg(long = "lambda-rule", value_parser = ["min", "1se"])]
    lambda_rule: Option<String>,
    /// Stratify the train/test split by outcome.
    #[arg(long)]
    stratify: bool,
    /// Overwrite an existing report directory.
    #[arg(long)]
    force: bool,
}

fn config_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

fn load_config(path: &PathBuf) -> Result<(AppConfig, String), PipelineError> {
    let bytes =
        fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {}", path.display(), e)))?;
    let cfg = AppConfig::load(path).map_err(|e| PipelineError::Config(e.to_string()))?;
    Ok((cfg, config_digest(&bytes)))
}

fn apply_overrides(cfg: &mut AppConfig, args: &RunArgs) -> Result<(), PipelineError> {
    if let Some(k) = args.k {
        if k == 0 {
            return Err(PipelineError::Config("--k must be at least 1".into()));
        }
        cfg.pipeline.k = Some(k);
    }
    if let Some(kmax) = args.kmax {
        if kmax < 3 {
            return Err(PipelineError::Config(
                "--kmax must be at least 3 for elbow selection".into(),
            ));
        }
        cfg.pipeline.k_max = kmax;
    }
    if let Some(t) = args.threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(PipelineError::Config(format!(
                "--threshold must lie in [0, 1], got {}",
                t
            )));
        }
        cfg.pipeline.threshold = t;
    }
    if let Some(rule) = &args.lambda_rule {
        cfg.pipeline.lambda_rule = rule.clone();
    }
    if args.stratify {
        cfg.pipeline.stratify = true;
    }
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    if let Some(k) = report.provenance.k_chosen {
        println!(
            "clusters: {} (components: {})",
            k,
            report.provenance.components_selected.unwrap_or(0)
        );
    }
    println!("model                      n_train   n_test   lambda        auc");
    for row in &report.rows {
        println!(
            "{:<26} {:>7} {:>8}   {:<10.6} {:.4}",
            row.model_id, row.n_train, row.n_test, row.selected_lambda, row.auc
        );
    }
    for note in &report.notes {
        println!("note: {}", note);
    }
}

fn run_experiment(args: &RunArgs, age_groups: bool) -> Result<(), PipelineError> {
    let (mut cfg, digest) = load_config(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    let cohort = parse_cohort_csv(&args.input)
        .map_err(|e| PipelineError::Data(format!("{}: {}", args.input.display(), e)))?;
    let report = if age_groups {
        run_age_group_experiment(&cohort, &cfg, args.seed, &digest)?
    } else {
        run_cluster_experiment(&cohort, &cfg, args.seed, &digest)?
    };
    write_reports(&report, &args.out_dir, args.force)?;
    print_summary(&report);
    println!("reports written to {}", args.out_dir.display());
    Ok(())
}

fn generate(config: &PathBuf, out: &PathBuf) -> Result<(), PipelineError> {
    let (cfg, _) = load_config(config)?;
    let cohort = generate_cohort(&cfg.generator).map_err(|e| match e {
        SynthError::InvalidConfig(inner) => PipelineError::Config(inner.to_string()),
        SynthError::UnknownPredictor(_) => PipelineError::Config(e.to_string()),
        SynthError::CalibrationFailure(_) => PipelineError::Numerical(e.to_string()),
        SynthError::Preprocess(_) => PipelineError::Numerical(e.to_string()),
    })?;
    write_cohort_csv(&cohort, out)
        .map_err(|e| PipelineError::Data(format!("{}: {}", out.display(), e)))?;
    println!("wrote {} records to {}", cohort.records.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { config, out } => generate(config, out),
        Command::Run(args) => run_experiment(args, false),
        Command::Agegroups(args) => run_experiment(args, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
