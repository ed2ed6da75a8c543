//! Command-line front end: `canonicalize`, `evaluate`, `sweep`, `gradcheck`.
//!
//! Settings come from a JSON config (`--config` or `OKBCANON_CONFIG`); any
//! field can be overridden by the flag of the same name in kebab case.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use okb_canon::pipeline::{
    canonicalize, evaluate_files, gradcheck_suite, metrics_json, sweep_csv, sweep_from_config, RunConfig, SweepAxis,
};
use okb_canon::{Error, Result};

#[derive(Parser)]
#[command(name = "okb-canon", version, about = "Noun-phrase canonicalization for open knowledge bases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster the noun phrases of a triple file and write clusters, metrics and losses.
    Canonicalize {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a cluster file against gold labels.
    Evaluate {
        /// Cluster file, one tab-separated cluster per line.
        pred: PathBuf,
        /// Gold TSV: phrase, entity.
        gold: PathBuf,
        /// Also write the metrics JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One full run per value of a setting; prints CSV.
    Sweep {
        /// `dim` or `diffusion_weight`.
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of every loss term on the toy problem.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file.
    #[arg(long, env = "OKBCANON_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Serialize, Default)]
struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    triples: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sentences: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    vectors: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    contextual_vectors: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    paraphrases: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    entity_links: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_gold: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kge_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    diffusion_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_start: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta_end: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    /// single, complete or average.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    linkage: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hac_threshold: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold_grid: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    idf_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs_stage1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs_stage2: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_stage1: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lr_stage2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    /// sgd or adam.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    optimizer: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    diffusion_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    clu_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kge_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    side_weight: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_neg: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    variance_floor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    initial_log_sigma: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    augment: Option<bool>,
    /// hole or transe.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kge_model: Option<String>,
    /// cluster_mean or own_latent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    canonical: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    without_neighbor: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    without_diffusion: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    without_side_info: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    transe: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    strict_gold: Option<bool>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let config = base.with_overrides(&serde_json::to_value(&self.overrides)?)?;
        config.validate()?;
        Ok(config)
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Canonicalize { run } => {
            let config = run.resolve()?;
            let (out, files) = canonicalize(&config)?;
            println!("clusters\t{}\t{}", out.clusters.num_clusters(), files.clusters.display());
            println!("losses\t{}", files.losses.display());
            if let (Some(m), Some(path)) = (&out.metrics, &files.metrics) {
                println!("metrics\t{}", path.display());
                print!("{}", metrics_json(m));
            }
            Ok(true)
        }
        Command::Evaluate { pred, gold, out } => {
            let m = evaluate_files(&pred, &gold)?;
            let json = metrics_json(&m);
            print!("{json}");
            if let Some(path) = out {
                fs::write(&path, &json).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            }
            Ok(true)
        }
        Command::Sweep { axis, values, run } => {
            let config = run.resolve()?;
            let rows = sweep_from_config(&config, axis, &values)?;
            print!("{}", sweep_csv(&rows));
            Ok(rows.iter().all(|r| r.result.is_ok()))
        }
        Command::Gradcheck { seed, eps, tolerance } => {
            let (results, k) = gradcheck_suite(seed, eps)?;
            println!("# toy problem: {k} HAC clusters, eps {eps:e}, tolerance {tolerance:e}");
            let mut ok = true;
            for r in &results {
                let pass = r.max_rel_error <= tolerance && r.max_abs_gradient > 0.0;
                ok &= pass;
                println!(
                    "{}\t{:.3e}\t{:.3e}\t{}\t{}",
                    r.label,
                    r.max_rel_error,
                    r.max_abs_gradient,
                    r.checked,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            println!("error\t{}\t{}", e.module(), e.to_string().replace(['\n', '\t'], " "));
            ExitCode::from(2)
        }
    }
}
