use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rsmooth::harness::report::{aggregate_csv, metrics_csv, write_text};
use rsmooth::harness::{evaluate, grid_search, load_data, run_trials, ExperimentConfig, RegularizerKind};
use rsmooth::nn::Network;
use rsmooth::Result;

/// Residual smoothing experiments on small dense classifiers.
#[derive(Parser)]
#[command(name = "rsmooth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train `trials` runs and write per-epoch metrics, checkpoints and an aggregate.
    Train(RunArgs),
    /// Sweep the schedule width b and sigmoid steepness alpha.
    Grid(GridArgs),
    /// Score a saved checkpoint on the configured validation split.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Base seed; trial k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated b values (defaults to the config's grid section).
    #[arg(long, value_delimiter = ',')]
    b: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

const DEFAULT_B: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const DEFAULT_ALPHA: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    config.validate()?;
    Ok(config)
}

fn smoothing_tags(config: &ExperimentConfig) -> (Option<f64>, Option<f64>) {
    if config.regularizer.kind == RegularizerKind::Smoothing {
        (
            Some(config.regularizer.schedule.b),
            Some(config.regularizer.smoothing.alpha),
        )
    } else {
        (None, None)
    }
}

fn train_cmd(args: &RunArgs) -> Result<()> {
    let config = load_config(args)?;
    let report = run_trials(&config)?;
    let out = &args.out_dir;
    for t in &report.trials {
        write_text(
            &out.join(format!("metrics_trial{}.csv", t.trial)),
            &metrics_csv(&t.metrics),
        )?;
        t.network.save(&out.join(format!("model_trial{}.rsm", t.trial)))?;
        println!(
            "trial {} seed {}: max val {:.2}%, tail mean {:.2}%",
            t.trial, t.seed, t.summary.max_val_accuracy, t.summary.tail_mean_val_accuracy
        );
    }
    let (b, alpha) = smoothing_tags(&config);
    write_text(
        &out.join("aggregate.csv"),
        &aggregate_csv(&report.aggregate_rows(b, alpha)),
    )?;
    println!(
        "mean of max {:.2}%, mean of tail {:.2}% over {} trials",
        report.mean_max_val_accuracy,
        report.mean_tail_val_accuracy,
        report.trials.len()
    );
    Ok(())
}

fn grid_cmd(args: &GridArgs) -> Result<()> {
    let config = load_config(&args.run)?;
    let pick = |flag: &[f64], from_config: Option<&Vec<f64>>, default: &[f64]| -> Vec<f64> {
        if !flag.is_empty() {
            flag.to_vec()
        } else {
            from_config.cloned().unwrap_or_else(|| default.to_vec())
        }
    };
    let b = pick(&args.b, config.grid.as_ref().map(|g| &g.b_values), &DEFAULT_B);
    let alpha = pick(
        &args.alpha,
        config.grid.as_ref().map(|g| &g.alpha_values),
        &DEFAULT_ALPHA,
    );
    let report = grid_search(&config, &b, &alpha)?;
    write_text(
        &args.run.out_dir.join("grid.csv"),
        &aggregate_csv(&report.aggregate_rows()),
    )?;
    for c in &report.cells {
        println!(
            "b {} alpha {}: mean of max {:.2}%, mean of tail {:.2}%",
            c.b, c.alpha, c.report.mean_max_val_accuracy, c.report.mean_tail_val_accuracy
        );
    }
    let best = report.best_cell();
    println!(
        "best b {} alpha {} ({:.2}%)",
        best.b, best.alpha, best.report.mean_max_val_accuracy
    );
    Ok(())
}

fn eval_cmd(config: &Path, checkpoint: &Path) -> Result<()> {
    let config = ExperimentConfig::from_file(config)?;
    let network = Network::load(checkpoint)?;
    let data = load_data(&config.dataset)?;
    let e = evaluate(&network, &data.val)?;
    println!(
        "accuracy {:.4}% loss {:.6} on {} samples",
        e.accuracy,
        e.loss,
        data.val.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => train_cmd(a),
        Command::Grid(a) => grid_cmd(a),
        Command::Eval(a) => eval_cmd(&a.config, &a.checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
