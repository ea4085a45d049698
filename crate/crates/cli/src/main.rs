//! Command-line pipelines: simulate outbreaks, elicit surveillance priors,
//! fit estimators, and evaluate them against simulation truth.

mod elicit_cmd;
mod estimate;
mod evaluate;
mod manifest;
mod predictive;
mod simulate;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "rt-estim",
    about = "Test-volume-aware effective reproduction number estimation",
    version
)]
struct Cli {
    /// Worker threads for parallel chains/replicates (falls back to the
    /// RT_ESTIM_THREADS environment variable, then to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate SEIR outbreaks under a testing scenario.
    Simulate(simulate::SimulateArgs),
    /// Fit an estimator to a case/test series.
    Estimate(estimate::EstimateArgs),
    /// Elicit surveillance priors (detection rate and over-dispersion).
    Elicit(elicit_cmd::ElicitArgs),
    /// Score estimate directories against simulation truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Posterior-predictive case quantiles from a saved fit.
    PosteriorPredictive(predictive::PredictiveArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    configure_threads(cli.jobs);
    let outcome = match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Estimate(args) => estimate::run(args),
        Command::Elicit(args) => elicit_cmd::run(args),
        Command::Evaluate(args) => evaluate::run(args),
        Command::PosteriorPredictive(args) => predictive::run(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn configure_threads(jobs: Option<usize>) {
    let n = jobs.or_else(|| {
        std::env::var("RT_ESTIM_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Shared flag helpers.
pub(crate) mod cmdutil {
    use anyhow::{bail, Result};
    use rt_estim::series::{ObservedSeries, TimeStep};
    use std::path::Path;

    pub fn parse_step(step: &str) -> Result<TimeStep> {
        match step {
            "daily" => Ok(TimeStep::Daily),
            "weekly" => Ok(TimeStep::Weekly),
            other => bail!("unknown step `{other}` (expected daily or weekly)"),
        }
    }

    pub fn load_series(path: &Path, step: TimeStep) -> Result<ObservedSeries> {
        Ok(ObservedSeries::from_csv_path(path, step)?)
    }

    /// Index of the first time step, for labeling outputs: integer labels
    /// carry their own origin, date labels start at 1.
    pub fn first_time_index(series: &ObservedSeries) -> i64 {
        match series.start_label {
            rt_estim::series::StartLabel::Index(i) => i,
            rt_estim::series::StartLabel::Date(_) => 1,
        }
    }
}
