//! `rt-estim simulate`: SEIR replicates under a testing scenario, with truth
//! and observed series written per replicate.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use rayon::prelude::*;

use rt_estim::seir::{
    scenario_presets, simulate, EmissionParams, SeirConfig, SimulationTruth,
};

use crate::manifest::RunManifest;

#[derive(Args)]
pub struct SimulateArgs {
    /// Testing scenario: s1 (steady), s2 (slow ramp), s3 (steep ramp).
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1_000_000)]
    population: u64,
    #[arg(long, default_value_t = 10)]
    initial_infectious: u64,
    #[arg(long, default_value_t = 28)]
    horizon_weeks: usize,
    #[arg(long, default_value_t = 11)]
    discard_weeks: usize,
    /// Detection scale of the emission model.
    #[arg(long, default_value_t = 9e-5)]
    rho: f64,
    /// Over-dispersion of the emission model.
    #[arg(long, default_value_t = 5.0)]
    kappa: f64,
}

pub fn run(args: SimulateArgs) -> Result<i32> {
    let scenario = match args.scenario.as_str() {
        "s1" => scenario_presets()[0].clone(),
        "s2" => scenario_presets()[1].clone(),
        "s3" => scenario_presets()[2].clone(),
        other => bail!("unknown scenario `{other}` (expected s1, s2, or s3)"),
    };
    if args.replicates == 0 {
        bail!("need at least one replicate");
    }
    std::fs::create_dir_all(&args.out)?;

    let results: Vec<Result<(usize, bool)>> = (0..args.replicates)
        .into_par_iter()
        .map(|rep| {
            let config = SeirConfig {
                population: args.population,
                initial_infectious: args.initial_infectious,
                horizon_weeks: args.horizon_weeks,
                discard_weeks: args.discard_weeks,
                seed: args.seed.wrapping_add(rep as u64),
                ..SeirConfig::default()
            };
            let emission = EmissionParams { rho: args.rho, kappa: args.kappa };
            let truth = simulate(&config, &scenario, emission)
                .with_context(|| format!("replicate {rep}"))?;
            let dir = args.out.join(format!("rep{rep:03}"));
            std::fs::create_dir_all(&dir)?;
            write_replicate(&dir, &truth)?;
            Ok((rep, truth.extinct_before_analysis))
        })
        .collect();

    let mut manifest = RunManifest::new("simulate", args.seed);
    manifest
        .param("scenario", &args.scenario)
        .param("replicates", args.replicates)
        .param("population", args.population)
        .param("initial_infectious", args.initial_infectious)
        .param("horizon_weeks", args.horizon_weeks)
        .param("discard_weeks", args.discard_weeks)
        .param("rho", args.rho)
        .param("kappa", args.kappa)
        .param("scenario_detail", format!("{scenario:?}"));
    for result in results {
        let (rep, extinct) = result?;
        for name in [
            "truth_daily.csv",
            "observed_daily.csv",
            "observed_weekly.csv",
            "observed_weekly_full.csv",
            "truth_weekly.csv",
        ] {
            manifest.record_output(&PathBuf::from(format!("rep{rep:03}/{name}")));
        }
        if extinct {
            manifest.note(format!("rep{rep:03}: epidemic extinct before the analysis window"));
        }
    }
    manifest.write(&args.out)?;
    println!("wrote {} replicate(s) to {}", args.replicates, args.out.display());
    Ok(0)
}

fn write_replicate(dir: &Path, truth: &SimulationTruth) -> Result<()> {
    // Daily truth.
    let mut f = std::fs::File::create(dir.join("truth_daily.csv"))?;
    writeln!(f, "day,S,E,I,R,transitions,Rt")?;
    for rec in &truth.daily {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            rec.day, rec.susceptible, rec.exposed, rec.infectious, rec.removed, rec.transitions, rec.rt
        )?;
    }

    // Observed series, full horizon daily and analysis-window weekly.
    let mut f = std::fs::File::create(dir.join("observed_daily.csv"))?;
    truth.observed_daily.write_csv(&mut f)?;
    let weekly = truth.observed_weekly_analysis()?;
    let mut f = std::fs::File::create(dir.join("observed_weekly.csv"))?;
    weekly.write_csv(&mut f)?;
    let weekly_full = truth.observed_weekly_full()?;
    let mut f = std::fs::File::create(dir.join("observed_weekly_full.csv"))?;
    weekly_full.write_csv(&mut f)?;

    // Weekly truth over the analysis window.
    let mut f = std::fs::File::create(dir.join("truth_weekly.csv"))?;
    writeln!(f, "week,rt_true,incidence_true")?;
    for rec in truth.weekly_analysis() {
        writeln!(f, "{},{},{}", rec.week, rec.rt, rec.incidence)?;
    }
    Ok(())
}
