//! Posterior-predictive case quantiles, either written alongside a fit or
//! recomputed from a saved draws file.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rt_estim::model::{ModelSpec, NormalModelSpec};
use rt_estim::sampler::PosteriorDraws;
use rt_estim::series::ObservedSeries;
use rt_estim::stats::quantile;

use crate::cmdutil;
use crate::manifest::RunManifest;

pub struct PredictiveRow {
    pub week: i64,
    pub observed: u64,
    pub median: f64,
    pub lower95: f64,
    pub upper95: f64,
}

/// Drive a per-draw case sampler over every retained draw and summarize per
/// time point. `sample_cases` receives a name-indexed view of one draw plus
/// the RNG and returns one simulated case vector.
pub fn predictive_rows<F>(
    series: &ObservedSeries,
    draws: &PosteriorDraws,
    seed: u64,
    mut sample_cases: F,
) -> Result<Vec<PredictiveRow>>
where
    F: FnMut(&dyn Fn(&str) -> f64, &mut ChaCha8Rng) -> Vec<u64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9ced_1c71);
    let horizon = series.len();
    let index: HashMap<&str, usize> = draws
        .names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut per_time: Vec<Vec<f64>> =
        vec![Vec::with_capacity(draws.chains() * draws.retained()); horizon];
    for chain in 0..draws.chains() {
        for iter in 0..draws.retained() {
            let lookup = |name: &str| -> f64 {
                draws.value(iter, chain, *index.get(name).expect("parameter name"))
            };
            let cases = sample_cases(&lookup, &mut rng);
            for (t, &c) in cases.iter().enumerate() {
                per_time[t].push(c as f64);
            }
        }
    }

    let first_week = cmdutil::first_time_index(series);
    Ok((0..horizon)
        .map(|t| {
            let mut v = std::mem::take(&mut per_time[t]);
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            PredictiveRow {
                week: first_week + t as i64,
                observed: series.cases[t],
                median: quantile(&v, 0.5),
                lower95: quantile(&v, 0.025),
                upper95: quantile(&v, 0.975),
            }
        })
        .collect())
}

/// Fraction of observed points inside the 95% predictive band.
pub fn predictive_coverage(rows: &[PredictiveRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    let hits = rows
        .iter()
        .filter(|r| r.lower95 <= r.observed as f64 && (r.observed as f64) <= r.upper95)
        .count();
    hits as f64 / rows.len() as f64
}

#[derive(Args)]
pub struct PredictiveArgs {
    /// Fit directory holding draws.csv and manifest.json.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "weekly")]
    step: String,
    /// The model configuration the fit used.
    #[arg(long)]
    config: PathBuf,
    /// gamma or normal; read from the fit manifest when omitted.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: PredictiveArgs) -> Result<i32> {
    let step = cmdutil::parse_step(&args.step)?;
    let series = cmdutil::load_series(&args.data, step)?;
    let config_text = std::fs::read_to_string(&args.config)?;

    let method = match &args.method {
        Some(m) => m.clone(),
        None => {
            let manifest_text = std::fs::read_to_string(args.fit.join("manifest.json"))
                .context("fit manifest not found; pass --method explicitly")?;
            let manifest: serde_json::Value = serde_json::from_str(&manifest_text)?;
            manifest["parameters"]["method"]
                .as_str()
                .context("fit manifest lacks a method")?
                .to_string()
        }
    };

    let draws_path = args.fit.join("draws.csv");
    let rows = match method.as_str() {
        "gamma" => {
            let spec: ModelSpec = serde_json::from_str(&config_text)?;
            let config = spec.build(&series)?;
            let model = rt_estim::model::GammaModel::new(config.clone())?;
            let draws = read_long_csv(&draws_path, rt_estim::sampler::LogDensity::parameter_names(&model))?;
            predictive_rows(&series, &draws, args.seed, |lookup, rng| {
                let mut incidence = Vec::new();
                for t in -(config.priors.seed_len as i64)..=config.horizon() as i64 {
                    incidence.push(lookup(&format!("I[{t}]")).exp());
                }
                let rho = lookup("rho").exp();
                let kappa = lookup("kappa").exp();
                model
                    .emission_means(&incidence, rho)
                    .iter()
                    .map(|&mu| rt_estim::seir::sample_neg_binom(mu, kappa, rng))
                    .collect()
            })?
        }
        "normal" => {
            let spec: NormalModelSpec = serde_json::from_str(&config_text)?;
            let config = spec.build(&series)?;
            let model = rt_estim::model::NormalModel::new(config.clone())?;
            let draws = read_long_csv(&draws_path, rt_estim::sampler::LogDensity::parameter_names(&model))?;
            predictive_rows(&series, &draws, args.seed, |lookup, rng| {
                let mut incidence = Vec::new();
                for t in -(config.priors.seed_len as i64)..=config.horizon() as i64 {
                    incidence.push(lookup(&format!("I[{t}]")).exp());
                }
                let alpha = lookup("alpha").exp();
                let phi = (-lookup("inv_phi")).exp();
                model
                    .emission_means(&incidence, alpha)
                    .iter()
                    .map(|&mu| rt_estim::seir::sample_neg_binom(mu, phi, rng))
                    .collect()
            })?
        }
        other => bail!("posterior predictive requires a gamma or normal fit, got `{other}`"),
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut f = std::fs::File::create(&args.out)?;
    writeln!(f, "week,observed,median,lower95,upper95")?;
    for row in &rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            row.week, row.observed, row.median, row.lower95, row.upper95
        )?;
    }

    let coverage = predictive_coverage(&rows);
    println!("predictive coverage of observed points: {coverage:.3}");

    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            let mut manifest = RunManifest::new("posterior-predictive", args.seed);
            manifest
                .param("fit", args.fit.display())
                .param("data", args.data.display())
                .param("method", &method)
                .param("coverage", coverage);
            manifest.digest_input(&args.data)?;
            manifest.digest_input(&draws_path)?;
            manifest.record_output(&args.out);
            manifest.write(dir)?;
        }
    }
    Ok(0)
}

/// Rebuild a draws matrix from the long CSV, given the parameter order the
/// model defines.
pub fn read_long_csv(path: &std::path::Path, names: Vec<String>) -> Result<PosteriorDraws> {
    let index: HashMap<String, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), i))
        .collect();
    let mut rdr = csv::Reader::from_path(path)?;
    let mut store: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut max_chain = 0usize;
    let mut max_iter = 0usize;
    for record in rdr.records() {
        let record = record?;
        let chain: usize = record[0].parse()?;
        let iter: usize = record[1].parse()?;
        let name = &record[2];
        let value: f64 = record[3].parse()?;
        let p = *index
            .get(name)
            .with_context(|| format!("unexpected parameter `{name}` in draws file"))?;
        max_chain = max_chain.max(chain);
        max_iter = max_iter.max(iter);
        store
            .entry((chain, iter))
            .or_insert_with(|| vec![f64::NAN; names.len()])[p] = value;
    }
    let chains = max_chain + 1;
    let retained = max_iter + 1;
    let mut draws = vec![vec![vec![f64::NAN; names.len()]; retained]; chains];
    for ((chain, iter), row) in store {
        if row.iter().any(|v| v.is_nan()) {
            bail!("draws file is missing parameters for chain {chain}, iteration {iter}");
        }
        draws[chain][iter] = row;
    }
    if draws.iter().flatten().flatten().any(|v| v.is_nan()) {
        bail!("draws file has gaps (missing chain/iteration rows)");
    }
    Ok(PosteriorDraws {
        names,
        draws,
        divergences: vec![0; chains],
        mean_accept: vec![f64::NAN; chains],
        step_sizes: vec![f64::NAN; chains],
    })
}
