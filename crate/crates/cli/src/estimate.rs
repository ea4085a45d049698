//! `rt-estim estimate`: fit one of the five methods to a case/test series and
//! write plot-ready quantile files plus sampler draws and diagnostics.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rt_estim::baselines::{
    epiestim, epiestim_uncertain, glm_poisson_mimic, glm_quasipoisson_mimic, EpiEstimConfig,
    WindowSummary,
};
use rt_estim::delay::{discretize, ContinuousDelay, DelayOffset, DiscretizedDelay};
use rt_estim::model::{
    initialize_normal, initialize_real_data, GammaModel, GammaModelConfig, ModelSpec, NormalModel,
    NormalModelSpec,
};
use rt_estim::sampler::{
    convergence_verdict, diagnostics, sample, ConvergenceVerdict, PosteriorDraws, SamplerConfig,
};
use rt_estim::series::{ObservedSeries, TimeStep};
use rt_estim::stats::quantile_of;

use crate::cmdutil;
use crate::manifest::{write_json, RunManifest};
use crate::predictive::{predictive_rows, PredictiveRow};

#[derive(Args)]
pub struct EstimateArgs {
    /// One of: gamma, normal, epiestim, glm-pois, glm-quasi.
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub data: PathBuf,
    /// Time step of the input series: weekly or daily.
    #[arg(long, default_value = "weekly")]
    pub step: String,
    /// Model configuration JSON (priors and delay laws).
    #[arg(long)]
    pub config: PathBuf,
    /// Elicited prior fragment merged over the configuration's priors.
    #[arg(long)]
    pub elicited: Option<PathBuf>,
    /// Estimation window (time steps) for the baseline methods.
    #[arg(long, default_value_t = 1)]
    pub window: usize,
    #[arg(long, default_value_t = 1.0)]
    pub prior_shape: f64,
    #[arg(long, default_value_t = 5.0)]
    pub prior_scale: f64,
    /// Number of perturbed generation-time draws for the uncertain window
    /// estimator (0 keeps the kernel fixed).
    #[arg(long, default_value_t = 0)]
    pub gen_time_draws: usize,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    /// Warmup iterations (default: half of iterations).
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// NUTS acceptance target; the renewal posteriors need a conservative
    /// step size to avoid divergent transitions.
    #[arg(long, default_value_t = 0.95)]
    pub target_accept: f64,
    #[arg(long, default_value_t = 10)]
    pub max_tree_depth: usize,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: EstimateArgs) -> Result<i32> {
    let step = cmdutil::parse_step(&args.step)?;
    let series = cmdutil::load_series(&args.data, step)?;
    std::fs::create_dir_all(&args.out)?;

    let config_text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let elicited_text = match &args.elicited {
        Some(path) => Some(
            std::fs::read_to_string(path)
                .with_context(|| format!("reading elicited fragment {}", path.display()))?,
        ),
        None => None,
    };
    let merged = merge_priors(&config_text, elicited_text.as_deref())?;
    let merged_bytes = serde_json::to_vec(&merged)?;

    let mut manifest = RunManifest::new("estimate", args.seed);
    manifest
        .param("method", &args.method)
        .param("data", args.data.display())
        .param("step", &args.step)
        .param("config", args.config.display());
    manifest.digest_input(&args.data)?;
    manifest.digest_input(&args.config)?;
    if let Some(path) = &args.elicited {
        manifest.digest_input(path)?;
        manifest.param("elicited", path.display());
    }
    manifest.set_config_digest(&merged_bytes);

    let exit = match args.method.as_str() {
        "gamma" => {
            let spec: ModelSpec = serde_json::from_value(merged.clone())
                .context("config does not parse as a gamma-model spec")?;
            run_gamma(&args, &spec, &series, &mut manifest)?
        }
        "normal" => {
            let spec: NormalModelSpec = serde_json::from_value(merged.clone())
                .context("config does not parse as a normal-model spec")?;
            run_normal(&args, &spec, &series, &mut manifest)?
        }
        "epiestim" | "glm-pois" | "glm-quasi" => {
            run_baseline(&args, &merged, &series, &mut manifest)?
        }
        other => bail!("unknown method `{other}`"),
    };

    manifest.write(&args.out)?;
    Ok(exit)
}

/// Overlay elicited prior fields onto the config's `priors` object.
fn merge_priors(config_text: &str, elicited: Option<&str>) -> Result<serde_json::Value> {
    let mut value: serde_json::Value = serde_json::from_str(config_text)?;
    if let Some(fragment_text) = elicited {
        let fragment: serde_json::Value = serde_json::from_str(fragment_text)?;
        let fragment = fragment
            .as_object()
            .context("elicited fragment must be a JSON object")?;
        let priors = value
            .get_mut("priors")
            .and_then(|p| p.as_object_mut())
            .context("config lacks a priors object")?;
        for (key, val) in fragment {
            priors.insert(key.clone(), val.clone());
        }
    }
    Ok(value)
}

fn sampler_config(args: &EstimateArgs) -> SamplerConfig {
    SamplerConfig {
        chains: args.chains,
        iterations: args.iterations,
        warmup: args.warmup.unwrap_or(args.iterations / 2),
        seed: args.seed,
        target_acceptance: args.target_accept,
        max_tree_depth: args.max_tree_depth,
    }
}

/// Window-estimator medians used as reproduction-number starting points, with
/// gaps filled from the nearest defined estimate.
pub fn baseline_medians_for_init(
    series: &ObservedSeries,
    generation: &DiscretizedDelay,
) -> Result<Vec<f64>> {
    let config = EpiEstimConfig::new(1, 1.0, 5.0, generation.clone())?;
    let windows = epiestim(series, &config)?;
    let mut medians = vec![f64::NAN; series.len()];
    for w in &windows {
        let s = w.summary();
        medians[s.t_end - 1] = s.median;
    }
    // Forward-fill interior gaps, then back-fill the leading ones.
    let mut last = f64::NAN;
    for m in medians.iter_mut() {
        if m.is_nan() {
            *m = last;
        } else {
            last = *m;
        }
    }
    let first_defined = medians
        .iter()
        .copied()
        .find(|m| !m.is_nan())
        .context("no defined baseline estimate to initialize from")?;
    for m in medians.iter_mut() {
        if m.is_nan() {
            *m = first_defined;
        }
    }
    Ok(medians.iter().map(|m| m.max(1e-3)).collect())
}

struct FitOutputs {
    verdict: ConvergenceVerdict,
}

fn run_gamma(
    args: &EstimateArgs,
    spec: &ModelSpec,
    series: &ObservedSeries,
    manifest: &mut RunManifest,
) -> Result<i32> {
    let config = spec.build(series)?;
    let medians = baseline_medians_for_init(series, &config.generation)?;
    let detection_median = (spec.priors.mu_rho).exp()
        * quantile_of(&series.tests.iter().map(|&m| m as f64).collect::<Vec<_>>(), 0.5);
    let init = initialize_real_data(&config, &medians, detection_median)?;
    let model = GammaModel::new(config.clone())?;
    let sampler_cfg = sampler_config(args);
    let inits = vec![init.to_vec(); sampler_cfg.chains];
    let draws = sample(&model, &inits, &sampler_cfg)?;

    let outputs = write_bayesian_outputs(args, series, &draws, |draws, seed| {
        predictive_rows_gamma(&config, series, draws, seed)
    })?;
    manifest.param("chains", sampler_cfg.chains);
    manifest.param("iterations", sampler_cfg.iterations);
    manifest.param("warmup", sampler_cfg.warmup);
    manifest.convergence = Some(outputs.verdict.clone());
    for name in [
        "draws.csv",
        "summary.json",
        "diagnostics.json",
        "rt.csv",
        "incidence.csv",
        "predictive.csv",
    ] {
        manifest.record_output(&PathBuf::from(name));
    }
    print_verdict(&outputs.verdict);
    Ok(if outputs.verdict.pass { 0 } else { 2 })
}

fn run_normal(
    args: &EstimateArgs,
    spec: &NormalModelSpec,
    series: &ObservedSeries,
    manifest: &mut RunManifest,
) -> Result<i32> {
    let config = spec.build(series)?;
    let medians = baseline_medians_for_init(series, &config.generation)?;
    let init = initialize_normal(&config, &medians, spec.priors.mu_alpha)?;
    let model = NormalModel::new(config.clone())?;
    let sampler_cfg = sampler_config(args);
    let inits = vec![init.to_vec(); sampler_cfg.chains];
    let draws = sample(&model, &inits, &sampler_cfg)?;

    let outputs = write_bayesian_outputs(args, series, &draws, |draws, seed| {
        predictive_rows_normal(&config, series, draws, seed)
    })?;
    manifest.param("chains", sampler_cfg.chains);
    manifest.param("iterations", sampler_cfg.iterations);
    manifest.param("warmup", sampler_cfg.warmup);
    manifest.convergence = Some(outputs.verdict.clone());
    for name in [
        "draws.csv",
        "summary.json",
        "diagnostics.json",
        "rt.csv",
        "incidence.csv",
        "predictive.csv",
    ] {
        manifest.record_output(&PathBuf::from(name));
    }
    print_verdict(&outputs.verdict);
    Ok(if outputs.verdict.pass { 0 } else { 2 })
}

fn print_verdict(verdict: &ConvergenceVerdict) {
    if verdict.pass {
        println!(
            "converged: max Rhat {:.4}, min bulk ESS {:.0}, min tail ESS {:.0}",
            verdict.max_rhat, verdict.min_ess_bulk, verdict.min_ess_tail
        );
    } else {
        eprintln!(
            "NOT CONVERGED: max Rhat {:.4} (limit {}), min bulk ESS {:.0}, min tail ESS {:.0} (limit {})",
            verdict.max_rhat,
            verdict.rhat_limit,
            verdict.min_ess_bulk,
            verdict.min_ess_tail,
            verdict.ess_limit
        );
    }
}

fn write_bayesian_outputs<F>(
    args: &EstimateArgs,
    series: &ObservedSeries,
    draws: &PosteriorDraws,
    predictive: F,
) -> Result<FitOutputs>
where
    F: FnOnce(&PosteriorDraws, u64) -> Result<Vec<PredictiveRow>>,
{
    let diag = diagnostics(draws)?;
    let verdict = convergence_verdict(&diag);

    let mut f = std::fs::File::create(args.out.join("draws.csv"))?;
    draws.write_long_csv(&mut f)?;

    write_json(&args.out.join("summary.json"), &draws.summaries())?;
    write_json(
        &args.out.join("diagnostics.json"),
        &serde_json::json!({
            "per_parameter": &diag,
            "verdict": &verdict,
            "divergences": &draws.divergences,
            "mean_accept": &draws.mean_accept,
            "step_sizes": &draws.step_sizes,
        }),
    )?;

    let first_week = cmdutil::first_time_index(series);
    write_time_quantiles(
        &args.out.join("rt.csv"),
        series,
        draws,
        |t| format!("R[{t}]"),
        first_week,
    )?;
    write_time_quantiles(
        &args.out.join("incidence.csv"),
        series,
        draws,
        |t| format!("I[{t}]"),
        first_week,
    )?;

    let rows = predictive(draws, args.seed)?;
    let mut f = std::fs::File::create(args.out.join("predictive.csv"))?;
    writeln!(f, "week,observed,median,lower95,upper95")?;
    for row in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            row.week, row.observed, row.median, row.lower95, row.upper95
        )?;
    }

    Ok(FitOutputs { verdict })
}

/// Natural-scale quantiles of an indexed family of unconstrained draws
/// (the exp transform is monotone, so quantiles map through directly).
fn write_time_quantiles(
    path: &std::path::Path,
    series: &ObservedSeries,
    draws: &PosteriorDraws,
    name_of: impl Fn(usize) -> String,
    first_week: i64,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "week,median,lower95,upper95")?;
    for t in 1..=series.len() {
        let idx = draws
            .parameter_index(&name_of(t))
            .with_context(|| format!("missing parameter {}", name_of(t)))?;
        let pooled = draws.pooled(idx);
        let median = quantile_of(&pooled, 0.5).exp();
        let lower = quantile_of(&pooled, 0.025).exp();
        let upper = quantile_of(&pooled, 0.975).exp();
        writeln!(f, "{},{},{},{}", first_week + t as i64 - 1, median, lower, upper)?;
    }
    Ok(())
}

fn predictive_rows_gamma(
    config: &GammaModelConfig,
    series: &ObservedSeries,
    draws: &PosteriorDraws,
    seed: u64,
) -> Result<Vec<PredictiveRow>> {
    predictive_rows(series, draws, seed, |state_by_name, rng| {
        let model = GammaModel::new(config.clone()).expect("validated config");
        let seeded = config.priors.seeded_count();
        let horizon = config.horizon();
        let mut incidence = Vec::with_capacity(seeded + horizon);
        for t in -(config.priors.seed_len as i64)..=horizon as i64 {
            incidence.push(state_by_name(&format!("I[{t}]")).exp());
        }
        let rho = state_by_name("rho").exp();
        let kappa = state_by_name("kappa").exp();
        let means = model.emission_means(&incidence, rho);
        means
            .iter()
            .map(|&mu| rt_estim::seir::sample_neg_binom(mu, kappa, rng))
            .collect()
    })
}

fn predictive_rows_normal(
    config: &rt_estim::model::NormalModelConfig,
    series: &ObservedSeries,
    draws: &PosteriorDraws,
    seed: u64,
) -> Result<Vec<PredictiveRow>> {
    predictive_rows(series, draws, seed, |state_by_name, rng| {
        let model = NormalModel::new(config.clone()).expect("validated config");
        let seeded = config.priors.seeded_count();
        let horizon = config.horizon();
        let mut incidence = Vec::with_capacity(seeded + horizon);
        for t in -(config.priors.seed_len as i64)..=horizon as i64 {
            incidence.push(state_by_name(&format!("I[{t}]")).exp());
        }
        let alpha = state_by_name("alpha").exp();
        let phi = (-state_by_name("inv_phi")).exp();
        let means = model.emission_means(&incidence, alpha);
        means
            .iter()
            .map(|&mu| rt_estim::seir::sample_neg_binom(mu, phi, rng))
            .collect()
    })
}

fn run_baseline(
    args: &EstimateArgs,
    merged: &serde_json::Value,
    series: &ObservedSeries,
    manifest: &mut RunManifest,
) -> Result<i32> {
    // Baselines need only the generation law and use cases as incidence.
    let generation_spec: ContinuousDelay = serde_json::from_value(
        merged
            .get("generation")
            .context("config lacks a generation delay")?
            .clone(),
    )?;
    let steps = series.len() + 1;
    let generation = match series.step {
        TimeStep::Daily => discretize(&generation_spec, steps, DelayOffset::One)?,
        TimeStep::Weekly => discretize(&generation_spec, 7 * steps, DelayOffset::One)?.to_weekly(),
    };

    let summaries: Vec<WindowSummary> = match args.method.as_str() {
        "epiestim" => {
            let config =
                EpiEstimConfig::new(args.window, args.prior_shape, args.prior_scale, generation)?;
            if args.gen_time_draws > 0 {
                let kernels = perturbed_kernels(
                    &generation_spec,
                    series,
                    args.gen_time_draws,
                    args.seed,
                )?;
                epiestim_uncertain(series, &config, &kernels)?
            } else {
                epiestim(series, &config)?.iter().map(|w| w.summary()).collect()
            }
        }
        "glm-pois" => glm_poisson_mimic(series, args.window, &generation)?
            .iter()
            .map(|w| w.summary())
            .collect(),
        "glm-quasi" => glm_quasipoisson_mimic(series, args.window, &generation)?
            .iter()
            .map(|w| w.summary())
            .collect(),
        _ => unreachable!(),
    };

    let first_week = cmdutil::first_time_index(series);
    let path = args.out.join("estimates.csv");
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "week,t_end,median,lower95,upper95,dispersion")?;
    for s in &summaries {
        let dispersion = s.dispersion.map_or(String::new(), |d| d.to_string());
        writeln!(
            f,
            "{},{},{},{},{},{}",
            first_week + s.t_end as i64 - 1,
            s.t_end,
            s.median,
            s.lower95,
            s.upper95,
            dispersion
        )?;
    }
    manifest
        .param("window", args.window)
        .param("prior_shape", args.prior_shape)
        .param("prior_scale", args.prior_scale)
        .param("gen_time_draws", args.gen_time_draws);
    manifest.record_output(&PathBuf::from("estimates.csv"));
    println!("wrote {} window estimates", summaries.len());
    Ok(0)
}

/// Log-normal multiplicative jitter on the generation-time parameters, one
/// kernel per draw.
fn perturbed_kernels(
    base: &ContinuousDelay,
    series: &ObservedSeries,
    count: usize,
    seed: u64,
) -> Result<Vec<DiscretizedDelay>> {
    use rand_distr::Distribution;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e_d1a5);
    let noise = rand_distr::LogNormal::new(0.0, 0.1).unwrap();
    let steps = series.len() + 1;
    let mut kernels = Vec::with_capacity(count);
    for _ in 0..count {
        let jittered = scale_params(base, noise.sample(&mut rng), noise.sample(&mut rng));
        let kernel = match series.step {
            TimeStep::Daily => discretize(&jittered, steps, DelayOffset::One)?,
            TimeStep::Weekly => {
                discretize(&jittered, 7 * steps, DelayOffset::One)?.to_weekly()
            }
        };
        kernels.push(kernel);
    }
    Ok(kernels)
}

fn scale_params(base: &ContinuousDelay, a: f64, b: f64) -> ContinuousDelay {
    match *base {
        ContinuousDelay::Exponential { rate } => ContinuousDelay::Exponential { rate: rate * a },
        ContinuousDelay::Gamma { shape, rate } => {
            ContinuousDelay::Gamma { shape: shape * a, rate: rate * b }
        }
        ContinuousDelay::LogNormal { log_mean, log_sd } => ContinuousDelay::LogNormal {
            log_mean: log_mean + a.ln() * 0.5,
            log_sd: log_sd * b,
        },
        ContinuousDelay::Weibull { shape, scale } => {
            ContinuousDelay::Weibull { shape: shape * a, scale: scale * b }
        }
        ContinuousDelay::HypoExponential { rate1, rate2 } => {
            ContinuousDelay::HypoExponential { rate1: rate1 * a, rate2: rate2 * b }
        }
    }
}
