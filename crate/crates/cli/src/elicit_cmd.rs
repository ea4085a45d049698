//! `rt-estim elicit`: detection-rate and over-dispersion priors from data,
//! emitted as a JSON fragment that merges directly into a model config.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use rt_estim::elicit::{elicit_kappa, elicit_rho, DetectionPriorSpec, KappaElicitConfig};
use rt_estim::sampler::SamplerConfig;

use crate::cmdutil;
use crate::manifest::{write_json, RunManifest};

#[derive(Args)]
pub struct ElicitArgs {
    /// Series to analyze (the detection prior always anchors on its tests).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "weekly")]
    step: String,
    /// Where the over-dispersion spline is fit: `same-data` uses --data,
    /// `held-out` requires --spline-data.
    #[arg(long, default_value = "same-data")]
    mode: String,
    /// Held-out series for the spline fit.
    #[arg(long)]
    spline_data: Option<PathBuf>,
    #[arg(long)]
    detection_low: f64,
    #[arg(long)]
    detection_high: f64,
    #[arg(long, default_value_t = 0.5)]
    test_quantile: f64,
    #[arg(long, default_value_t = 10)]
    kappa_knots: usize,
    #[arg(long, default_value_t = 1.0)]
    ridge: f64,
    #[arg(long, default_value_t = 500.0)]
    kappa_cap: f64,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output fragment path (JSON object with mu_rho/sigma_rho/mu_kappa/sigma_kappa).
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: ElicitArgs) -> Result<i32> {
    let step = cmdutil::parse_step(&args.step)?;
    let series = cmdutil::load_series(&args.data, step)?;

    let spline_series = match args.mode.as_str() {
        "same-data" => series.clone(),
        "held-out" => {
            let path = args
                .spline_data
                .as_ref()
                .context("--mode held-out requires --spline-data")?;
            cmdutil::load_series(path, step)?
        }
        other => bail!("unknown mode `{other}` (expected same-data or held-out)"),
    };

    let detection = DetectionPriorSpec {
        overall_low: args.detection_low,
        overall_high: args.detection_high,
        test_quantile: args.test_quantile,
    };
    let rho = elicit_rho(&series.tests, &detection)?;

    let kappa_config = KappaElicitConfig {
        interior_knots: args.kappa_knots,
        ridge_penalty: args.ridge,
        kappa_cap: args.kappa_cap,
        sampler: SamplerConfig {
            chains: args.chains,
            iterations: args.iterations,
            warmup: args.warmup.unwrap_or(args.iterations / 2),
            seed: args.seed,
            ..SamplerConfig::default()
        },
        ..KappaElicitConfig::default()
    };
    let kappa = elicit_kappa(&spline_series.cases, &kappa_config)?;

    // Fragment keys match the model prior field names exactly, so the file
    // overlays onto a config without edits.
    let mut fragment = BTreeMap::new();
    fragment.insert("mu_rho", rho.mu);
    fragment.insert("sigma_rho", rho.sigma);
    fragment.insert("mu_kappa", kappa.mu);
    fragment.insert("sigma_kappa", kappa.sigma);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_json(&args.out, &fragment)?;

    println!(
        "rho prior: LogNormal({:.4}, {:.4}) anchored at {} tests",
        rho.mu, rho.sigma, rho.anchor_tests
    );
    println!(
        "kappa prior: TruncatedNormal({:.2}, {:.2}){}",
        kappa.mu,
        kappa.sigma,
        if kappa.saturated { " [saturated at cap]" } else { "" }
    );

    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            let mut manifest = RunManifest::new("elicit", args.seed);
            manifest
                .param("data", args.data.display())
                .param("mode", &args.mode)
                .param("detection_low", args.detection_low)
                .param("detection_high", args.detection_high)
                .param("test_quantile", args.test_quantile)
                .param("kappa_knots", args.kappa_knots)
                .param("ridge", args.ridge)
                .param("kappa_saturated", kappa.saturated);
            manifest.digest_input(&args.data)?;
            if let Some(path) = &args.spline_data {
                manifest.digest_input(path)?;
                manifest.param("spline_data", path.display());
            }
            manifest.record_output(&args.out);
            manifest.write(dir)?;
        }
    }
    Ok(0)
}
