//! `rt-estim evaluate`: score estimate directories against simulation truth,
//! excluding time points jointly so every method is judged on the same steps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use rt_estim::metrics::{
    absolute_deviation, common_time_points, envelope, masv, mciw, summarize_replicates,
    EstimateSeries,
};

use crate::manifest::{write_json, RunManifest};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Simulation directory (rep###/truth_weekly.csv).
    #[arg(long)]
    truth: PathBuf,
    /// Estimates directory (<method>/rep###/ with rt.csv or estimates.csv).
    #[arg(long)]
    estimates: PathBuf,
    /// Scenario label recorded in the metrics table.
    #[arg(long, default_value = "unlabeled")]
    scenario: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, serde::Serialize)]
struct MetricsRow {
    method: String,
    scenario: String,
    replicate: String,
    envelope: f64,
    mciw: f64,
    abs_dev: f64,
    masv: f64,
    truth_masv: f64,
}

pub fn run(args: EvaluateArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out)?;
    let mut manifest = RunManifest::new("evaluate", 0);
    manifest
        .param("truth", args.truth.display())
        .param("estimates", args.estimates.display())
        .param("scenario", &args.scenario);

    let methods = sorted_dirs(&args.estimates)?;
    if methods.is_empty() {
        bail!("no method directories under {}", args.estimates.display());
    }
    let replicates = sorted_dirs(&args.truth)?;
    if replicates.is_empty() {
        bail!("no replicate directories under {}", args.truth.display());
    }

    let mut rows: Vec<MetricsRow> = Vec::new();
    for rep in &replicates {
        let truth_path = args.truth.join(rep).join("truth_weekly.csv");
        if !truth_path.exists() {
            manifest.note(format!("{rep}: missing truth_weekly.csv, skipped"));
            continue;
        }
        let (truth_weeks, truth_rt) = read_truth(&truth_path)?;

        // Collect each method's series for this replicate.
        let mut series: Vec<(String, EstimateSeries)> = Vec::new();
        for method in &methods {
            let dir = args.estimates.join(method).join(rep);
            match read_estimates(&dir) {
                Ok(Some(est)) => series.push((method.clone(), est)),
                Ok(None) => {
                    manifest.note(format!("{method}/{rep}: no estimate file, skipped"));
                }
                Err(err) => {
                    manifest.note(format!("{method}/{rep}: {err:#}"));
                }
            }
        }
        if series.is_empty() {
            continue;
        }

        // Joint exclusion: only time points where every method (and the
        // truth) has a value.
        let mut views: Vec<&EstimateSeries> = series.iter().map(|(_, s)| s).collect();
        let truth_series = EstimateSeries::new(
            truth_weeks.clone(),
            truth_rt.clone(),
            truth_rt.clone(),
            truth_rt.clone(),
        )?;
        views.push(&truth_series);
        let keep = common_time_points(&views);
        if keep.is_empty() {
            manifest.note(format!("{rep}: no common time points across methods"));
            continue;
        }
        let truth_common: Vec<f64> = keep
            .iter()
            .map(|w| truth_rt[truth_weeks.iter().position(|x| x == w).unwrap()])
            .collect();
        let truth_masv = masv(&truth_common);

        for (method, est) in &series {
            let est = est.restrict_to(&keep)?;
            rows.push(MetricsRow {
                method: method.clone(),
                scenario: args.scenario.clone(),
                replicate: rep.clone(),
                envelope: envelope(&est, &truth_common)?,
                mciw: mciw(&est),
                abs_dev: absolute_deviation(&est, &truth_common)?,
                masv: masv(&est.median),
                truth_masv,
            });
        }
    }

    if rows.is_empty() {
        bail!("no replicate produced scores");
    }

    let metrics_path = args.out.join("metrics.csv");
    let mut f = std::fs::File::create(&metrics_path)?;
    writeln!(f, "method,scenario,replicate,envelope,mciw,abs_dev,masv,truth_masv")?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            r.method, r.scenario, r.replicate, r.envelope, r.mciw, r.abs_dev, r.masv, r.truth_masv
        )?;
    }

    // Boxplot-ready summaries per method and metric.
    let mut boxplots: BTreeMap<String, BTreeMap<String, rt_estim::metrics::BoxplotSummary>> =
        BTreeMap::new();
    for method in rows.iter().map(|r| r.method.clone()).collect::<std::collections::BTreeSet<_>>() {
        let of = |get: fn(&MetricsRow) -> f64| -> Vec<f64> {
            rows.iter().filter(|r| r.method == method).map(get).collect()
        };
        let mut per_metric = BTreeMap::new();
        per_metric.insert("envelope".to_string(), summarize_replicates(&of(|r| r.envelope))?);
        per_metric.insert("mciw".to_string(), summarize_replicates(&of(|r| r.mciw))?);
        per_metric.insert("abs_dev".to_string(), summarize_replicates(&of(|r| r.abs_dev))?);
        per_metric.insert("masv".to_string(), summarize_replicates(&of(|r| r.masv))?);
        boxplots.insert(method, per_metric);
    }
    let boxplot_path = args.out.join("boxplot.json");
    write_json(&boxplot_path, &boxplots)?;

    manifest.record_output(&metrics_path);
    manifest.record_output(&boxplot_path);
    manifest.write(&args.out)?;
    println!("scored {} method-replicate pairs", rows.len());
    Ok(0)
}

fn sorted_dirs(path: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
    {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn read_truth(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut weeks = Vec::new();
    let mut rt = Vec::new();
    for record in rdr.records() {
        let record = record?;
        weeks.push(record[0].parse()?);
        rt.push(record[1].parse()?);
    }
    Ok((weeks, rt))
}

/// Read either a Bayesian fit (rt.csv) or a baseline run (estimates.csv).
fn read_estimates(dir: &Path) -> Result<Option<EstimateSeries>> {
    let rt = dir.join("rt.csv");
    let windows = dir.join("estimates.csv");
    let (path, week_col, med_col, lo_col, hi_col) = if rt.exists() {
        (rt, 0usize, 1usize, 2usize, 3usize)
    } else if windows.exists() {
        (windows, 0usize, 2usize, 3usize, 4usize)
    } else {
        return Ok(None);
    };
    let mut rdr = csv::Reader::from_path(&path)?;
    let mut t = Vec::new();
    let mut median = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for record in rdr.records() {
        let record = record?;
        t.push(record[week_col].parse()?);
        median.push(record[med_col].parse()?);
        // Wald intervals can cross zero; clamp for comparability with the
        // strictly positive quantity being estimated.
        let lo: f64 = record[lo_col].parse()?;
        let med: f64 = record[med_col].parse()?;
        lower.push(lo.min(med).max(0.0));
        upper.push(record[hi_col].parse()?);
    }
    Ok(Some(EstimateSeries::new(t, median, lower, upper)?))
}
