//! Subcommand bodies. Each returns the text it would print.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use d2oc::density::{format_float, sample_points, SamplePointCloud};
use d2oc::metrics::{MetricsReport, W2Method};
use d2oc::sharing::SharingMethod;
use d2oc::sim::{run_with_cloud, Scenario};
use d2oc::transport::DEFAULT_EXACT_LIMIT;
use d2oc::Error;

use crate::artifacts::{load_run_dir, write_run_dir, Manifest, CLOUD};
use crate::config::{load_config, LoadedConfig};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.json";

/// Loads a config and applies command-line overrides.
pub fn prepare(
    config: &Path,
    seed: Option<u64>,
    method: Option<SharingMethod>,
) -> Result<(LoadedConfig, Scenario), CliError> {
    let mut loaded = load_config(config)?;
    if let Some(seed) = seed {
        loaded.file.sampling.seed = seed;
    }
    if let Some(method) = method {
        loaded.file.comm.method = method;
    }
    let scenario = loaded.file.scenario(&loaded.base_dir())?;
    Ok((loaded, scenario))
}

fn default_out(loaded: &LoadedConfig, out: Option<&Path>, fallback: &str) -> PathBuf {
    match (out, &loaded.file.output.dir) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) if d.is_absolute() => d.clone(),
        (None, Some(d)) => loaded.base_dir().join(d),
        (None, None) => PathBuf::from(fallback),
    }
}

fn draw_cloud(scenario: &Scenario) -> Result<SamplePointCloud, CliError> {
    Ok(sample_points(&scenario.density, scenario.samples, scenario.seed, &scenario.bounds)?)
}

pub fn cmd_validate(config: &Path) -> Result<String, CliError> {
    let (_, s) = prepare(config, None, None)?;
    Ok(format!(
        "ok: {} agents, N={}, seed={}, horizon={}, method={}",
        s.agents.len(),
        s.samples,
        s.seed,
        s.controller.horizon,
        s.method
    ))
}

pub fn cmd_sample(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<String, CliError> {
    let (loaded, scenario) = prepare(config, seed, None)?;
    let dir = default_out(&loaded, out, ".");
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let cloud = draw_cloud(&scenario)?;
    let path = dir.join(CLOUD);
    cloud.save_csv(&path)?;
    Ok(format!("N={} seed={} -> {}", cloud.len(), scenario.seed, path.display()))
}

pub fn cmd_run(
    config: &Path,
    out: Option<&Path>,
    seed: Option<u64>,
    method: Option<SharingMethod>,
) -> Result<(String, Manifest), CliError> {
    let (loaded, scenario) = prepare(config, seed, method)?;
    let dir = default_out(&loaded, out, "run");
    let cloud = draw_cloud(&scenario)?;
    let result = run_with_cloud(&scenario, cloud)?;
    let manifest = write_run_dir(&dir, &result, &loaded.sha256, &loaded.file.output.what)?;
    let text = format!(
        "{}: {} agents, {} ticks, {} ({}), transported {}, {} exchanges -> {}",
        manifest.scenario_id,
        manifest.agents,
        result.last_tick(),
        manifest.termination.as_str(),
        manifest.method,
        format_float(result.total_transported()),
        manifest.exchanges,
        dir.display()
    );
    Ok((text, manifest))
}

pub const BATCH_HEADER: [&str; 8] = [
    "scenario_id",
    "seed",
    "method",
    "terminal_steps",
    "w2",
    "w2_solver",
    "work_redundancy",
    "wall_time",
];

fn append_batch_row(path: &Path, report: &MetricsReport) -> Result<(), CliError> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(Error::from)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(BATCH_HEADER).map_err(Error::from)?;
    }
    let solver = match report.w2_method {
        W2Method::Exact { .. } => "exact",
        W2Method::Sinkhorn { .. } => "sinkhorn",
    };
    w.write_record([
        report.scenario_id.clone(),
        report.seed.to_string(),
        report.method.to_string(),
        report.terminal_steps.to_string(),
        format_float(report.w2),
        solver.to_string(),
        format_float(report.work_redundancy),
        format_float(report.wall_time),
    ])
    .map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Computes the report of one run directory against `cloud` (default: the
/// run's own cloud file), writes it as JSON and optionally appends a batch row.
pub fn cmd_metrics(
    run: &Path,
    cloud: Option<&Path>,
    exact_limit: Option<usize>,
    out: Option<&Path>,
    batch: Option<&Path>,
) -> Result<(String, MetricsReport), CliError> {
    let loaded = load_run_dir(run)?;
    let reference = match cloud {
        Some(p) => SamplePointCloud::load_csv(p)?,
        None => loaded.result.cloud.clone(),
    };
    let report = MetricsReport::from_result(&loaded.result, &reference, exact_limit.unwrap_or(DEFAULT_EXACT_LIMIT))?;
    let dir = out.unwrap_or(run);
    fs::create_dir_all(dir).map_err(Error::from)?;
    let path = dir.join(METRICS_FILE);
    let mut f = fs::File::create(&path).map_err(Error::from)?;
    serde_json::to_writer_pretty(&mut f, &report).map_err(|e| CliError::Config(e.to_string()))?;
    f.write_all(b"\n").map_err(Error::from)?;
    if let Some(b) = batch {
        append_batch_row(b, &report)?;
    }
    let text = format!(
        "{} seed={} method={}: w2={} redundancy={}% -> {}",
        report.scenario_id,
        report.seed,
        report.method,
        format_float(report.w2),
        format_float(report.work_redundancy),
        path.display()
    );
    Ok((text, report))
}
