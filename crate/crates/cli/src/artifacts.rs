//! Run directories: writers and loaders for every emitted file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use d2oc::density::{format_float, SamplePointCloud};
use d2oc::sharing::{CoverageLedger, SharingMethod};
use d2oc::sim::{LedgerRecord, PlanRecord, SimResult, TerminationReason, TrajectoryRow};
use d2oc::Error;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::config::Artifact;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const LEDGER: &str = "ledger.csv";
pub const PLANS: &str = "plans.csv";
pub const SNAPSHOT: &str = "ledger_snapshot.csv";
pub const FINAL_BETA: &str = "ledger_beta.csv";
pub const CLOUD: &str = "cloud.csv";

pub fn trajectory_file(agent: usize) -> String {
    format!("traj_agent{agent}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario_id: String,
    pub config_sha256: String,
    pub seed: u64,
    pub method: SharingMethod,
    pub termination: TerminationReason,
    pub alpha: f64,
    pub dt: f64,
    pub agents: usize,
    pub step_budgets: Vec<usize>,
    pub state_dims: Vec<usize>,
    pub exchanges: usize,
    pub ledger_owners: Vec<usize>,
    pub share_counts: Vec<usize>,
    /// Seconds spent in the simulation loop; file output is not included.
    pub wall_time: f64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(csv::Reader::from_reader(BufReader::new(file)))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T, CliError> {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    rec.get(i)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| CliError::Config(format!("{}:{line}: bad value in column {}", path.display(), i + 1)))
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow], state_dim: usize) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((0..state_dim).map(|i| format!("s{i}")));
    header.push("px".into());
    header.push("py".into());
    w.write_record(&header).map_err(Error::from)?;
    for row in rows {
        let mut rec = vec![row.k.to_string(), format_float(row.t)];
        rec.extend(row.state.iter().map(|&v| format_float(v)));
        rec.push(format_float(row.position.x));
        rec.push(format_float(row.position.y));
        w.write_record(&rec).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, CliError> {
    let mut r = csv_reader(path)?;
    let width = r.headers().map_err(Error::from)?.len();
    if width < 4 {
        return Err(CliError::Config(format!("{}: trajectory needs k,t,state...,px,py", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(Error::from)?;
        let state = (2..width - 2).map(|i| field(&rec, i, path)).collect::<Result<Vec<f64>, _>>()?;
        out.push(TrajectoryRow {
            k: field(&rec, 0, path)?,
            t: field(&rec, 1, path)?,
            state,
            position: Vector2::new(field(&rec, width - 2, path)?, field(&rec, width - 1, path)?),
        });
    }
    Ok(out)
}

pub fn write_ledger_series(path: &Path, series: &[LedgerRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "agent", "remaining"]).map_err(Error::from)?;
    for rec in series {
        w.write_record([rec.k.to_string(), rec.agent.to_string(), format_float(rec.remaining)])
            .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

pub fn read_ledger_series(path: &Path) -> Result<Vec<LedgerRecord>, CliError> {
    let mut r = csv_reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(Error::from)?;
        out.push(LedgerRecord {
            k: field(&rec, 0, path)?,
            agent: field(&rec, 1, path)?,
            remaining: field(&rec, 2, path)?,
        });
    }
    Ok(out)
}

pub fn write_plans(path: &Path, plans: &[PlanRecord]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "agent", "sample_index", "gamma"]).map_err(Error::from)?;
    for plan in plans {
        for &(j, g) in &plan.entries {
            w.write_record([plan.k.to_string(), plan.agent.to_string(), j.to_string(), format_float(g)])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// `(sample_index, γ)` entries keyed by `(k, agent)`.
pub type PlanEntries = BTreeMap<(usize, usize), Vec<(usize, f64)>>;

/// Reads plan entries keyed by `(k, agent)` in file order.
pub fn read_plan_entries(path: &Path) -> Result<PlanEntries, CliError> {
    let mut r = csv_reader(path)?;
    let mut out = PlanEntries::new();
    for rec in r.records() {
        let rec = rec.map_err(Error::from)?;
        let key = (field(&rec, 0, path)?, field(&rec, 1, path)?);
        out.entry(key).or_default().push((field(&rec, 2, path)?, field(&rec, 3, path)?));
    }
    Ok(out)
}

pub fn write_final_beta(path: &Path, ledgers: &[CoverageLedger<f64>]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["agent", "sample_index", "beta"]).map_err(Error::from)?;
    for led in ledgers {
        for (j, &b) in led.beta().iter().enumerate() {
            w.write_record([led.owner().to_string(), j.to_string(), format_float(b)])
                .map_err(Error::from)?;
        }
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Writes the selected artifacts of `result` into `dir` and returns the
/// manifest, which is written last.
pub fn write_run_dir(
    dir: &Path,
    result: &SimResult,
    config_sha256: &str,
    what: &[Artifact],
) -> Result<Manifest, CliError> {
    fs::create_dir_all(dir).map_err(Error::from)?;
    let mut files = Vec::new();
    let state_dims: Vec<usize> = result
        .trajectories
        .iter()
        .map(|t| t.first().map_or(0, |r| r.state.len()))
        .collect();
    let mut emit = |name: String| {
        files.push(name.clone());
        dir.join(name)
    };
    for artifact in Artifact::ALL {
        if !what.contains(&artifact) {
            continue;
        }
        match artifact {
            Artifact::Trajectories => {
                for (r, rows) in result.trajectories.iter().enumerate() {
                    write_trajectory(&emit(trajectory_file(r)), rows, state_dims[r])?;
                }
            }
            Artifact::Ledger => write_ledger_series(&emit(LEDGER.into()), &result.ledger_series)?,
            Artifact::Plans => write_plans(&emit(PLANS.into()), &result.plans)?,
            Artifact::Snapshot => {
                let mut w = create(&emit(SNAPSHOT.into()))?;
                CoverageLedger::write_snapshot(&result.final_ledgers, &mut w)?;
                w.flush().map_err(Error::from)?;
                write_final_beta(&emit(FINAL_BETA.into()), &result.final_ledgers)?;
            }
            Artifact::Cloud => result.cloud.save_csv(&emit(CLOUD.into()))?,
        }
    }
    let manifest = Manifest {
        scenario_id: result.scenario_id.clone(),
        config_sha256: config_sha256.to_string(),
        seed: result.seed,
        method: result.method,
        termination: result.termination,
        alpha: result.alpha,
        dt: result.dt,
        agents: result.agents(),
        step_budgets: result.step_budgets.clone(),
        state_dims,
        exchanges: result.exchanges,
        ledger_owners: result.final_ledgers.iter().map(|l| l.owner()).collect(),
        share_counts: result.final_ledgers.iter().map(|l| l.share_count()).collect(),
        wall_time: result.wall_time,
        files,
    };
    let mut w = create(&dir.join(MANIFEST))?;
    serde_json::to_writer_pretty(&mut w, &manifest).map_err(|e| CliError::Config(e.to_string()))?;
    w.write_all(b"\n").map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    Ok(manifest)
}

/// A run directory read back into memory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub result: SimResult,
}

fn require(manifest: &Manifest, dir: &Path, name: &str) -> Result<PathBuf, CliError> {
    if manifest.files.iter().any(|f| f == name) {
        Ok(dir.join(name))
    } else {
        Err(CliError::Config(format!("{}: run has no {name}", dir.display())))
    }
}

/// Reads everything listed in the manifest. The cloud file is always needed;
/// other artifacts that were not written load as empty.
pub fn load_run_dir(dir: &Path) -> Result<RunDir, CliError> {
    let manifest = Manifest::load(dir)?;
    let has = |name: &str| manifest.files.iter().any(|f| f == name);
    let cloud = SamplePointCloud::load_csv(&require(&manifest, dir, CLOUD)?)?;
    let n = cloud.len();
    let l = manifest.agents;

    let mut trajectories = Vec::with_capacity(l);
    for r in 0..l {
        let name = trajectory_file(r);
        trajectories.push(if has(&name) { read_trajectory(&dir.join(&name))? } else { Vec::new() });
    }

    // Every trajectory row after the first came with one plan, in tick-major
    // then agent order.
    let mut entries = if has(PLANS) { read_plan_entries(&dir.join(PLANS))? } else { BTreeMap::new() };
    let mut steps: Vec<(usize, usize)> = trajectories
        .iter()
        .enumerate()
        .flat_map(|(r, rows)| rows.iter().skip(1).map(move |row| (row.k, r)))
        .collect();
    steps.sort_unstable();
    let plans: Vec<PlanRecord> = steps
        .into_iter()
        .map(|(k, agent)| PlanRecord {
            k,
            agent,
            entries: entries.remove(&(k, agent)).unwrap_or_default(),
        })
        .collect();
    if let Some(((k, agent), _)) = entries.into_iter().next() {
        return Err(CliError::Config(format!(
            "{}: plan for agent {agent} at tick {k} has no trajectory row",
            dir.display()
        )));
    }

    let ledger_series = if has(LEDGER) { read_ledger_series(&dir.join(LEDGER))? } else { Vec::new() };

    let mut final_ledgers = Vec::new();
    if has(SNAPSHOT) && has(FINAL_BETA) {
        let mut beta: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let path = dir.join(FINAL_BETA);
        let mut r = csv_reader(&path)?;
        for rec in r.records() {
            let rec = rec.map_err(Error::from)?;
            let owner: usize = field(&rec, 0, &path)?;
            let j: usize = field(&rec, 1, &path)?;
            let b: f64 = field(&rec, 2, &path)?;
            let row = beta.entry(owner).or_insert_with(|| vec![f64::NAN; n]);
            if j >= n {
                return Err(CliError::Config(format!("{}: sample index {j} out of range", path.display())));
            }
            row[j] = b;
        }
        let mut progress: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let snap = File::open(dir.join(SNAPSHOT)).map_err(Error::from)?;
        for (owner, row, j, g) in CoverageLedger::<f64>::read_snapshot(BufReader::new(snap))? {
            if row >= l || j >= n {
                return Err(CliError::Config(format!("{}: snapshot entry out of range", dir.display())));
            }
            progress.entry(owner).or_insert_with(|| vec![0.0; l * n])[row * n + j] = g;
        }
        for (idx, &owner) in manifest.ledger_owners.iter().enumerate() {
            let b = beta
                .remove(&owner)
                .ok_or_else(|| CliError::Config(format!("{}: no weights for ledger {owner}", dir.display())))?;
            let p = progress.remove(&owner).unwrap_or_else(|| vec![0.0; l * n]);
            let shares = manifest.share_counts.get(idx).copied().unwrap_or(0);
            final_ledgers.push(CoverageLedger::from_parts(owner, l, cloud.weights.clone(), b, p, shares)?);
        }
    }

    let result = SimResult {
        scenario_id: manifest.scenario_id.clone(),
        seed: manifest.seed,
        method: manifest.method,
        alpha: manifest.alpha,
        dt: manifest.dt,
        step_budgets: manifest.step_budgets.clone(),
        cloud,
        trajectories,
        plans,
        ledger_series,
        final_ledgers,
        exchanges: manifest.exchanges,
        termination: manifest.termination,
        wall_time: manifest.wall_time,
    };
    Ok(RunDir {
        dir: dir.to_path_buf(),
        manifest,
        result,
    })
}
