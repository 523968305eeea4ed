//! Scenario configuration files.

use std::fs;
use std::path::{Path, PathBuf};

use d2oc::controller::ControllerConfig;
use d2oc::density::{load_density_grid, Bounds, DensitySpec, GaussianComponent};
use d2oc::dynamics::ModelKind;
use d2oc::sharing::SharingMethod;
use d2oc::sim::{AgentSpec, Scenario, Termination};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Stream of the seeded generator that draws random initial positions; the
/// sample cloud uses the default stream of the same seed.
pub const INITIAL_STATE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default = "default_id")]
    pub id: String,
    pub domain: Bounds,
    pub density: DensityConfig,
    pub sampling: SamplingConfig,
    pub agents: Vec<AgentConfig>,
    pub dt: f64,
    pub horizon: usize,
    pub penalties: Penalties,
    #[serde(default)]
    pub u_max: Option<f64>,
    pub comm: CommConfig,
    #[serde(default)]
    pub termination: Termination,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_id() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityConfig {
    GaussianMixture { components: Vec<GaussianComponent> },
    Grid { rows: usize, cols: usize, values: Vec<f64> },
    /// Grid text file, relative paths resolved against the config file.
    GridFile { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    SingleIntegrator,
    PlanarQuadrotor,
    Unicycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub gravity: Option<f64>,
    pub ixx: Option<f64>,
    pub iyy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Random(RandomTag),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomTag {
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub model: ModelName,
    #[serde(default)]
    pub params: ModelParams,
    pub x0: InitialState,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Penalties {
    #[serde(rename = "Q_diag")]
    pub q_diag: Vec<f64>,
    #[serde(rename = "R_diag")]
    pub r_diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommConfig {
    pub r_comm: f64,
    pub method: SharingMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Artifact {
    Trajectories,
    Ledger,
    Plans,
    Snapshot,
    Cloud,
}

impl Artifact {
    pub const ALL: [Artifact; 5] = [
        Artifact::Trajectories,
        Artifact::Ledger,
        Artifact::Plans,
        Artifact::Snapshot,
        Artifact::Cloud,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "all_artifacts")]
    pub what: Vec<Artifact>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            what: all_artifacts(),
        }
    }
}

fn all_artifacts() -> Vec<Artifact> {
    Artifact::ALL.to_vec()
}

/// A parsed config with the raw bytes it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub file: ConfigFile,
    pub path: PathBuf,
    pub sha256: String,
}

/// Renders a deserialization path as a JSON pointer.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn parse_config(text: &str, path: &Path) -> Result<ConfigFile, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = json_pointer(e.path());
        let inner = e.into_inner();
        CliError::Config(format!(
            "{}:{}:{}: at {pointer}: {inner}",
            path.display(),
            inner.line(),
            inner.column()
        ))
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|e| CliError::Config(format!("{}: not UTF-8: {e}", path.display())))?;
    let file = parse_config(&text, path)?;
    Ok(LoadedConfig {
        file,
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

impl ConfigFile {
    pub fn density_spec(&self, base: &Path) -> Result<DensitySpec, CliError> {
        let spec = match &self.density {
            DensityConfig::GaussianMixture { components } => {
                DensitySpec::mixture(self.domain, components.clone())?
            }
            DensityConfig::Grid { rows, cols, values } => {
                DensitySpec::grid(self.domain, *rows, *cols, values.clone())?
            }
            DensityConfig::GridFile { path } => {
                let full = if path.is_absolute() { path.clone() } else { base.join(path) };
                load_density_grid(&full)?
            }
        };
        Ok(spec)
    }

    fn model_kind(&self, agent: &AgentConfig) -> Result<ModelKind, CliError> {
        let p = agent.params;
        let reject = |name: &str| {
            CliError::Config(format!("model {:?} takes no parameter {name}", agent.model))
        };
        let kind = match agent.model {
            ModelName::SingleIntegrator | ModelName::Unicycle => {
                if p.gravity.is_some() {
                    return Err(reject("gravity"));
                }
                if p.ixx.is_some() {
                    return Err(reject("ixx"));
                }
                if p.iyy.is_some() {
                    return Err(reject("iyy"));
                }
                if agent.model == ModelName::Unicycle {
                    ModelKind::Unicycle { dt: self.dt }
                } else {
                    ModelKind::SingleIntegrator { dt: self.dt }
                }
            }
            ModelName::PlanarQuadrotor => ModelKind::PlanarQuadrotor {
                gravity: p.gravity.unwrap_or(9.81),
                ixx: p.ixx.unwrap_or(0.0075),
                iyy: p.iyy.unwrap_or(0.0075),
                dt: self.dt,
            },
        };
        Ok(kind)
    }

    /// Builds the validated scenario. Random initial states place the output
    /// uniformly in the domain with every other state at zero.
    pub fn scenario(&self, base: &Path) -> Result<Scenario, CliError> {
        let density = self.density_spec(base)?;
        let controller = ControllerConfig::from_diagonals(
            &self.penalties.q_diag,
            &self.penalties.r_diag,
            self.horizon,
            self.u_max,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.sampling.seed);
        rng.set_stream(INITIAL_STATE_STREAM);
        let mut agents = Vec::with_capacity(self.agents.len());
        for agent in &self.agents {
            let model = self.model_kind(agent)?;
            let x0 = match &agent.x0 {
                InitialState::Explicit(v) => v.clone(),
                InitialState::Random(_) => {
                    let b = &self.domain;
                    let mut x = vec![0.0; model.state_dim()];
                    let (ix, iy) = model.position_indices();
                    x[ix] = rng.gen_range(b.xmin..=b.xmax);
                    x[iy] = rng.gen_range(b.ymin..=b.ymax);
                    x
                }
            };
            agents.push(AgentSpec {
                model,
                x0,
                steps: agent.steps,
            });
        }
        let scenario = Scenario {
            id: self.id.clone(),
            bounds: self.domain,
            density,
            samples: self.sampling.n,
            seed: self.sampling.seed,
            agents,
            dt: self.dt,
            controller,
            r_comm: self.comm.r_comm,
            method: self.comm.method,
            termination: self.termination,
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

impl LoadedConfig {
    pub fn base_dir(&self) -> PathBuf {
        self.path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }
}
