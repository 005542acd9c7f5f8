use std::fmt;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dgd_core::analysis::ClassifyOptions;
use dgd_core::dynamics::{Clock, Schedule};
use dgd_core::graph::Graph;
use dgd_core::integrator::IntegratorOptions;
use dgd_core::objective::{make_preset, ObjectiveSet, Preset, PresetSpec, DEFAULT_HETEROGENEITY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Simulate,
    Basins,
    #[serde(alias = "consensus")]
    ConsensusReport,
    Manifold,
    Probe,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Basins => "basins",
            ExperimentKind::ConsensusReport => "consensus_report",
            ExperimentKind::Manifold => "manifold",
            ExperimentKind::Probe => "probe",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Ring,
    Path,
    Complete,
    Star,
    /// Explicit 1-based `edges`.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub topology: Topology,
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<Vec<usize>>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        let g = match self.topology {
            Topology::Ring => Graph::ring(self.nodes),
            Topology::Path => Graph::path(self.nodes),
            Topology::Complete => Graph::complete(self.nodes),
            Topology::Star => Graph::star(self.nodes),
            Topology::Custom => {
                let mut edges = Vec::with_capacity(self.edges.len());
                for (i, e) in self.edges.iter().enumerate() {
                    match e[..] {
                        [a, b] => edges.push((a, b)),
                        _ => bail!("graph.edges[{i}]: an edge is a pair [i, j], got {} entries", e.len()),
                    }
                }
                let g = Graph::new(self.nodes, &edges).map_err(|e| anyhow!("graph.edges: {e}"))?;
                if !g.is_connected() {
                    bail!("graph.edges: the graph is not connected");
                }
                return Ok(g);
            }
        };
        if !self.edges.is_empty() {
            bail!("graph.edges: only allowed with topology = \"custom\"");
        }
        g.map_err(|e| anyhow!("graph.nodes: {e}"))
    }
}

/// Whether local objectives differ across agents. Only `quartic_saddle`
/// has a homogeneous variant; the random presets are always heterogeneous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Homogeneous,
    Heterogeneous,
}

fn default_dim() -> usize {
    2
}

fn default_heterogeneity() -> f64 {
    DEFAULT_HETEROGENEITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub preset: Preset,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub split: Split,
    /// Seed for random preset data; the scenario seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    pub horizon: f64,
    pub clock: Clock,
    /// Uniform initial state in `[−init_box, init_box]^{Nd}` unless `x0` is given.
    pub init_box: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            horizon: 1e3,
            clock: Clock::Original,
            init_box: 2.0,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasinsSpec {
    pub trials: usize,
    pub init_box: f64,
    pub horizon: f64,
    /// Half-width of the box searched for critical points.
    pub atlas_box: f64,
    pub atlas_seeds: usize,
    pub classify: ClassifyOptions,
}

impl Default for BasinsSpec {
    fn default() -> Self {
        Self {
            trials: 200,
            init_box: 2.0,
            horizon: 1e3,
            atlas_box: 3.0,
            atlas_seeds: 64,
            classify: ClassifyOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusSpec {
    pub horizon: f64,
    pub init_box: f64,
    /// Box half-width for the gradient bound `C` of the envelope.
    pub gradient_box: f64,
    pub gradient_grid: usize,
}

impl Default for ConsensusSpec {
    fn default() -> Self {
        Self {
            horizon: 1e3,
            init_box: 2.0,
            gradient_box: 10.0,
            gradient_grid: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManifoldSpec {
    pub saddle: Vec<f64>,
    pub t0: f64,
    pub horizon: f64,
    pub grid_points: usize,
    pub radius: f64,
    pub samples: usize,
    /// Horizon of the forward check from each chart point.
    pub check_horizon: f64,
    pub offset: f64,
}

impl Default for ManifoldSpec {
    fn default() -> Self {
        Self {
            saddle: vec![0.0, 0.0],
            t0: 10.0,
            horizon: 20.0,
            grid_points: 4001,
            radius: 0.1,
            samples: 5,
            check_horizon: 20.0,
            offset: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDirection {
    Unstable,
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub saddle: Vec<f64>,
    pub direction: ProbeDirection,
    pub horizon: f64,
    pub s_range: [f64; 2],
    pub tol_s: f64,
    /// Size of the seeded perturbation of the base point off the saddle,
    /// orthogonal to the unstable direction.
    pub base_offset: f64,
    pub offset: f64,
    pub delta: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            saddle: vec![0.0, 0.0],
            direction: ProbeDirection::Unstable,
            horizon: 1e3,
            s_range: [-0.5, 0.5],
            tol_s: dgd_core::manifold::TOL_S,
            base_offset: 0.02,
            offset: 1e-2,
            delta: dgd_core::manifold::DELTA_SADDLE,
        }
    }
}

fn default_output() -> String {
    "out".into()
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: String,
    pub graph: GraphSpec,
    pub objective: ObjectiveSpec,
    pub schedule: Schedule,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub basins: BasinsSpec,
    #[serde(default)]
    pub consensus: ConsensusSpec,
    #[serde(default)]
    pub manifold: ManifoldSpec,
    #[serde(default)]
    pub probe: ProbeSpec,
}

impl Scenario {
    /// Parses and validates; errors name the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| anyhow!("config: {e}"))?;
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow!("{path}: {}", e.into_inner().message())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.graph.build()?;
        self.schedule
            .validate()
            .map_err(|e| anyhow!("schedule: {e}"))?;
        self.integrator.validate().map_err(|e| anyhow!("integrator: {e}"))?;
        let obj = self.objectives_for(g.node_count())?;
        let m = obj.stacked_dim();
        if let Some(x0) = &self.simulate.x0 {
            if x0.len() != m {
                bail!("simulate.x0: length {} does not match N*d = {m}", x0.len());
            }
        }
        if self.manifold.saddle.len() != obj.dim() {
            bail!("manifold.saddle: length {} does not match d = {}", self.manifold.saddle.len(), obj.dim());
        }
        if self.probe.saddle.len() != obj.dim() {
            bail!("probe.saddle: length {} does not match d = {}", self.probe.saddle.len(), obj.dim());
        }
        if self.manifold.grid_points < 3 {
            bail!("manifold.grid_points: need at least 3");
        }
        if !(self.probe.s_range[0] < self.probe.s_range[1]) {
            bail!("probe.s_range: lower end must be below upper end");
        }
        Ok(())
    }

    pub fn graph(&self) -> Result<Arc<Graph>> {
        Ok(Arc::new(self.graph.build()?))
    }

    fn objectives_for(&self, agents: usize) -> Result<ObjectiveSet> {
        let o = &self.objective;
        let data_seed = o.seed.unwrap_or(self.seed);
        let seed = match (o.preset, o.split) {
            (Preset::QuarticSaddle, Split::Homogeneous) => None,
            _ => Some(data_seed),
        };
        let spec = PresetSpec {
            preset: o.preset,
            agents,
            dim: o.dim,
            seed,
            heterogeneity: o.heterogeneity,
        };
        make_preset(&spec).map_err(|e| anyhow!("objective.dim: {e}"))
    }

    pub fn objectives(&self) -> Result<Arc<ObjectiveSet>> {
        Ok(Arc::new(self.objectives_for(self.graph.nodes)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "simulate"
seed = 7

[graph]
topology = "ring"
nodes = 4

[objective]
preset = "quartic_saddle"

[schedule]
tau_alpha = 0.8
tau_beta = 0.3
"#;

    #[test]
    fn round_trip_is_identity() {
        let s = Scenario::from_toml(BASE).unwrap();
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.to_toml(), again.to_toml());
        assert_eq!(s.hash(), again.hash());
    }

    #[test]
    fn malformed_edges_named() {
        let text = BASE.replace("topology = \"ring\"", "topology = \"custom\"\nedges = [[1, 2], [3]]");
        let err = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("graph.edges"), "{err}");
        let text = BASE.replace("topology = \"ring\"", "topology = \"custom\"\nedges = [[1, 9]]");
        let err = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("graph.edges"), "{err}");
    }

    #[test]
    fn bad_schedule_and_unknown_fields() {
        let err = Scenario::from_toml(&BASE.replace("tau_beta = 0.3", "tau_beta = 0.9")).unwrap_err().to_string();
        assert!(err.starts_with("schedule"), "{err}");
        let err = Scenario::from_toml(&BASE.replace("nodes = 4", "nodes = 4\ncolour = 1")).unwrap_err().to_string();
        assert!(err.contains("graph"), "{err}");
        let err = Scenario::from_toml(&BASE.replace("[objective]", "[objective]\ndim = 3")).unwrap_err().to_string();
        assert!(err.starts_with("objective.dim"), "{err}");
    }
}
