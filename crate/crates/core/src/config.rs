//! Experiment configuration in TOML. Every section is optional and falls back
//! to the reference setup; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, UNLINKED_KAPPA};
use crate::ddpg::TrainConfig;
use crate::dkf::Topology;
use crate::env::CostWeights;
use crate::error::{dim_mismatch, Error, Result};
use crate::hotroll::{build_system, HotRollParams};
use crate::linsys::LtiSystem;
use crate::matio::read_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlantModel {
    #[default]
    Hotroll,
    /// Matrices read from the `[plant_files]` section.
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    pub model: PlantModel,
}

/// Plain-text matrices for a custom plant. Relative paths resolve against
/// the configuration file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantFiles {
    pub a: PathBuf,
    pub g: PathBuf,
    pub q: PathBuf,
    pub gamma0: PathBuf,
    pub observation_noise: Vec<f64>,
    pub x0_mean: Vec<f64>,
    /// Per-slot input subtracted from `A x`, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    #[default]
    Complete,
    Ring,
    Isolated,
    /// Undirected edges from `network.edges`.
    Edges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub ecus: usize,
    pub topology: TopologyKind,
    pub edges: Vec<[usize; 2]>,
    /// One channel constant per ECU, shared by all its sensors.
    pub kappa: Vec<f64>,
    /// Full ECU x sensor channel constants; overrides `kappa` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_matrix: Option<Vec<Vec<f64>>>,
    /// `[ecu, sensor]` pairs without a usable link.
    pub unlinked: Vec<[usize; 2]>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            ecus: 2,
            topology: TopologyKind::Complete,
            edges: Vec::new(),
            kappa: vec![0.3, 0.4],
            kappa_matrix: None,
            unlinked: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservabilityConfig {
    pub p0: f64,
    pub window: usize,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        Self { p0: 0.95, window: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub repetitions: usize,
    /// Slots per evaluation run; the plant's own horizon when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Window length of the posterior observability check.
    pub check_window: usize,
    /// Check every window start instead of disjoint windows.
    pub sliding_windows: bool,
    /// Whether the alternating baseline starts at the maximum.
    pub psm_start_high: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            repetitions: 100,
            horizon: None,
            check_window: 10,
            sliding_windows: false,
            psm_start_high: true,
        }
    }
}

/// Grids of the sweep commands. Power weights are given as multiples of `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub fig5_beta_ratios: Vec<f64>,
    pub table1_windows: Vec<usize>,
    pub table1_beta_ratios: Vec<f64>,
    pub fig6_windows: Vec<usize>,
    pub fig6_p0: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fig5_beta_ratios: vec![0.0, 0.1, 1.0, 10.0],
            table1_windows: vec![5, 10],
            table1_beta_ratios: vec![0.0, 0.1, 1.0, 10.0, 100.0],
            fig6_windows: vec![3, 5, 10, 15, 20],
            fig6_p0: vec![0.5, 0.9, 0.95, 0.99, 0.999, 0.9999, 0.999999],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub hotroll: HotRollParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plant_files: Option<PlantFiles>,
    pub network: NetworkConfig,
    pub cost: CostConfig,
    pub observability: ObservabilityConfig,
    pub training: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub sweeps: SweepConfig,
    /// Directory for resolving relative paths; not part of the file format.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A plant ready for simulation.
#[derive(Debug, Clone)]
pub struct Plant {
    pub system: LtiSystem,
    pub input: Option<DVector<f64>>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.plant.model == PlantModel::Files && self.plant_files.is_none() {
            return Err(Error::MissingSection {
                section: "plant_files".into(),
                by: "plant.model = \"files\"".into(),
            });
        }
        if self.plant.model == PlantModel::Hotroll {
            self.hotroll.validate()?;
        }
        if self.network.ecus == 0 {
            return bad("network.ecus must be positive".into());
        }
        if self.network.topology != TopologyKind::Edges && !self.network.edges.is_empty() {
            return bad("network.edges is only used with topology = \"edges\"".into());
        }
        if self.network.kappa_matrix.is_none() && self.network.kappa.len() != self.network.ecus {
            return bad(format!(
                "network.kappa has {} entries for {} ECUs",
                self.network.kappa.len(),
                self.network.ecus
            ));
        }
        CostWeights::new(self.cost.alpha, self.cost.beta)?;
        if !(self.observability.p0 > 0.0 && self.observability.p0 <= 1.0) {
            return bad(format!("observability.p0 must lie in (0, 1], got {}", self.observability.p0));
        }
        if self.observability.window == 0 {
            return bad("observability.window must be positive".into());
        }
        self.training.validate()?;
        if self.evaluation.repetitions == 0 {
            return bad("evaluation.repetitions must be at least 1".into());
        }
        if self.evaluation.check_window == 0 || self.evaluation.horizon == Some(0) {
            return bad("evaluation windows and horizon must be positive".into());
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.evaluation.horizon.unwrap_or(self.hotroll.t_slots)
    }

    pub fn weights(&self) -> Result<CostWeights> {
        CostWeights::new(self.cost.alpha, self.cost.beta)
    }

    /// Weights with the power weight replaced by `ratio * alpha`.
    pub fn weights_with_ratio(&self, ratio: f64) -> Result<CostWeights> {
        CostWeights::new(self.cost.alpha, ratio * self.cost.alpha)
    }

    pub fn topology(&self) -> Result<Topology> {
        let m = self.network.ecus;
        Ok(match self.network.topology {
            TopologyKind::Complete => Topology::complete(m),
            TopologyKind::Ring => Topology::ring(m),
            TopologyKind::Isolated => Topology::isolated(m),
            TopologyKind::Edges => {
                let edges: Vec<(usize, usize)> = self.network.edges.iter().map(|e| (e[0], e[1])).collect();
                Topology::from_edges(m, &edges)?
            }
        })
    }

    pub fn channel(&self, sensors: usize) -> Result<ChannelParams> {
        let mut ch = match &self.network.kappa_matrix {
            Some(rows) => {
                if rows.len() != self.network.ecus || rows.iter().any(|r| r.len() != sensors) {
                    return Err(dim_mismatch(
                        "network.kappa_matrix",
                        format!("{}x{sensors}", self.network.ecus),
                        format!("{} rows", rows.len()),
                    ));
                }
                ChannelParams::new(DMatrix::from_fn(rows.len(), sensors, |i, j| rows[i][j]))?
            }
            None => ChannelParams::per_ecu(&self.network.kappa, sensors)?,
        };
        for &[e, s] in &self.network.unlinked {
            if e >= ch.ecus() || s >= ch.sensors() {
                return Err(Error::InvalidConfig(format!("network.unlinked pair [{e}, {s}] out of range")));
            }
            ch.set(e, s, UNLINKED_KAPPA)?;
        }
        Ok(ch)
    }

    pub fn plant(&self) -> Result<Plant> {
        match self.plant.model {
            PlantModel::Hotroll => {
                let p = build_system(&self.hotroll)?;
                Ok(Plant {
                    system: p.system,
                    input: Some(p.input),
                })
            }
            PlantModel::Files => {
                let f = self.plant_files.as_ref().ok_or_else(|| Error::MissingSection {
                    section: "plant_files".into(),
                    by: "plant.model = \"files\"".into(),
                })?;
                let path = |p: &Path| self.base_dir.join(p);
                let system = LtiSystem::new(
                    read_matrix(path(&f.a))?,
                    read_matrix(path(&f.g))?,
                    read_matrix(path(&f.q))?,
                    f.observation_noise.clone(),
                    DVector::from_vec(f.x0_mean.clone()),
                    read_matrix(path(&f.gamma0))?,
                )?;
                let input = match &f.input {
                    Some(u) if u.len() != system.state_dim() => {
                        return Err(dim_mismatch("plant_files.input", system.state_dim(), u.len()))
                    }
                    Some(u) => Some(DVector::from_vec(u.clone())),
                    None => None,
                };
                Ok(Plant { system, input })
            }
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::parse(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_setup() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.network.ecus, 2);
        assert_eq!(cfg.network.kappa, vec![0.3, 0.4]);
        assert_eq!(cfg.observability.p0, 0.95);
        assert_eq!(cfg.observability.window, 10);
        assert_eq!((cfg.cost.alpha, cfg.cost.beta), (0.1, 0.1));
        assert_eq!(cfg.hotroll.sensors, 10);
        assert_eq!(cfg.training.hidden, 1024);
        assert_eq!(cfg.evaluation.repetitions, 100);
        assert_eq!(cfg.horizon(), 1000);
        let plant = cfg.plant().unwrap();
        assert_eq!(plant.system.state_dim(), 30);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("[cost]\nalpha = 0.1\ngamma = 2\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(ExperimentConfig::parse("[nonsense]\n").is_err());
    }

    #[test]
    fn missing_referenced_section() {
        let err = ExperimentConfig::parse("[plant]\nmodel = \"files\"\n").unwrap_err();
        assert!(matches!(err, Error::MissingSection { ref section, .. } if section == "plant_files"));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.hotroll.tau_s = 6;
        cfg.hotroll.sensors = 6;
        cfg.network.unlinked = vec![[1, 4]];
        cfg.network.kappa_matrix = Some(vec![vec![0.3; 6], vec![0.45; 6]]);
        cfg.evaluation.horizon = Some(250);
        cfg.training.lr_actor = 3.3e-5;
        cfg.sweeps.fig6_p0 = vec![0.1, 0.123456789012345];
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), cfg);
        let default_text = ExperimentConfig::default().to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse(&default_text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_and_validation() {
        let cfg = ExperimentConfig::parse("[hotroll]\nnu = 4\n[network]\nunlinked = [[0, 2]]\n").unwrap();
        assert_eq!(cfg.plant().unwrap().system.state_dim(), 40);
        let ch = cfg.channel(10).unwrap();
        assert_eq!(ch.kappa()[(0, 2)], UNLINKED_KAPPA);
        assert!(ExperimentConfig::parse("[evaluation]\nrepetitions = 0\n").is_err());
        assert!(ExperimentConfig::parse("[network]\nkappa = [0.3]\n").is_err());
        assert!(ExperimentConfig::parse("[cost]\nalpha = 0.0\nbeta = 0.0\n").is_err());
    }

    #[test]
    fn file_plant() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, m: DMatrix<f64>| crate::matio::write_matrix(dir.path().join(name), &m).unwrap();
        write("a.txt", DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]));
        write("g.txt", DMatrix::identity(2, 2));
        write("q.txt", DMatrix::identity(2, 2) * 0.1);
        write("p.txt", DMatrix::identity(2, 2));
        let text = "[plant]\nmodel = \"files\"\n[plant_files]\na = \"a.txt\"\ng = \"g.txt\"\nq = \"q.txt\"\ngamma0 = \"p.txt\"\nobservation_noise = [0.01, 0.01]\nx0_mean = [0.0, 0.0]\n[network]\nkappa = [0.3, 0.4]\n";
        let path = dir.path().join("cfg.toml");
        fs::write(&path, text).unwrap();
        let cfg = load_config(&path).unwrap();
        let plant = cfg.plant().unwrap();
        assert_eq!(plant.system.state_dim(), 2);
        assert!(plant.input.is_none());
    }
}
