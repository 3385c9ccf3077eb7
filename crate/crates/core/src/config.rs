//! Run configuration: one JSON document, unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::class::{ClassSet, ClassTag};
use crate::error::{Error, Result};
use crate::geometry::{DetectorAnnulus, VoxelGrid};
use crate::infer::{BackgroundModel, ReconConfig};
use crate::phantom::Phantom;
use crate::physics::PhysicsParams;
use crate::simulate::{DetectionParams, Simulator};
use crate::sysmodel::KernelParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub grid: VoxelGrid,
    pub detector: DetectorAnnulus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Decays drawn from the phantom by `simulate`.
    pub n_decays: u64,
    /// Decays per voxel (`M`) for sensitivity maps.
    pub emissions_per_voxel: u64,
    pub detection: DetectionParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_decays: 100_000,
            emissions_per_voxel: 10_000,
            detection: DetectionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructionConfig {
    pub iterations: usize,
    pub classes: ClassSet,
    /// Constant background per class; missing classes get 0.
    pub epsilon: BTreeMap<ClassTag, f64>,
    pub tolerance: f64,
    pub early_stop: bool,
    pub initial_value: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        let r = ReconConfig::default();
        ReconstructionConfig {
            iterations: r.iterations,
            classes: r.classes,
            epsilon: BTreeMap::new(),
            tolerance: r.tolerance,
            early_stop: r.early_stop,
            initial_value: r.initial_value,
        }
    }
}

impl ReconstructionConfig {
    pub fn recon(&self) -> ReconConfig {
        ReconConfig {
            iterations: self.iterations,
            classes: self.classes,
            tolerance: self.tolerance,
            early_stop: self.early_stop,
            initial_value: self.initial_value,
        }
    }

    pub fn background(&self) -> BackgroundModel {
        let mut b = BackgroundModel::default();
        for (k, e) in &self.epsilon {
            b.per_class[k.index()] = *e;
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisherConfig {
    pub n_mc_events: usize,
    pub classes: ClassSet,
    /// Allow dense matrices above the default voxel limit.
    pub allow_large: bool,
}

impl Default for FisherConfig {
    fn default() -> Self {
        FisherConfig {
            n_mc_events: 10_000,
            classes: ClassSet::all(),
            allow_large: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub events: Option<PathBuf>,
    pub sensitivity: Option<PathBuf>,
    pub image: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Everything a subcommand needs besides its input files. The seed is
/// mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub physics: PhysicsParams,
    #[serde(default)]
    pub kernel: KernelParams,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub reconstruction: ReconstructionConfig,
    #[serde(default)]
    pub fisher: FisherConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<Phantom>,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            geometry: GeometryConfig::default(),
            physics: PhysicsParams::default(),
            kernel: KernelParams::default(),
            simulation: SimulationConfig::default(),
            reconstruction: ReconstructionConfig::default(),
            fisher: FisherConfig::default(),
            phantom: None,
            paths: PathsConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.grid.validate()?;
        self.geometry.detector.validate()?;
        self.geometry.detector.check_fits(&self.geometry.grid)?;
        self.physics.validate()?;
        self.kernel.validate()?;
        self.simulator()?;
        if self.reconstruction.classes.is_empty() || self.fisher.classes.is_empty() {
            return Err(Error::EmptySubset);
        }
        if self.reconstruction.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        self.reconstruction.background().validate()?;
        if self.fisher.n_mc_events == 0 {
            return Err(Error::InvalidParameter("n_mc_events must be at least 1".into()));
        }
        Ok(())
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.geometry.detector, self.physics, self.simulation.detection)
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serialises")
    }
}
