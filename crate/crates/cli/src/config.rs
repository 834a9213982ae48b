use std::path::{Path, PathBuf};

use hybrid_st::experiments::{spatiotemporal_hybrid, temporal_hybrid, IntervalBasis, MeshOptions};
use hybrid_st::forest::ForestConfig;
use hybrid_st::hybrid::HybridConfig;
use hybrid_st::sim::{SpatioTemporalConfig, TemporalJumpsConfig};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    Spatiotemporal,
    TemporalJumps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub study: Study,
    pub seed: u64,
    pub spatiotemporal: SpatioTemporalConfig,
    pub temporal_jumps: TemporalJumpsConfig,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            study: Study::Spatiotemporal,
            seed: 1,
            spatiotemporal: SpatioTemporalConfig::default(),
            temporal_jumps: TemporalJumpsConfig::default(),
        }
    }
}

/// The effect structure is fixed per study; only the mesh is tunable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub mesh: MeshOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    /// Contiguous groups of time points.
    pub time_groups: usize,
    /// k-means clusters within each time group.
    pub spatial_clusters: usize,
}

impl Default for CvSection {
    fn default() -> Self {
        Self { time_groups: 2, spatial_clusters: 3 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Distribution behind the CP and AIW intervals.
    pub interval: IntervalBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub simulation: SimulationSection,
    pub model: ModelSection,
    /// `None` selects the preset of the study.
    pub hybrid: Option<HybridConfig>,
    /// `rf.seed` is replaced by the sub-seed derived from the top-level seed.
    pub rf: ForestConfig,
    pub cv: CvSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            simulation: SimulationSection::default(),
            model: ModelSection::default(),
            hybrid: None,
            rf: ForestConfig::default(),
            cv: CvSection::default(),
            metrics: MetricsSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.rf.n_trees == 0 {
            return Err("rf.n_trees must be at least 1".into());
        }
        if self.cv.time_groups == 0 || self.cv.spatial_clusters == 0 {
            return Err("cv.time_groups and cv.spatial_clusters must be positive".into());
        }
        if let Some(h) = &self.hybrid {
            h.validate().map_err(|e| format!("hybrid: {e}"))?;
        }
        Ok(())
    }

    pub fn hybrid_for(&self, study: Study) -> HybridConfig {
        match (&self.hybrid, study) {
            (Some(h), _) => h.clone(),
            (None, Study::Spatiotemporal) => spatiotemporal_hybrid(false),
            (None, Study::TemporalJumps) => temporal_hybrid(),
        }
    }
}
