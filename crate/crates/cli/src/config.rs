//! JSON pipeline configuration: data source, decomposition, basis rule,
//! model structure, regularization grids, and simulation grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use opinf_sfom::burgers::BurgersConfig;
use opinf_sfom::opinf::ModelStructure;
use opinf_sfom::regression::{log_grid, BlockScales, Eta2Rule, RegConfig};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub data: DataSection,
    /// Training window boundary; columns with time <= this value train the
    /// models, later columns form the test window.
    #[serde(default)]
    pub train_split: Option<f64>,
    #[serde(default)]
    pub decomposition: Option<DecompositionSection>,
    pub basis: BasisRule,
    #[serde(default)]
    pub structure: ModelStructure,
    pub regularization: RegularizationSection,
    #[serde(default)]
    pub pooling: PoolingSection,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    /// Output directory; the --out flag overrides it.
    #[serde(default)]
    pub outputs: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let DataSection::Burgers(b) = &self.data {
            b.validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.regularization.opinf.validate()?;
        self.regularization.sfom.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSection {
    /// Generate the reference data set in-process.
    Burgers(BurgersConfig),
    /// Load snapshot data from files.
    Files(FileData),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    /// State snapshot matrix (FMAT).
    pub states: PathBuf,
    /// Snapshot times: single-row or single-column CSV.
    pub times: PathBuf,
    #[serde(default)]
    pub inputs: Option<PathBuf>,
    #[serde(default)]
    pub derivatives: Option<PathBuf>,
    /// Adjacency as a JSON array of ascending neighbor lists.
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DecompositionSection {
    /// 1D split: FOM subdomain from this coordinate rightward, with an
    /// overlap strip of the given width just right of the boundary.
    Split {
        split_coordinate: f64,
        #[serde(default)]
        overlap_width: usize,
    },
    /// Explicit index sets.
    Explicit {
        fom_ids: Vec<usize>,
        #[serde(default)]
        overlap_ids: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisRule {
    FixedRank(usize),
    Energy(f64),
}

impl BasisRule {
    pub fn to_rule(self) -> opinf_sfom::pod::TruncationRule {
        match self {
            BasisRule::FixedRank(r) => opinf_sfom::pod::TruncationRule::FixedRank(r),
            BasisRule::Energy(f) => opinf_sfom::pod::TruncationRule::Energy(f),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSection {
    pub opinf: RegSpec,
    pub sfom: RegSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta2Spec {
    MultipleOfEta1(f64),
    Grid(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

/// Regularization settings of one model half.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegSpec {
    pub eta1: f64,
    pub eta2: f64,
    /// Logarithmic eta1 search grid; absent means fixed weights.
    pub eta1_grid: Option<GridSpec>,
    pub eta2_rule: Option<Eta2Spec>,
    pub scales: BlockScales,
    pub lcurve_subsample: usize,
    pub per_row: bool,
}

impl Default for RegSpec {
    fn default() -> Self {
        Self {
            eta1: 0.0,
            eta2: 0.0,
            eta1_grid: None,
            eta2_rule: None,
            scales: BlockScales::default(),
            lcurve_subsample: 20,
            per_row: false,
        }
    }
}

impl RegSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(g) = &self.eta1_grid {
            if !(g.min > 0.0 && g.max > 0.0 && g.count >= 1) {
                return Err(CliError::Config(
                    "eta1 grid needs positive bounds and at least one point".into(),
                ));
            }
        }
        self.to_reg_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_reg_config(&self) -> RegConfig {
        let mut reg = RegConfig::fixed(self.eta1, self.eta2).with_scales(self.scales);
        if let Some(g) = &self.eta1_grid {
            let rule = match &self.eta2_rule {
                Some(Eta2Spec::MultipleOfEta1(f)) => Eta2Rule::MultipleOfEta1(*f),
                Some(Eta2Spec::Grid(v)) => Eta2Rule::Grid(v.clone()),
                None => Eta2Rule::MultipleOfEta1(0.0),
            };
            reg = reg.with_grid(log_grid(g.min, g.max, g.count), rule);
        }
        reg.lcurve_subsample = self.lcurve_subsample;
        reg.per_row_selection = self.per_row;
        reg
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolingSection {
    /// Congruent rows pooled per sFOM inference.
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default)]
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
    /// Initial state as an FMAT column vector; defaults to the configured
    /// initial condition (data generation) or the first snapshot column.
    #[serde(default)]
    pub initial_state: Option<PathBuf>,
}

/// Config preset reproducing the periodic Burgers setup: quadratic coupled
/// structure, rank-10 basis, the published regularization grids, and
/// pooling over 5 congruent rows.
pub fn burgers_preset() -> PipelineConfig {
    PipelineConfig {
        version: CONFIG_VERSION,
        data: DataSection::Burgers(BurgersConfig::default()),
        train_split: Some(9.0),
        decomposition: Some(DecompositionSection::Split {
            split_coordinate: 5.0,
            overlap_width: 0,
        }),
        basis: BasisRule::FixedRank(10),
        structure: ModelStructure::linear_quadratic(),
        regularization: RegularizationSection {
            opinf: RegSpec {
                eta1_grid: Some(GridSpec {
                    min: 1e-3,
                    max: 1.0,
                    count: 20,
                }),
                eta2_rule: Some(Eta2Spec::MultipleOfEta1(0.05)),
                scales: BlockScales {
                    quadratic: 200.0,
                    ..BlockScales::default()
                },
                ..RegSpec::default()
            },
            sfom: RegSpec {
                eta1_grid: Some(GridSpec {
                    min: 1e-8,
                    max: 1e-3,
                    count: 20,
                }),
                eta2_rule: Some(Eta2Spec::MultipleOfEta1(50.0)),
                scales: BlockScales {
                    quadratic: 10.0,
                    ..BlockScales::default()
                },
                ..RegSpec::default()
            },
        },
        pooling: PoolingSection { count: 5 },
        simulation: Some(SimulationSection {
            t0: 0.0,
            dt: 2.5e-2,
            steps: 720,
            initial_state: None,
        }),
        outputs: None,
    }
}
