//! Run configuration, read from TOML.
//!
//! Every section except `problem`, `grid` and `impulses` has defaults. The
//! config hash is the SHA-256 of the parsed, re-serialized config, so it does
//! not depend on key order or formatting in the file.

use std::path::Path;

use impulse_core::game::{Adversary, DppPlay, StoppingRule};
use impulse_core::{BoundaryPolicy, Grid, ImpulseGrid, ProblemSpec, Scheme, SpaceGrid, TimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::LabError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Root seed for every random stream of the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub impulses: ImpulseConfig,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub converge: ConvergeConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Tp0,
    Tp1,
    Tp2,
}

/// Either `preset = "tp1"` or a full inline instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum ProblemConfig {
    Preset { preset: Preset },
    Inline(ProblemSpec),
}

impl ProblemConfig {
    pub fn spec(&self) -> ProblemSpec {
        match self {
            ProblemConfig::Preset {
                preset: Preset::Tp0,
            } => ProblemSpec::tp0(),
            ProblemConfig::Preset {
                preset: Preset::Tp1,
            } => ProblemSpec::tp1(),
            ProblemConfig::Preset {
                preset: Preset::Tp2,
            } => ProblemSpec::tp2(),
            ProblemConfig::Inline(spec) => spec.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub steps: usize,
    #[serde(default)]
    pub boundary: BoundaryPolicy,
}

/// Impulse lattice: points per axis or a spacing (the grid step when neither
/// is given); the radius defaults to the truncation radius.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseConfig {
    #[serde(default)]
    pub counts: Option<Vec<usize>>,
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpulseChoice {
    Qvi,
    None,
}

/// `qvi` or the index of a constant control in the sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlChoice {
    Named(ImpulseChoice),
    Constant(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub x0: Vec<Vec<f64>>,
    pub paths: usize,
    pub q: usize,
    pub control: ControlChoice,
    pub impulse: ImpulseChoice,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            x0: vec![vec![0.0]],
            paths: 10_000,
            q: 4,
            control: ControlChoice::Named(ImpulseChoice::Qvi),
            impulse: ImpulseChoice::Qvi,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppConfig {
    pub rule: StoppingRule,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub play: DppPlay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub x0: Vec<Vec<f64>>,
    pub q: usize,
    pub paths: usize,
    /// Budgets of the precommitment sweep, run at `sweep_x0`.
    pub budgets: Vec<usize>,
    pub sweep_x0: Vec<f64>,
    /// Adversary family; all constant controls plus `b*` when absent.
    pub adversaries: Option<Vec<Adversary>>,
    pub dpp: Vec<DppConfig>,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            x0: vec![vec![0.0]],
            q: 4,
            paths: 10_000,
            budgets: (1..=8).collect(),
            sweep_x0: vec![0.0],
            adversaries: None,
            dpp: vec![DppConfig {
                rule: StoppingRule::ExitBox {
                    lo: vec![-1.0],
                    hi: vec![1.0],
                },
                x0: vec![0.0],
                play: DppPlay::Optimal,
            }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub lambdas: Vec<f64>,
    pub rho: f64,
    /// Random field pairs for the intervention-operator checks.
    pub random_pairs: usize,
    /// The comparison check solves with `g` and `g - comparison_shift`.
    pub comparison_shift: f64,
    /// Samples per assumption check.
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            lambdas: vec![0.1, 0.25, 0.5],
            rho: 0.5,
            random_pairs: 20,
            comparison_shift: 0.3,
            samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeConfig {
    /// Number of grids, each a factor-2 refinement of the previous one.
    pub levels: usize,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        ConvergeConfig { levels: 4 }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text).map_err(|message| LabError::Config {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn spec(&self) -> ProblemSpec {
        self.problem.spec()
    }

    pub fn grid(&self, spec: &ProblemSpec) -> Result<Grid, LabError> {
        let g = &self.grid;
        let space = SpaceGrid::new(&g.lo, &g.hi, &g.nodes, g.boundary)?;
        Ok(Grid::new(space, TimeGrid::new(spec.horizon, g.steps)?))
    }

    pub fn impulse_grid(&self, spec: &ProblemSpec, grid: &Grid) -> Result<ImpulseGrid, LabError> {
        let z = &self.impulses;
        Ok(match (&z.counts, z.step) {
            (Some(counts), None) => ImpulseGrid::new(spec, counts, z.radius)?,
            (None, Some(step)) => ImpulseGrid::with_step(spec, step, z.radius)?,
            (None, None) => ImpulseGrid::with_step(spec, grid.space.max_step(), z.radius)?,
            (Some(_), Some(_)) => {
                return Err(LabError::Invalid(
                    "impulses: give at most one of `counts` and `step`".into(),
                ))
            }
        })
    }
}
