//! Experiment configuration files.
//!
//! A config is a TOML document with a few top-level keys and one table per
//! stage. Every key has a default, so a file only lists what differs.

use std::path::{Path, PathBuf};

use dynamo::driver::{DriverConfig, MethodSpec};
use dynamo::flow::{FlowConfig, FlowRegularizer};
use dynamo::mmgks::{LambdaRule, MmgksConfig, Smoothing};
use dynamo::motion::MotionEncoding;
use dynamo::phantoms::{BlocksConfig, PinballConfig};
use dynamo::tomo::{
    equal_bins_schedule, fixed_schedule, random_single_angle_schedule, shifted_interval_schedule, AngleSchedule,
    FanBeamGeometry, RayModel, SimulationOptions,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<String>,
    /// Relative to the config file unless absolute.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Timesteps written as PGM frames (0-based).
    #[serde(default)]
    pub frames: Vec<usize>,
    /// Run methods concurrently.
    #[serde(default)]
    pub concurrent: bool,
    pub phantom: PhantomSection,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub driver: DriverSection,
    #[serde(default)]
    pub flow: FlowSection,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhantomSection {
    Blocks {
        #[serde(default = "d90")]
        n_x: usize,
        #[serde(default = "d90")]
        n_y: usize,
        #[serde(default = "d12")]
        n_t: usize,
        #[serde(default = "d12")]
        block_size: usize,
        #[serde(default = "default_intensities")]
        intensities: Vec<f64>,
        #[serde(default = "d2")]
        n_fast: usize,
        #[serde(default = "d2i")]
        fast_speed: i64,
        #[serde(default = "d1i")]
        slow_speed: i64,
    },
    Pinball {
        #[serde(default = "d50")]
        n_x: usize,
        #[serde(default = "d50")]
        n_y: usize,
        #[serde(default = "d30")]
        n_t: usize,
    },
    /// Sequence written by `save_sequence`.
    File { path: PathBuf },
}

fn d1i() -> i64 {
    1
}
fn d2i() -> i64 {
    2
}
fn d2() -> usize {
    2
}
fn d12() -> usize {
    12
}
fn d30() -> usize {
    30
}
fn d50() -> usize {
    50
}
fn d90() -> usize {
    90
}
fn default_intensities() -> Vec<f64> {
    BlocksConfig::default().intensities
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleRule {
    Shifted,
    Fixed,
    EqualBins,
    /// One uniformly random angle per timestep.
    Random,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub n_rays: usize,
    pub schedule: ScheduleRule,
    pub n_views: usize,
    pub ray_model: RayModelName,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            n_rays: 117,
            schedule: ScheduleRule::Shifted,
            n_views: 3,
            ray_model: RayModelName::Siddon,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum RayModelName {
    Siddon,
    Interpolated,
}

impl From<RayModelName> for RayModel {
    fn from(m: RayModelName) -> Self {
        match m {
            RayModelName::Siddon => RayModel::Siddon,
            RayModelName::Interpolated => RayModel::Interpolated,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub noise_level: f64,
    pub jitter_deg: f64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationOptions::default();
        Self {
            noise_level: d.noise_level,
            jitter_deg: d.jitter_deg,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRuleName {
    Gcv,
    Dp,
    Fixed,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    Relative,
    Absolute,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub ell: usize,
    pub q: f64,
    pub p: f64,
    pub epsilon: f64,
    pub epsilon_mode: SmoothingMode,
    pub lambda_rule: LambdaRuleName,
    /// Used by the `fixed` rule.
    pub lambda: Option<f64>,
    pub eta: f64,
    /// Noise norm for the discrepancy principle; defaults to the simulated one.
    pub delta: Option<f64>,
    pub max_iters: usize,
    pub stagnation_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = MmgksConfig::default();
        Self {
            ell: d.ell,
            q: d.q,
            p: d.p,
            epsilon: 1e-2,
            epsilon_mode: SmoothingMode::Relative,
            lambda_rule: LambdaRuleName::Gcv,
            lambda: None,
            eta: 1.01,
            delta: None,
            max_iters: d.max_iters,
            stagnation_tol: d.stagnation_tol,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DriverSection {
    pub tau: usize,
    pub warm_start_iters: usize,
    /// Flow resolution factor α; automatic when absent.
    pub rescale: Option<f64>,
    pub encoding: EncodingName,
}

impl Default for DriverSection {
    fn default() -> Self {
        let d = DriverConfig::default();
        Self {
            tau: d.tau,
            warm_start_iters: d.warm_start_iters,
            rescale: None,
            encoding: EncodingName::Bilinear,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EncodingName {
    Bilinear,
    Rounding,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FlowRegularizerName {
    BlockDiagonal,
    Concatenated,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub delta_r: usize,
    pub iterations: usize,
    pub ell: usize,
    pub p: f64,
    pub q: f64,
    /// Relative smoothing of the flow weights.
    pub epsilon: f64,
    pub regularizer: FlowRegularizerName,
    /// Fixed γ; GCV when absent.
    pub gamma: Option<f64>,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            delta_r: d.delta_r,
            iterations: d.iterations,
            ell: d.ell,
            p: d.p,
            q: d.q,
            epsilon: 1e-2,
            regularizer: FlowRegularizerName::BlockDiagonal,
            gamma: None,
        }
    }
}

/// A parsed config plus the file it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: PathBuf,
    pub text: String,
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(Self {
            config,
            source: path.to_path_buf(),
            text,
        })
    }

    fn base_dir(&self) -> PathBuf {
        self.source.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Resolves a path from the config relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        match &self.config.output_dir {
            Some(p) => self.resolve(p),
            None => PathBuf::from("out").join(&self.config.name),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(CliError::Config("no methods listed".into()));
        }
        self.method_specs()?;
        if self.solver.lambda_rule == LambdaRuleName::Fixed && self.solver.lambda.is_none() {
            return Err(CliError::Config("lambda_rule = \"fixed\" needs solver.lambda".into()));
        }
        if self.geometry.n_views == 0 && self.geometry.schedule != ScheduleRule::Random {
            return Err(CliError::Config("geometry.n_views must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn method_specs(&self) -> Result<Vec<MethodSpec>> {
        self.methods
            .iter()
            .map(|m| MethodSpec::parse(m).map_err(|_| CliError::Config(format!("unknown method tag `{m}`"))))
            .collect()
    }

    pub fn blocks(&self) -> Option<BlocksConfig> {
        match &self.phantom {
            PhantomSection::Blocks {
                n_x,
                n_y,
                n_t,
                block_size,
                intensities,
                n_fast,
                fast_speed,
                slow_speed,
            } => Some(BlocksConfig {
                n_x: *n_x,
                n_y: *n_y,
                n_t: *n_t,
                block_size: *block_size,
                intensities: intensities.clone(),
                n_fast: *n_fast,
                fast_speed: *fast_speed,
                slow_speed: *slow_speed,
                seed: self.seed,
            }),
            _ => None,
        }
    }

    pub fn pinball(&self) -> Option<PinballConfig> {
        match &self.phantom {
            PhantomSection::Pinball { n_x, n_y, n_t } => Some(PinballConfig {
                n_x: *n_x,
                n_y: *n_y,
                n_t: *n_t,
                ..PinballConfig::default()
            }),
            _ => None,
        }
    }

    pub fn geometry(&self, n_x: usize, n_y: usize) -> FanBeamGeometry {
        FanBeamGeometry::standard(n_x, n_y, self.geometry.n_rays)
    }

    pub fn schedule(&self, n_t: usize) -> Result<AngleSchedule> {
        let v = self.geometry.n_views;
        Ok(match self.geometry.schedule {
            ScheduleRule::Shifted => shifted_interval_schedule(v, n_t)?,
            ScheduleRule::Fixed => fixed_schedule(v, n_t)?,
            ScheduleRule::EqualBins => equal_bins_schedule(v, n_t)?,
            ScheduleRule::Random => random_single_angle_schedule(n_t, self.seed)?,
        })
    }

    pub fn simulation_options(&self) -> SimulationOptions {
        SimulationOptions {
            noise_level: self.simulation.noise_level,
            seed: self.seed,
            jitter_deg: self.simulation.jitter_deg,
            ray_model: self.geometry.ray_model.into(),
        }
    }

    /// Driver settings; `noise_norm` feeds the discrepancy principle when
    /// the config does not give δ.
    pub fn driver_config(&self, noise_norm: Option<f64>) -> Result<DriverConfig> {
        let s = &self.solver;
        let lambda_rule = match s.lambda_rule {
            LambdaRuleName::Gcv => LambdaRule::Gcv,
            LambdaRuleName::Fixed => LambdaRule::Fixed(s.lambda.unwrap_or_default()),
            LambdaRuleName::Dp => {
                let delta = s.delta.or(noise_norm).ok_or_else(|| {
                    CliError::Config("discrepancy principle needs solver.delta or simulated data".into())
                })?;
                LambdaRule::Discrepancy { delta, eta: s.eta }
            }
        };
        let smoothing = match s.epsilon_mode {
            SmoothingMode::Relative => Smoothing::Relative(s.epsilon),
            SmoothingMode::Absolute => Smoothing::Absolute(s.epsilon),
        };
        let f = &self.flow;
        Ok(DriverConfig {
            solver: MmgksConfig {
                ell: s.ell,
                q: s.q,
                p: s.p,
                smoothing,
                lambda_rule,
                max_iters: s.max_iters,
                stagnation_tol: s.stagnation_tol,
            },
            tau: self.driver.tau,
            flow: FlowConfig {
                delta_r: f.delta_r,
                iterations: f.iterations,
                ell: f.ell,
                p: f.p,
                q: f.q,
                regularizer: match f.regularizer {
                    FlowRegularizerName::BlockDiagonal => FlowRegularizer::BlockDiagonal,
                    FlowRegularizerName::Concatenated => FlowRegularizer::Concatenated,
                },
                smoothing: Smoothing::Relative(f.epsilon),
                gamma: f.gamma,
            },
            rescale: self.driver.rescale,
            warm_start_iters: self.driver.warm_start_iters,
            encoding: match self.driver.encoding {
                EncodingName::Bilinear => MotionEncoding::Bilinear,
                EncodingName::Rounding => MotionEncoding::Rounding,
            },
            known_flows: None,
        })
    }
}
