//! Versioned TOML experiment configuration.

use std::path::{Path, PathBuf};

use phasefield::energy::EnergySpec;
use phasefield::field::{Field, Grid};
use phasefield::metric::{MetricKind, MetricSpec};
use phasefield::network::NetworkSpec;
use phasefield::sampler::GrfConfig;
use phasefield::solver::{InnerOptimizer, MinMoveConfig};
use phasefield::train::{GradientMode, LossConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "PFONET_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    RelaxPinn,
    RelaxOnet,
    Ac2dOnet,
    Ch1dPinn,
    Ch1dOnet,
    TauStudy,
    SmoothnessStudy,
    OracleRun,
}

impl ExperimentId {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::RelaxPinn => "relax-pinn",
            ExperimentId::RelaxOnet => "relax-onet",
            ExperimentId::Ac2dOnet => "ac2d-onet",
            ExperimentId::Ch1dPinn => "ch1d-pinn",
            ExperimentId::Ch1dOnet => "ch1d-onet",
            ExperimentId::TauStudy => "tau-study",
            ExperimentId::SmoothnessStudy => "smoothness-study",
            ExperimentId::OracleRun => "oracle-run",
        }
    }

    fn is_pinn(self) -> bool {
        matches!(self, ExperimentId::RelaxPinn | ExperimentId::Ch1dPinn)
    }

    fn is_onet(self) -> bool {
        matches!(
            self,
            ExperimentId::RelaxOnet
                | ExperimentId::Ac2dOnet
                | ExperimentId::Ch1dOnet
                | ExperimentId::TauStudy
        )
    }
}

/// Analytic initial fields. In 2D the profile is the product over both axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `offset + amplitude · Π sin(frequency·π·x)`
    Sine {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "unit")]
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude · Π cos(frequency·π·x)`
    Cosine {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "unit")]
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
    /// One Gaussian random field draw.
    Grf { length_scale: f64, seed: u64 },
}

fn unit() -> f64 {
    1.0
}

impl InitialCondition {
    pub fn field(&self, grid: Grid) -> phasefield::Result<Field> {
        use std::f64::consts::PI;
        match *self {
            InitialCondition::Sine {
                amplitude,
                frequency,
                offset,
            } => Field::from_fn(grid, |p| {
                offset
                    + amplitude
                        * p.iter()
                            .map(|x| (frequency * PI * x).sin())
                            .product::<f64>()
            }),
            InitialCondition::Cosine {
                amplitude,
                frequency,
                offset,
            } => Field::from_fn(grid, |p| {
                offset
                    + amplitude
                        * p.iter()
                            .map(|x| (frequency * PI * x).cos())
                            .product::<f64>()
            }),
            InitialCondition::Grf { length_scale, seed } => {
                let mut f =
                    phasefield::sampler::grf_fields(&GrfConfig::new(length_scale, seed), grid, 1)?;
                Ok(f.remove(0))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub optimizer: InnerOptimizer,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    500
}

fn default_tol() -> f64 {
    1e-8
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            optimizer: InnerOptimizer::default(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub length_scale: f64,
    pub samples: usize,
    #[serde(default = "half")]
    pub train_fraction: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// Time steps compared by the τ-study.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub taus: Vec<f64>,
    /// GRF length scales compared by the smoothness study.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub length_scales: Vec<f64>,
    /// Draws per length scale.
    #[serde(default)]
    pub samples: usize,
}

/// Which one-step map the trained or rolled-out fields are scored against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    Minmove,
    Reference,
    Analytic,
}

/// Thresholds gating the exit code; absent entries are not checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Acceptance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_test_r2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_test_mse: Option<f64>,
    /// Largest nodewise error against the analytic solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_error: Option<f64>,
    /// Largest per-step nodewise MSE against the oracle trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_energy_increases: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_mass_drift: Option<f64>,
    /// Require the experiment's monotonicity property.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub experiment: ExperimentId,
    #[serde(default)]
    pub seed: u64,
    /// Run directory; relative paths resolve against the output root.
    pub output: PathBuf,
    pub tau: f64,
    /// Time steps of PINN sequences and rollouts.
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub gradient: GradientMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleChoice>,
    pub energy: EnergySpec,
    pub metric: MetricSpec,
    pub grid: Grid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance: Option<Acceptance>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Runtime(format!("serializing config: {e}")))
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            energy: self.energy,
            metric: self.metric,
            tau: self.tau,
            quadrature: self.grid,
            gradient: self.gradient,
        }
    }

    pub fn loss_with_tau(&self, tau: f64) -> LossConfig {
        LossConfig { tau, ..self.loss() }
    }

    pub fn minmove(&self, tau: f64) -> MinMoveConfig {
        MinMoveConfig {
            tau,
            metric: self.metric,
            optimizer: self.solver.optimizer,
            max_iter: self.solver.max_iter,
            tol: self.solver.tol,
        }
    }

    pub fn grf(&self) -> Option<GrfConfig> {
        self.sampler
            .map(|s| GrfConfig::new(s.length_scale, self.seed))
    }

    /// Oracle used when the config does not name one.
    pub fn oracle_choice(&self) -> OracleChoice {
        self.oracle.unwrap_or(match self.experiment {
            ExperimentId::Ac2dOnet | ExperimentId::Ch1dPinn | ExperimentId::Ch1dOnet => {
                OracleChoice::Reference
            }
            _ => OracleChoice::Minmove,
        })
    }

    /// Resolves the run directory against `override_dir`, then the output
    /// root environment variable, then `runs/`.
    pub fn run_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        if let Some(d) = override_dir {
            return d.to_path_buf();
        }
        if self.output.is_absolute() {
            return self.output.clone();
        }
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.output)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.loss()
            .validate()
            .map_err(|e| invalid(format!("loss: {e}")))?;
        self.minmove(self.tau)
            .validate()
            .map_err(|e| invalid(format!("solver: {e}")))?;
        let exp = self.experiment;
        let quadratic = matches!(self.energy, EnergySpec::Quadratic { .. });
        let l2 = self.metric.kind == MetricKind::L2;
        let dim = self.grid.dim();
        let (need_quadratic, need_l2, need_dim) = match exp {
            ExperimentId::RelaxPinn | ExperimentId::RelaxOnet | ExperimentId::TauStudy => {
                (Some(true), Some(true), Some(1))
            }
            ExperimentId::Ac2dOnet => (Some(false), Some(true), Some(2)),
            ExperimentId::Ch1dPinn | ExperimentId::Ch1dOnet => (Some(false), Some(false), Some(1)),
            ExperimentId::SmoothnessStudy | ExperimentId::OracleRun => (None, None, None),
        };
        if need_quadratic.is_some_and(|q| q != quadratic) {
            return Err(invalid(format!("{}: wrong energy kind", exp.as_str())));
        }
        if need_l2.is_some_and(|q| q != l2) {
            return Err(invalid(format!("{}: wrong metric", exp.as_str())));
        }
        if need_dim.is_some_and(|d| d != dim) {
            return Err(invalid(format!(
                "{}: grid must be {}D",
                exp.as_str(),
                need_dim.unwrap()
            )));
        }
        if exp.is_pinn() || exp.is_onet() {
            let net = self
                .network
                .as_ref()
                .ok_or_else(|| invalid("[network] is required"))?;
            net.validate()
                .map_err(|e| invalid(format!("network: {e}")))?;
            if net.coord_dim() != dim {
                return Err(invalid(
                    "network coordinate dimension differs from the grid",
                ));
            }
            match (exp.is_pinn(), net) {
                (true, NetworkSpec::Pinn { .. }) => {}
                (true, _) => return Err(invalid("PINN experiments need network kind \"pinn\"")),
                (false, NetworkSpec::DeepOnet { .. }) => {
                    let m = net.sensor_count().unwrap_or(0);
                    if m != self.grid.len() {
                        return Err(invalid(format!(
                            "branch takes {m} sensors but the grid has {} nodes",
                            self.grid.len()
                        )));
                    }
                }
                (false, _) => {
                    return Err(invalid(
                        "operator experiments need network kind \"deep_onet\"",
                    ))
                }
            }
            let train = self
                .train
                .as_ref()
                .ok_or_else(|| invalid("[train] is required"))?;
            train
                .validate()
                .map_err(|e| invalid(format!("train: {e}")))?;
        }
        if exp.is_onet() || exp == ExperimentId::SmoothnessStudy {
            if exp.is_onet() {
                let s = self
                    .sampler
                    .ok_or_else(|| invalid("[sampler] is required"))?;
                if s.samples < 2 || !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
                    return Err(invalid(
                        "sampler needs ≥ 2 samples and a train fraction in (0, 1)",
                    ));
                }
                self.grf()
                    .unwrap()
                    .validate()
                    .map_err(|e| invalid(format!("sampler: {e}")))?;
            }
        }
        if exp.is_pinn() || exp == ExperimentId::OracleRun {
            if self.steps == 0 {
                return Err(invalid("steps must be positive"));
            }
            if self.initial.is_none() {
                return Err(invalid("[initial] is required"));
            }
        }
        if let Some(ic) = &self.initial {
            ic.field(self.grid)
                .map_err(|e| invalid(format!("initial: {e}")))?;
        }
        match exp {
            ExperimentId::TauStudy => {
                let taus = self
                    .study
                    .as_ref()
                    .map(|s| s.taus.as_slice())
                    .unwrap_or(&[]);
                if taus.len() < 2 || taus.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                    return Err(invalid("study.taus needs at least two positive values"));
                }
            }
            ExperimentId::SmoothnessStudy => {
                let s = self
                    .study
                    .as_ref()
                    .ok_or_else(|| invalid("[study] is required"))?;
                if s.length_scales.len() < 2 || s.samples == 0 {
                    return Err(invalid(
                        "study needs at least two length scales and positive samples",
                    ));
                }
                for &l in &s.length_scales {
                    GrfConfig::new(l, self.seed)
                        .validate()
                        .map_err(|e| invalid(format!("study: {e}")))?;
                }
            }
            _ => {}
        }
        let oracle = self.oracle_choice();
        if oracle == OracleChoice::Analytic && !(quadratic && l2) {
            return Err(invalid(
                "the analytic oracle exists only for the quadratic energy under L²",
            ));
        }
        if oracle == OracleChoice::Reference && quadratic {
            return Err(invalid(
                "the finite-difference reference needs the Ginzburg–Landau energy",
            ));
        }
        if oracle == OracleChoice::Reference && !l2 && dim != 1 {
            return Err(invalid("the Cahn–Hilliard reference is 1D"));
        }
        Ok(())
    }
}
