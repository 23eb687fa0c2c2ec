//! TOML run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hopfcole::Subdomain;
use crate::kinetic::{KineticModel, SolverOptions, TransportScheme};
use crate::model::{assumption_report, AssumptionCheck, DensityProfile, Drift, Kernel, ModelParams, SpatialField};
use crate::phase_grid::{GridSpec, PhaseGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub epsilon: f64,
    pub m_star: f64,
    /// Ascending polynomial coefficients of `N`.
    pub drift: Vec<f64>,
    /// Defaults to the degree minus one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_prime: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 1.0,
            c: 0.0,
            epsilon: 0.05,
            m_star: 0.5,
            drift: Drift::cubic().coeffs().to_vec(),
            p_prime: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub nodes: usize,
    pub density: DensityProfile,
    pub kernel: Kernel,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        Self {
            nodes: 8,
            density: DensityProfile::Uniform,
            kernel: Kernel::exponential(1.0, 1.0),
        }
    }
}

/// `mean + amplitude cos(pi x)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub mean: f64,
    #[serde(default)]
    pub amplitude: f64,
}

impl Profile {
    pub fn field(&self, nodes: usize) -> Result<SpatialField> {
        SpatialField::on_unit_interval(nodes, |x| self.mean + self.amplitude * (std::f64::consts::PI * x).cos())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub v0: Profile,
    pub w0: Profile,
    pub sigma_w: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            v0: Profile { mean: 1.0, amplitude: 0.3 },
            w0: Profile { mean: 0.2, amplitude: 0.0 },
            sigma_w: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_end: f64,
    pub dt: f64,
    /// Snapshot spacing; also the time step of the residual differences.
    pub stride: f64,
    /// RK4 step of the macroscopic systems.
    pub macro_dt: f64,
    #[serde(default)]
    pub transport: TransportScheme,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            dt: 2e-3,
            stride: 0.01,
            macro_dt: 1e-4,
            transport: TransportScheme::Upwind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.05, 0.025, 0.0125],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    pub subdomain: Subdomain,
    pub alpha0: f64,
    pub hj_tol: f64,
    /// Fixed `C`; searched when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Added to the smallest admissible `m0`.
    pub margin: f64,
    /// Sweep members that also run the envelope certification and the
    /// sandwich.
    #[serde(default)]
    pub envelope_epsilons: Vec<f64>,
    /// Start of the window for `dE/dt`.
    pub layer_skip: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            subdomain: Subdomain::default(),
            alpha0: 1.0,
            hj_tol: 1e-2,
            c: None,
            margin: 1.0,
            envelope_epsilons: vec![0.05],
            layer_skip: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub n: usize,
    pub dt: f64,
    /// Moment order of the reported `D_q`, `M_q`.
    pub q: f64,
    /// Number of equally spaced comparison times in `(0, t_end]`.
    pub checkpoints: usize,
    /// Independent replicas for the replicate standard error.
    pub replicas: usize,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            dt: 1e-3,
            q: 2.0,
            checkpoints: 10,
            replicas: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Writes `f` at every snapshot.
    #[serde(default)]
    pub dump_snapshots: bool,
    /// Writes `phi` at every snapshot.
    #[serde(default)]
    pub dump_phi: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            dump_snapshots: false,
            dump_phi: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub space: SpaceConfig,
    pub grid: GridSpec,
    pub initial: InitialConfig,
    pub schedule: ScheduleConfig,
    pub sweep: SweepConfig,
    pub checks: ChecksConfig,
    pub particles: ParticleConfig,
    pub output: OutputConfig,
}

/// Everything a kinetic run needs, built from a config at one `eps`.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: KineticModel,
    pub v0: SpatialField,
    pub w0: SpatialField,
    pub kernel: Kernel,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<ModelParams> {
        let m = &self.model;
        let p = ModelParams::new(m.a, m.b, m.c, m.epsilon, m.m_star, Drift::polynomial(m.drift.clone())?)?;
        Ok(match m.p_prime {
            Some(pp) => p.with_p_prime(pp),
            None => p,
        })
    }

    pub fn rho0(&self) -> Result<SpatialField> {
        self.space.density.build(self.space.nodes, self.model.m_star)
    }

    /// Soft assumption report of the model part.
    pub fn assumptions(&self) -> Result<Vec<AssumptionCheck>> {
        Ok(assumption_report(&self.params()?, &self.space.kernel, &self.rho0()?))
    }

    /// Structural checks beyond what the model constructors enforce.
    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        for (name, x) in [("t_end", s.t_end), ("dt", s.dt), ("stride", s.stride), ("macro_dt", s.macro_dt)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {x}")));
            }
        }
        let eps = &self.sweep.epsilons;
        if eps.iter().any(|&e| !(e > 0.0)) {
            return Err(invalid("sweep.epsilons", "must be positive"));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("sweep.epsilons", "must be strictly decreasing"));
        }
        if !(self.initial.sigma_w > 0.0) {
            return Err(invalid("initial.sigma_w", "must be positive"));
        }
        if !(self.checks.alpha0 > 0.0) {
            return Err(Error::NonPositiveAlpha0(self.checks.alpha0));
        }
        self.params()?;
        self.rho0()?;
        PhaseGrid::new(&self.grid)?;
        Ok(())
    }

    /// Copy with `epsilon` replaced.
    pub fn at_epsilon(&self, eps: f64) -> Self {
        let mut c = self.clone();
        c.model.epsilon = eps;
        c
    }

    pub fn setup(&self) -> Result<Setup> {
        self.validate()?;
        let params = self.params()?;
        let rho0 = self.rho0()?;
        let grid = PhaseGrid::new(&self.grid)?;
        let options = SolverOptions {
            transport: self.schedule.transport,
            ..SolverOptions::default()
        };
        let model = KineticModel::new(params, grid, rho0, &self.space.kernel, options)?;
        Ok(Setup {
            v0: self.initial.v0.field(self.space.nodes)?,
            w0: self.initial.w0.field(self.space.nodes)?,
            model,
            kernel: self.space.kernel,
        })
    }
}
