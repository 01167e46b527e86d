//! Run and sweep configurations.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::SteadyState;
use crate::error::{Error, Result};
use crate::kernels::{InfluenceFunction, InteractionPotential};
use crate::kinetic::{Integrator, FLUCTUATION_BOUND};
use crate::solver::DEFAULT_WEIGHT_THRESHOLD;
use crate::transport::{Grid, InitialCondition, TransportScheme};

/// Grid simulation of the first-order model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dimension: usize,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    #[serde(alias = "T")]
    pub t_final: f64,
    /// Simulated time between snapshots.
    pub snapshot_cadence: f64,
    #[serde(default = "default_weight_threshold")]
    pub weight_threshold: f64,
    #[serde(default)]
    pub renormalize_mass: bool,
    #[serde(default)]
    pub scheme: TransportScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub influence: InfluenceFunction,
    pub potential: InteractionPotential,
    pub initial: InitialCondition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SteadyState>,
}

fn default_weight_threshold() -> f64 {
    DEFAULT_WEIGHT_THRESHOLD
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("`{name}` must be positive and finite, got {v}")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::InvalidConfig(format!("`dimension` must be 1 or 2, got {}", self.dimension)));
        }
        if self.domain_lower.len() != self.dimension || self.domain_upper.len() != self.dimension {
            return Err(Error::InvalidConfig(format!(
                "`domain_lower` and `domain_upper` need {} entries",
                self.dimension
            )));
        }
        positive("h", self.h)?;
        positive("dt", self.dt)?;
        positive("t_final", self.t_final)?;
        positive("snapshot_cadence", self.snapshot_cadence)?;
        if !(0.0..1.0).contains(&self.weight_threshold) {
            return Err(Error::InvalidConfig(format!(
                "`weight_threshold` must lie in [0, 1), got {}",
                self.weight_threshold
            )));
        }
        self.initial.validate()?;
        if self.initial.dimension() != self.dimension {
            return Err(Error::InvalidConfig(format!(
                "`initial` is {}-dimensional but `dimension` is {}",
                self.initial.dimension(),
                self.dimension
            )));
        }
        if let Some(t) = &self.target {
            if t.dimension() != self.dimension {
                return Err(Error::InvalidConfig(format!(
                    "`target` is {}-dimensional but `dimension` is {}",
                    t.dimension(),
                    self.dimension
                )));
            }
        }
        Grid::new(&self.domain_lower, &self.domain_upper, self.h)?;
        let r = self.initial.support_radius();
        for axis in 0..self.dimension {
            if self.domain_lower[axis] > -r || self.domain_upper[axis] < r {
                return Err(Error::InvalidConfig(format!(
                    "domain axis {axis} does not contain the initial support [−{r}, {r}]"
                )));
            }
        }
        Ok(())
    }

    /// Number of steps of length `dt` covering `[0, t_final]`.
    pub fn step_count(&self) -> usize {
        ((self.t_final / self.dt).round() as usize).max(1)
    }

    /// Coarse variant: `h` and `dt` doubled.
    pub fn fast(&self) -> Self {
        SimConfig { h: 2.0 * self.h, dt: 2.0 * self.dt, ..self.clone() }
    }
}

/// ε-sweep of the kinetic particle system against the first-order limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "one")]
    pub dimension: usize,
    pub particles: usize,
    #[serde(alias = "T")]
    pub t_final: f64,
    /// Strictly decreasing inertia values.
    pub eps_list: Vec<f64>,
    /// Upper bound on the kinetic step; the step also resolves `ε`.
    pub dt_max: f64,
    /// Step of the first-order reference integration.
    #[serde(default = "default_reference_dt")]
    pub reference_dt: f64,
    #[serde(default)]
    pub integrator: Integrator,
    /// Initial positions are uniform in `[−box_half_width, box_half_width]^d`.
    #[serde(default = "one_f")]
    pub box_half_width: f64,
    /// Initial velocities are uniform in `[−velocity_scale, velocity_scale]^d`, then centered.
    #[serde(default = "half")]
    pub velocity_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Largest accepted `I(T)/ε²`.
    #[serde(default = "default_fluctuation_bound")]
    pub fluctuation_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub influence: InfluenceFunction,
    pub potential: InteractionPotential,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn default_reference_dt() -> f64 {
    1e-3
}

fn default_fluctuation_bound() -> f64 {
    FLUCTUATION_BOUND
}

impl SweepConfig {
    /// N = 20 particles, Morse potential on the line, T = 2, ε ∈ {0.2, 0.1, 0.05}.
    pub fn default_morse() -> Self {
        SweepConfig {
            dimension: 1,
            particles: 20,
            t_final: 2.0,
            eps_list: vec![0.2, 0.1, 0.05],
            dt_max: 0.05,
            reference_dt: default_reference_dt(),
            integrator: Integrator::SemiImplicit,
            box_half_width: 1.0,
            velocity_scale: 0.5,
            seed: 7,
            fluctuation_bound: FLUCTUATION_BOUND,
            output_dir: None,
            influence: InfluenceFunction::InversePowerHalf,
            potential: InteractionPotential::Morse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != 1 && self.dimension != 2 {
            return Err(Error::InvalidConfig(format!("`dimension` must be 1 or 2, got {}", self.dimension)));
        }
        if self.particles == 0 {
            return Err(Error::InvalidConfig("`particles` must be at least 1".into()));
        }
        positive("t_final", self.t_final)?;
        positive("dt_max", self.dt_max)?;
        positive("reference_dt", self.reference_dt)?;
        positive("box_half_width", self.box_half_width)?;
        positive("fluctuation_bound", self.fluctuation_bound)?;
        if !(self.velocity_scale >= 0.0) {
            return Err(Error::InvalidConfig("`velocity_scale` must be nonnegative".into()));
        }
        if self.eps_list.is_empty() {
            return Err(Error::InvalidConfig("`eps_list` is empty".into()));
        }
        for &e in &self.eps_list {
            positive("eps_list", e)?;
        }
        if self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("`eps_list` must be strictly decreasing".into()));
        }
        Ok(())
    }
}
