//! Semi-Lagrangian transport of the density on a uniform Eulerian grid.
//!
//! Each step re-solves the constrained velocity field on the nodes that carry
//! mass, extends it to the empty nodes through the velocity equation itself,
//! and then updates every node from backward foot points `y = x − dt·u(x)`.
//! Two update rules are available:
//!
//! ```text
//! characteristic:  ρⁿ⁺¹(x) = I[ρⁿ](y) · (1 − dt·div u(x))
//! conservative:    ρⁿ⁺¹_i h = ∫ ρⁿ  over [y(x_{i−½}), y(x_{i+½})]
//! ```
//!
//! The characteristic rule uses multilinear interpolation `I` and centered
//! differences for the divergence. The conservative rule remaps cell averages
//! between the foot points of the cell edges (axis by axis in 2D). Both agree
//! to first order; only the conservative one keeps the mass of a concentrating
//! density, where the divergence factor amplifies a spike every step.
//!
//! The backward form needs only structured interpolation, where the forward
//! form needs scattered-data interpolation from the displaced nodes back to the grid.

use std::collections::HashMap;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::{self, TargetMetric};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::kernels::{InfluenceFunction, InteractionPotential};
use crate::solver::{self, VelocitySolution, WeightedConfiguration};

/// Nodes with density above this fraction of the maximum count as support.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

/// Uniform grid on a box, equal spacing on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    lower: [f64; 2],
    h: f64,
    counts: [usize; 2],
}

impl Grid {
    /// The box `[lower, upper]` must split into a whole number of cells of width `h`.
    pub fn new(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        let dim = lower.len();
        if dim == 0 || dim > 2 || upper.len() != dim {
            return Err(Error::InvalidConfig(format!(
                "domain bounds must both have length 1 or 2 (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidConfig(format!("h must be positive, got {h}")));
        }
        let mut lo = [0.0; 2];
        let mut counts = [1usize; 2];
        for axis in 0..dim {
            if !(upper[axis] > lower[axis]) {
                return Err(Error::InvalidConfig(format!(
                    "domain axis {axis}: upper {} must exceed lower {}",
                    upper[axis], lower[axis]
                )));
            }
            let cells = (upper[axis] - lower[axis]) / h;
            let rounded = cells.round();
            if (cells - rounded).abs() > 1e-6 * cells.max(1.0) {
                return Err(Error::InvalidConfig(format!(
                    "domain axis {axis} of length {} is not a multiple of h = {h}",
                    upper[axis] - lower[axis]
                )));
            }
            lo[axis] = lower[axis];
            counts[axis] = rounded as usize + 1;
        }
        Ok(Grid { dim, lower: lo, h, counts })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn len(&self) -> usize {
        self.counts[..self.dim].iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `h^d`, the midpoint quadrature weight of a node.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim).map(|a| self.coordinate(a, self.counts[a] - 1)).collect()
    }

    /// `lower + i·h` on one axis.
    #[inline]
    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.h
    }

    /// Multi-index of a node; axis 0 varies fastest.
    #[inline]
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        [node % self.counts[0], node / self.counts[0]]
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> usize {
        iy * self.counts[0] + ix
    }

    pub fn position(&self, node: usize) -> [f64; 2] {
        let [ix, iy] = self.multi_index(node);
        let mut p = [self.coordinate(0, ix), 0.0];
        if self.dim == 2 {
            p[1] = self.coordinate(1, iy);
        }
        p
    }

    /// All node positions, flat with `dim` coordinates each.
    pub fn positions(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim);
        for node in 0..self.len() {
            out.extend_from_slice(&self.position(node)[..self.dim]);
        }
        out
    }

    /// Multilinear interpolation of nodal `values` at `y`; zero outside the box.
    pub fn interpolate(&self, values: &[f64], y: &[f64]) -> f64 {
        let mut base = [0usize; 2];
        let mut frac = [0.0; 2];
        for axis in 0..self.dim {
            let s = (y[axis] - self.lower[axis]) / self.h;
            let last = (self.counts[axis] - 1) as f64;
            if !(s >= 0.0 && s <= last) {
                return 0.0;
            }
            let cell = (s.floor() as usize).min(self.counts[axis].saturating_sub(2));
            base[axis] = cell;
            frac[axis] = s - cell as f64;
        }
        if self.dim == 1 {
            if self.counts[0] == 1 {
                return values[0];
            }
            let i = base[0];
            values[i] * (1.0 - frac[0]) + values[i + 1] * frac[0]
        } else {
            let (i, j) = (base[0], base[1]);
            let (fx, fy) = (frac[0], frac[1]);
            let v00 = values[self.node(i, j)];
            let v10 = values[self.node(i + 1, j)];
            let v01 = values[self.node(i, j + 1)];
            let v11 = values[self.node(i + 1, j + 1)];
            (v00 * (1.0 - fx) + v10 * fx) * (1.0 - fy) + (v01 * (1.0 - fx) + v11 * fx) * fy
        }
    }

    /// `div u` at every node: centered in the interior, one-sided on the boundary.
    pub fn divergence(&self, velocity: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.len()];
        for (node, o) in out.iter_mut().enumerate() {
            let idx = self.multi_index(node);
            for axis in 0..d {
                let n = self.counts[axis];
                if n < 2 {
                    continue;
                }
                let step = if axis == 0 { 1 } else { self.counts[0] };
                let i = idx[axis];
                let comp = |nd: usize| velocity[nd * d + axis];
                *o += if i == 0 {
                    (comp(node + step) - comp(node)) / self.h
                } else if i == n - 1 {
                    (comp(node) - comp(node - step)) / self.h
                } else {
                    (comp(node + step) - comp(node - step)) / (2.0 * self.h)
                };
            }
        }
        out
    }
}

/// Density values on the nodes of a grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub rho: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    pub fn new(grid: Grid, rho: Vec<f64>, time: f64) -> Result<Self> {
        if rho.len() != grid.len() {
            return Err(Error::InvalidConfig(format!(
                "{} density values for {} nodes",
                rho.len(),
                grid.len()
            )));
        }
        if rho.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::InvalidConfig("density must be finite and nonnegative".into()));
        }
        Ok(DensityField { grid, rho, time })
    }

    /// `h^d Σ ρ_i`.
    pub fn mass(&self) -> f64 {
        self.grid.cell_volume() * self.rho.iter().sum::<f64>()
    }

    pub fn center_of_mass(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let total: f64 = self.rho.iter().sum();
        let mut com = vec![0.0; d];
        for (node, r) in self.rho.iter().enumerate() {
            let p = self.grid.position(node);
            for c in 0..d {
                com[c] += r * p[c];
            }
        }
        com.iter_mut().for_each(|c| *c /= total);
        com
    }

    /// `max |x_i|` over nodes with `ρ_i > SUPPORT_THRESHOLD · max ρ`.
    pub fn support_radius(&self) -> f64 {
        let cut = SUPPORT_THRESHOLD * self.rho.iter().cloned().fold(0.0, f64::max);
        let d = self.grid.dim();
        self.rho
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > cut)
            .map(|(node, _)| {
                let p = self.grid.position(node);
                p[..d].iter().map(|c| c * c).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `h^d Σ ρ_i u_i` for nodal velocities `u`.
    pub fn momentum(&self, velocity: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        let mut out = vec![0.0; d];
        for (node, r) in self.rho.iter().enumerate() {
            for c in 0..d {
                out[c] += vol * r * velocity[node * d + c];
            }
        }
        out
    }

    /// Weighted configuration with weights `h^d ρ_i` on every node.
    pub fn weighted_configuration(&self) -> Result<WeightedConfiguration> {
        let vol = self.grid.cell_volume();
        WeightedConfiguration::new(
            self.grid.dim(),
            self.grid.positions(),
            self.rho.iter().map(|r| vol * r).collect(),
        )
    }
}

/// Constrained velocity on a grid.
#[derive(Debug, Clone)]
pub struct GridVelocity {
    /// Per node, `dim` components; zero on nodes outside the active set.
    pub values: Vec<f64>,
    pub solution: VelocitySolution,
}

/// Solves the velocity equation with weights `h^d ρ_i` over the active nodes.
pub fn velocity_on_grid(
    field: &DensityField,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
    weight_threshold: f64,
) -> Result<GridVelocity> {
    let config = field.weighted_configuration()?;
    let (values, solution) = solver::solve_configuration(&config, phi, potential, weight_threshold)?;
    Ok(GridVelocity { values, solution })
}

/// Fills the empty nodes from the velocity equation evaluated off the support,
///
/// ```text
/// u(x) = (Σ_k φ(|x−x_k|) w_k u_k − Σ_k ∇K(x−x_k) w_k) / Σ_k φ(|x−x_k|) w_k,
/// ```
///
/// which reads only values on the active set. Active nodes keep their solved values.
pub fn extend_velocity(
    field: &DensityField,
    velocity: &GridVelocity,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
) -> Vec<f64> {
    let grid = &field.grid;
    let d = grid.dim();
    let vol = grid.cell_volume();
    let sol = &velocity.solution;
    let mut is_active = vec![false; grid.len()];
    let mut sources = Vec::with_capacity(sol.active.len());
    for (j, &node) in sol.active.iter().enumerate() {
        is_active[node] = true;
        sources.push((grid.position(node), vol * field.rho[node], sol.velocity(j)));
    }
    let mut out = velocity.values.clone();
    for node in (0..grid.len()).filter(|&n| !is_active[n]) {
        let x = grid.position(node);
        let mut total = 0.0;
        let mut acc = [0.0; 2];
        for (xk, wk, uk) in &sources {
            let mut diff = [0.0; 2];
            let mut r2 = 0.0;
            for c in 0..d {
                diff[c] = x[c] - xk[c];
                r2 += diff[c] * diff[c];
            }
            let p = phi.value_sq(r2) * wk;
            total += p;
            let g = if r2 > 0.0 { potential.radial_factor(r2.sqrt()) } else { 0.0 };
            for c in 0..d {
                acc[c] += p * uk[c] - g * diff[c] * wk;
            }
        }
        for c in 0..d {
            out[node * d + c] = acc[c] / total;
        }
    }
    out
}

/// Backward semi-Lagrangian update with a prescribed nodal velocity.
///
/// Returns the new field and the mass removed by clamping negative values.
pub fn advect(field: &DensityField, velocity: &[f64], dt: f64) -> (DensityField, f64) {
    let grid = &field.grid;
    let d = grid.dim();
    let div = grid.divergence(velocity);
    let mut clamped = 0.0;
    let mut rho = vec![0.0; grid.len()];
    for (node, out) in rho.iter_mut().enumerate() {
        let x = grid.position(node);
        let mut y = [0.0; 2];
        for c in 0..d {
            y[c] = x[c] - dt * velocity[node * d + c];
        }
        let value = grid.interpolate(&field.rho, &y[..d]) * (1.0 - dt * div[node]);
        if value < 0.0 {
            clamped -= value;
        } else {
            *out = value;
        }
    }
    let new = DensityField { grid: grid.clone(), rho, time: field.time + dt };
    (new, clamped * grid.cell_volume())
}

/// Mass-conserving flux-form update along the backward characteristics.
///
/// In 2D the remap is split into an `x` sweep followed by a `y` sweep.
pub fn remap(field: &DensityField, velocity: &[f64], dt: f64) -> (DensityField, f64) {
    let grid = &field.grid;
    let d = grid.dim();
    let h = grid.spacing();
    let [nx, ny] = [grid.counts[0], grid.counts[1]];
    let mut rho = field.rho.clone();
    let mut clamped = 0.0;
    let mut line_rho = Vec::new();
    let mut line_u = Vec::new();
    let mut out = Vec::new();
    for axis in 0..d {
        let (len, lines) = if axis == 0 { (nx, ny) } else { (ny, nx) };
        let node = |line: usize, k: usize| if axis == 0 { grid.node(k, line) } else { grid.node(line, k) };
        for line in 0..lines {
            line_rho.clear();
            line_u.clear();
            for k in 0..len {
                let nd = node(line, k);
                line_rho.push(rho[nd]);
                line_u.push(velocity[nd * d + axis]);
            }
            out.resize(len, 0.0);
            clamped += remap_line(&line_rho, &line_u, dt / h, &mut out);
            for k in 0..len {
                rho[node(line, k)] = out[k];
            }
        }
    }
    let new = DensityField { grid: grid.clone(), rho, time: field.time + dt };
    (new, clamped * grid.cell_volume())
}

/// One-dimensional remap in index units: cell `k` spans `[k − ½, k + ½]` and
/// `ratio = dt/h`. Returns the clamped negative mass in units of `h^d`.
fn remap_line(rho: &[f64], u: &[f64], ratio: f64, out: &mut [f64]) -> f64 {
    let n = rho.len();
    let foot = |k: usize| {
        let ue = if k == 0 {
            u[0]
        } else if k == n {
            u[n - 1]
        } else {
            0.5 * (u[k - 1] + u[k])
        };
        k as f64 - 0.5 - ratio * ue
    };
    let integral = |a: f64, b: f64| {
        let lo = a.max(-0.5);
        let hi = b.min(n as f64 - 0.5);
        if !(hi > lo) {
            return 0.0;
        }
        let first = (lo + 0.5).floor() as usize;
        let last = ((hi + 0.5).ceil() as usize).min(n);
        (first..last)
            .map(|j| {
                let overlap = hi.min(j as f64 + 0.5) - lo.max(j as f64 - 0.5);
                if overlap > 0.0 {
                    rho[j] * overlap
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    };
    let mut clamped = 0.0;
    let mut left = foot(0);
    for (k, o) in out.iter_mut().enumerate() {
        let right = foot(k + 1);
        // Crossing foot points (dt·|Δu| > h) would give negative cell mass.
        let value = if right >= left { integral(left, right) } else { -integral(right, left) };
        if value < 0.0 {
            clamped -= value;
            *o = 0.0;
        } else {
            *o = value;
        }
        left = right;
    }
    clamped
}

/// Update rule applied after the velocity solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportScheme {
    /// Flux-form remap of cell masses; see [`remap`].
    #[default]
    Conservative,
    /// Interpolation at the foot point times `1 − dt·div u`; see [`advect`].
    Characteristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub weight_threshold: f64,
    pub renormalize_mass: bool,
    pub scheme: TransportScheme,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            weight_threshold: solver::DEFAULT_WEIGHT_THRESHOLD,
            renormalize_mass: false,
            scheme: TransportScheme::default(),
        }
    }
}

/// Result of one transport step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub field: DensityField,
    /// Solved velocity at the start of the step (zero off the active set).
    pub velocity: GridVelocity,
    /// `h^d Σ ρ_i u_i` at the start of the step.
    pub momentum: Vec<f64>,
    pub clamped_mass: f64,
    /// `dt · max|u| / h` over the nodes that carry mass.
    pub courant: f64,
}

/// Advances the density by one step of length `dt`.
pub fn step(
    field: &DensityField,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
    dt: f64,
    options: &StepOptions,
) -> Result<StepReport> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let velocity = velocity_on_grid(field, phi, potential, options.weight_threshold)?;
    let extended = extend_velocity(field, &velocity, phi, potential);
    let courant = dt * velocity.solution.max_speed_component() / field.grid.spacing();
    if courant > 1.0 {
        warn!("t = {:.4}: dt·max|u| = {:.3}h exceeds one cell", field.time, courant);
    }
    let mass_before = field.mass();
    let (mut next, clamped_mass) = match options.scheme {
        TransportScheme::Conservative => remap(field, &extended, dt),
        TransportScheme::Characteristic => advect(field, &extended, dt),
    };
    if options.renormalize_mass {
        let m = next.mass();
        if m > 0.0 {
            let s = mass_before / m;
            next.rho.iter_mut().for_each(|r| *r *= s);
        }
    }
    let momentum = field.momentum(&velocity.values);
    Ok(StepReport { field: next, velocity, momentum, clamped_mass, courant })
}

/// Named initial densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// `C_s exp(−1/(s² − x²))` on `(−s, s)`, normalized to unit mass on the grid.
    Bump { s: f64 },
    /// `½(1 − x)` on `(−1, 1)`.
    LinearRamp,
    /// `(r − 1)²(r − 2)²` on `1 < r < 2`, scaled to total `mass`.
    RadialQuartic {
        #[serde(default = "default_disk_mass")]
        mass: f64,
    },
}

fn default_disk_mass() -> f64 {
    analysis::UNIT_DISK_MASS
}

impl InitialCondition {
    /// Builds a condition from a name and numeric parameters.
    pub fn from_name(name: &str, params: &HashMap<String, f64>) -> Result<Self> {
        let get = |key: &str| {
            params
                .get(key)
                .copied()
                .ok_or_else(|| Error::InvalidConfig(format!("initial condition `{name}` needs `{key}`")))
        };
        match name {
            "bump" => Ok(InitialCondition::Bump { s: get("s")? }),
            "linear_ramp" => Ok(InitialCondition::LinearRamp),
            "radial_quartic" => Ok(InitialCondition::RadialQuartic {
                mass: params.get("mass").copied().unwrap_or_else(default_disk_mass),
            }),
            other => Err(Error::UnknownInitialCondition(other.to_string())),
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            InitialCondition::Bump { .. } | InitialCondition::LinearRamp => 1,
            InitialCondition::RadialQuartic { .. } => 2,
        }
    }

    /// Radius of a ball around the origin containing the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            InitialCondition::Bump { s } => *s,
            InitialCondition::LinearRamp => 1.0,
            InitialCondition::RadialQuartic { .. } => 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitialCondition::Bump { s } if !(*s > 0.0) || !s.is_finite() => {
                Err(Error::InvalidConfig(format!("initial.s must be positive, got {s}")))
            }
            InitialCondition::RadialQuartic { mass } if !(*mass > 0.0) || !mass.is_finite() => {
                Err(Error::InvalidConfig(format!("initial.mass must be positive, got {mass}")))
            }
            _ => Ok(()),
        }
    }

    /// Samples the density on `grid`.
    pub fn sample(&self, grid: &Grid) -> Result<DensityField> {
        self.validate()?;
        if grid.dim() != self.dimension() {
            return Err(Error::InvalidConfig(format!(
                "initial condition is {}-dimensional but the grid is {}-dimensional",
                self.dimension(),
                grid.dim()
            )));
        }
        let mut rho: Vec<f64> = (0..grid.len())
            .map(|node| {
                let p = grid.position(node);
                match self {
                    InitialCondition::Bump { s } => {
                        let x = p[0];
                        if x.abs() < *s {
                            (-1.0 / (s * s - x * x)).exp()
                        } else {
                            0.0
                        }
                    }
                    InitialCondition::LinearRamp => {
                        // Half weight on the endpoints: trapezoidal mass.
                        let x = p[0];
                        if x.abs() < 1.0 - 1e-9 {
                            0.5 * (1.0 - x)
                        } else if x.abs() <= 1.0 + 1e-9 {
                            // Half of ρ(−1) = 1 and of ρ(1) = 0.
                            if x < 0.0 {
                                0.5
                            } else {
                                0.0
                            }
                        } else {
                            0.0
                        }
                    }
                    InitialCondition::RadialQuartic { .. } => {
                        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                        if r > 1.0 && r < 2.0 {
                            (r - 1.0).powi(2) * (r - 2.0).powi(2)
                        } else {
                            0.0
                        }
                    }
                }
            })
            .collect();
        let target_mass = match self {
            InitialCondition::Bump { .. } => Some(1.0),
            InitialCondition::LinearRamp => Some(1.0),
            InitialCondition::RadialQuartic { mass } => Some(*mass),
        };
        if let Some(m) = target_mass {
            let raw = grid.cell_volume() * rho.iter().sum::<f64>();
            if !(raw > 0.0) {
                return Err(Error::InvalidConfig("initial density has no mass on this grid".into()));
            }
            rho.iter_mut().for_each(|r| *r *= m / raw);
        }
        DensityField::new(grid.clone(), rho, 0.0)
    }
}

/// Per-step scalars written to the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub t: f64,
    pub mass: f64,
    pub momentum: Vec<f64>,
    pub com: Vec<f64>,
    pub support_radius: f64,
    pub support_bound: Option<f64>,
    /// Mass removed by clamping while producing this state.
    pub clamped_mass: f64,
    pub error_to_target: Option<f64>,
}

/// Receives snapshots and diagnostics as a run progresses.
pub trait RunObserver {
    fn snapshot(&mut self, _field: &DensityField, _velocity: &[f64]) -> std::io::Result<()> {
        Ok(())
    }

    fn diagnostics(&mut self, _record: &Diagnostics) -> std::io::Result<()> {
        Ok(())
    }
}

/// Observer that keeps nothing.
pub struct Discard;

impl RunObserver for Discard {}

/// Observer that keeps every snapshot in memory.
#[derive(Default)]
pub struct Recorder {
    pub snapshots: Vec<DensityField>,
}

impl RunObserver for Recorder {
    fn snapshot(&mut self, field: &DensityField, _velocity: &[f64]) -> std::io::Result<()> {
        self.snapshots.push(field.clone());
        Ok(())
    }
}

/// Aggregate outcome of a transport run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub final_field: DensityField,
    pub diagnostics: Vec<Diagnostics>,
    /// `max_t |h^d Σρu| / (mass · max|u|)` over the run.
    pub max_momentum_ratio: f64,
    /// Worst `‖Au − b‖∞ / (‖b‖∞ + 1e−3)` seen; must stay far below 1e−9.
    pub max_residual_ratio: f64,
    /// Total clamped mass over the run.
    pub clamped_total: f64,
    pub initial_mass: f64,
}

impl RunSummary {
    /// Largest relative deviation of the mass from its initial value.
    pub fn mass_drift(&self) -> f64 {
        self.diagnostics
            .iter()
            .map(|d| (d.mass - self.initial_mass).abs() / self.initial_mass)
            .fold(0.0, f64::max)
    }

    /// Largest distance of the center of mass from its initial position.
    pub fn com_drift(&self) -> f64 {
        let first = &self.diagnostics[0].com;
        self.diagnostics
            .iter()
            .map(|d| first.iter().zip(&d.com).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Runs the grid simulation described by `config` from `t = 0` to `t_final`.
pub fn run(config: &SimConfig, observer: &mut dyn RunObserver) -> Result<RunSummary> {
    config.validate()?;
    let grid = Grid::new(&config.domain_lower, &config.domain_upper, config.h)?;
    let mut field = config.initial.sample(&grid)?;
    let phi = config.influence;
    let potential = config.potential;
    let options = StepOptions {
        weight_threshold: config.weight_threshold,
        renormalize_mass: config.renormalize_mass,
        scheme: config.scheme,
    };
    let steps = config.step_count();
    let dt = config.dt;
    let cadence = ((config.snapshot_cadence / dt).round() as usize).max(1);

    let initial_mass = field.mass();
    let bound = potential.gradient_sup_norm().map(|g| (field.support_radius(), g));
    let target = config.target.as_ref().map(TargetMetric::new).transpose()?;

    let mut diagnostics = Vec::with_capacity(steps + 1);
    let mut max_momentum_ratio: f64 = 0.0;
    let mut max_residual_ratio: f64 = 0.0;
    let mut clamped_total = 0.0;
    let mut pending_clamped = 0.0;

    let mut record = |field: &DensityField,
                      velocity: &GridVelocity,
                      clamped: f64,
                      observer: &mut dyn RunObserver|
     -> Result<Diagnostics> {
        let sol = &velocity.solution;
        if !sol.momentum_ok() {
            return Err(Error::ConstraintViolation(format!(
                "t = {}: momentum residual {:e} exceeds tolerance",
                field.time, sol.momentum_residual
            )));
        }
        if !sol.residual_ok() {
            return Err(Error::ConstraintViolation(format!(
                "t = {}: ‖Au − b‖∞ = {:e} exceeds tolerance",
                field.time, sol.residual_inf
            )));
        }
        let momentum = field.momentum(&velocity.values);
        let mass = field.mass();
        let speed = sol.max_speed_component();
        if speed > 0.0 {
            let ratio = momentum.iter().fold(0.0, |m: f64, p| m.max(p.abs())) / (mass * speed);
            max_momentum_ratio = max_momentum_ratio.max(ratio);
        }
        max_residual_ratio = max_residual_ratio.max(sol.residual_inf / (sol.b_inf + 1e-3));
        let support_bound = match bound {
            Some((s0, g)) => Some(analysis::support_bound(field.time, s0, &phi, g)?),
            None => None,
        };
        let error_to_target = match &target {
            Some(t) => Some(t.evaluate(field)?),
            None => None,
        };
        let rec = Diagnostics {
            t: field.time,
            mass,
            momentum,
            com: field.center_of_mass(),
            support_radius: field.support_radius(),
            support_bound,
            clamped_mass: clamped,
            error_to_target,
        };
        observer.diagnostics(&rec)?;
        Ok(rec)
    };

    for k in 0..steps {
        let report = step(&field, &phi, &potential, dt, &options)?;
        let rec = record(&field, &report.velocity, pending_clamped, observer)?;
        if k % cadence == 0 {
            observer.snapshot(&field, &report.velocity.values)?;
        }
        diagnostics.push(rec);
        pending_clamped = report.clamped_mass;
        clamped_total += report.clamped_mass;
        field = report.field;
        // Keep the clock on the exact grid k·dt.
        field.time = (k + 1) as f64 * dt;
        let fraction = field.mass() / initial_mass;
        if fraction < 0.5 {
            return Err(Error::MassCollapse { time: field.time, fraction });
        }
        debug!("t = {:.4} mass = {:.6}", field.time, field.mass());
    }
    let velocity = velocity_on_grid(&field, &phi, &potential, options.weight_threshold)?;
    let rec = record(&field, &velocity, pending_clamped, observer)?;
    observer.snapshot(&field, &velocity.values)?;
    diagnostics.push(rec);

    Ok(RunSummary {
        steps,
        final_field: field,
        diagnostics,
        max_momentum_ratio,
        max_residual_ratio,
        clamped_total,
        initial_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_1d() -> Grid {
        Grid::new(&[-2.0], &[2.0], 0.02).unwrap()
    }

    #[test]
    fn grid_coordinates_are_exact() {
        let g = grid_1d();
        assert_eq!(g.len(), 201);
        assert_eq!(g.coordinate(0, 100), -2.0 + 100.0 * 0.02);
        let g2 = Grid::new(&[-2.2, -2.2], &[2.2, 2.2], 0.04).unwrap();
        assert_eq!(g2.counts(), &[111, 111]);
        assert!(Grid::new(&[-1.0], &[1.0], 0.3).is_err());
        assert!(Grid::new(&[1.0], &[-1.0], 0.1).is_err());
        assert!(Grid::new(&[0.0], &[1.0], 0.0).is_err());
    }

    #[test]
    fn interpolation_reproduces_linear_data() {
        let g = Grid::new(&[-1.0, -1.0], &[1.0, 1.0], 0.25).unwrap();
        let vals: Vec<f64> = (0..g.len())
            .map(|n| {
                let p = g.position(n);
                1.0 + 2.0 * p[0] - 0.5 * p[1]
            })
            .collect();
        for y in [[0.1, 0.33], [-0.99, 0.7], [1.0, 1.0]] {
            let v = g.interpolate(&vals, &y);
            assert!((v - (1.0 + 2.0 * y[0] - 0.5 * y[1])).abs() < 1e-14);
        }
        assert_eq!(g.interpolate(&vals, &[1.01, 0.0]), 0.0);
    }

    #[test]
    fn zero_velocity_is_identity() {
        let g = grid_1d();
        let field = InitialCondition::LinearRamp.sample(&g).unwrap();
        let (next, clamped) = advect(&field, &vec![0.0; g.len()], 0.01);
        for (a, b) in next.rho.iter().zip(&field.rho) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(clamped, 0.0);
    }

    #[test]
    fn constant_translation_keeps_constant_interior() {
        let g = grid_1d();
        let field = DensityField::new(g.clone(), vec![0.7; g.len()], 0.0).unwrap();
        let (next, _) = advect(&field, &vec![0.3; g.len()], 0.01);
        for i in 1..g.len() {
            assert!((next.rho[i] - 0.7).abs() < 1e-14, "node {i}");
        }
        // The inflow node's foot point leaves the box.
        assert_eq!(next.rho[0], 0.0);
    }

    #[test]
    fn initial_densities() {
        let g = grid_1d();
        let bump = InitialCondition::Bump { s: 0.5 }.sample(&g).unwrap();
        assert!((bump.mass() - 1.0).abs() < 1e-12);
        assert!(bump.center_of_mass()[0].abs() < 1e-12);
        let ramp = InitialCondition::LinearRamp.sample(&g).unwrap();
        assert!((ramp.mass() - 1.0).abs() < 1e-12);
        assert!((ramp.center_of_mass()[0] + 1.0 / 3.0).abs() < 1e-3);
        let g2 = Grid::new(&[-2.2, -2.2], &[2.2, 2.2], 0.08).unwrap();
        let disk = InitialCondition::RadialQuartic { mass: 0.3 }.sample(&g2).unwrap();
        assert!((disk.mass() - 0.3).abs() < 1e-12);
        assert!(InitialCondition::from_name("gaussian", &HashMap::new()).is_err());
        // Node coordinates that round just past ±1.
        let shifted = Grid::new(&[-1.2], &[1.2], 0.02).unwrap();
        let ramp = InitialCondition::LinearRamp.sample(&shifted).unwrap();
        assert!((ramp.mass() - 1.0).abs() < 1e-12);
        assert!(InitialCondition::Bump { s: 0.5 }.sample(&g2).is_err());
    }

    #[test]
    fn solved_velocity_is_antisymmetric_for_symmetric_data() {
        let g = grid_1d();
        let field = InitialCondition::Bump { s: 1.5 }.sample(&g).unwrap();
        let v = velocity_on_grid(&field, &InfluenceFunction::InversePowerHalf, &InteractionPotential::QuarticQuadratic, 1e-12)
            .unwrap();
        let n = g.len();
        for i in 0..n {
            assert!((v.values[i] + v.values[n - 1 - i]).abs() < 1e-10, "node {i}");
        }
    }

    #[test]
    fn extension_keeps_active_values() {
        let g = grid_1d();
        let field = InitialCondition::Bump { s: 0.5 }.sample(&g).unwrap();
        let phi = InfluenceFunction::InversePowerHalf;
        let pot = InteractionPotential::QuarticQuadratic;
        let v = velocity_on_grid(&field, &phi, &pot, 1e-12).unwrap();
        let ext = extend_velocity(&field, &v, &phi, &pot);
        for &node in &v.solution.active {
            assert_eq!(ext[node], v.values[node]);
        }
        assert!(ext.iter().all(|u| u.is_finite()));
        // Far from the bump the quartic attraction pulls inward.
        assert!(ext[g.len() - 1] < 0.0 && ext[0] > 0.0);
    }
}
