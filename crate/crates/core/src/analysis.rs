//! Closed-form steady states, error metrics and the a-priori support bound.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::InfluenceFunction;
use crate::transport::DensityField;

/// Wave number `μ` of the Morse equilibrium.
pub const MORSE_MU: f64 = FRAC_1_SQRT_2;
/// Half-width `H` of the Morse equilibrium support; `μH = π/2`.
pub const MORSE_HALF_WIDTH: f64 = PI * FRAC_1_SQRT_2;
/// Offset `λ` of the Morse equilibrium, `−√2/3`.
///
/// This is the value for which `K∗ρ` is constant on the support and for which
/// `MORSE_SCALE` gives unit mass.
pub const MORSE_LAMBDA: f64 = -SQRT_2 / 3.0;
/// Scale `C = 3/(2(π + 3√2))`.
pub const MORSE_SCALE: f64 = 3.0 / (2.0 * (PI + 3.0 * SQRT_2));
/// Center of the Morse equilibrium as tabulated with the closed form.
pub const MORSE_DEFAULT_CENTER: f64 = 1.0 / 3.0;

/// Height of the disk equilibrium in the plane.
pub const UNIT_DISK_HEIGHT: f64 = 0.1;
/// Mass of a disk of radius one at height 0.1.
pub const UNIT_DISK_MASS: f64 = UNIT_DISK_HEIGHT * PI;

/// `C (cos(μ(x − c)) − λ)` for `|x − c| < H`, zero elsewhere.
pub fn eval_morse_steady(x: f64, center: f64) -> f64 {
    let s = x - center;
    if s.abs() < MORSE_HALF_WIDTH {
        MORSE_SCALE * ((MORSE_MU * s).cos() - MORSE_LAMBDA)
    } else {
        0.0
    }
}

/// Known equilibria used as targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SteadyState {
    /// `½[δ(x − ½) + δ(x + ½)]`.
    TwoDelta,
    /// Morse cosine profile centered at `center`.
    MorseCosine {
        #[serde(default = "default_morse_center")]
        center: f64,
    },
    /// `height · 1_{|x − c| < 1}` in the plane.
    UnitDisk {
        #[serde(default = "default_disk_height")]
        height: f64,
        #[serde(default)]
        center: [f64; 2],
    },
}

fn default_morse_center() -> f64 {
    MORSE_DEFAULT_CENTER
}

fn default_disk_height() -> f64 {
    UNIT_DISK_HEIGHT
}

impl SteadyState {
    pub fn dimension(&self) -> usize {
        match self {
            SteadyState::TwoDelta | SteadyState::MorseCosine { .. } => 1,
            SteadyState::UnitDisk { .. } => 2,
        }
    }

    /// Pointwise density; `None` for atomic states.
    pub fn density(&self, x: &[f64]) -> Option<f64> {
        match self {
            SteadyState::TwoDelta => None,
            SteadyState::MorseCosine { center } => Some(eval_morse_steady(x[0], *center)),
            SteadyState::UnitDisk { height, center } => {
                let dx = x[0] - center[0];
                let dy = x[1] - center[1];
                Some(if dx * dx + dy * dy < 1.0 { *height } else { 0.0 })
            }
        }
    }

    /// One-dimensional states as discrete measures. Continuous profiles are
    /// sampled by the midpoint rule with cells of width `resolution`.
    pub fn measure_1d(&self, resolution: f64) -> Result<DiscreteMeasure> {
        match self {
            SteadyState::TwoDelta => DiscreteMeasure::new(vec![(-0.5, 0.5), (0.5, 0.5)]),
            SteadyState::MorseCosine { center } => {
                let cells = (2.0 * MORSE_HALF_WIDTH / resolution).ceil() as usize;
                let width = 2.0 * MORSE_HALF_WIDTH / cells as f64;
                let start = center - MORSE_HALF_WIDTH;
                DiscreteMeasure::new(
                    (0..cells)
                        .map(|k| {
                            let x = start + (k as f64 + 0.5) * width;
                            (x, width * eval_morse_steady(x, *center))
                        })
                        .collect(),
                )
            }
            SteadyState::UnitDisk { .. } => {
                Err(Error::Domain("the disk equilibrium is two-dimensional".into()))
            }
        }
    }
}

/// Finite set of weighted atoms on the line.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

impl DiscreteMeasure {
    /// Atoms as `(position, mass)` pairs with finite positions and nonnegative masses.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.iter().any(|(x, m)| !x.is_finite() || !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::Domain("atoms need finite positions and nonnegative masses".into()));
        }
        Ok(DiscreteMeasure { atoms })
    }

    /// Atoms at the grid nodes with masses `h ρ_i`.
    pub fn from_field(field: &DensityField) -> Result<Self> {
        if field.grid.dim() != 1 {
            return Err(Error::Domain("discrete measures live on the line".into()));
        }
        let h = field.grid.spacing();
        Self::new(
            field
                .rho
                .iter()
                .enumerate()
                .map(|(i, r)| (field.grid.coordinate(0, i), h * r))
                .collect(),
        )
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// Same atoms scaled to total mass `target`.
    pub fn rescaled(&self, target: f64) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::EmptyMeasure);
        }
        Ok(DiscreteMeasure { atoms: self.atoms.iter().map(|&(x, w)| (x, w * target / m)).collect() })
    }
}

/// `W₁(μ, ν) = ∫ |F_μ − F_ν| dx`, exact for atomic measures of equal mass.
pub fn wasserstein1_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    let (m1, m2) = (mu.mass(), nu.mass());
    if mu.atoms.is_empty() || nu.atoms.is_empty() || !(m1 > 0.0) || !(m2 > 0.0) {
        return Err(Error::EmptyMeasure);
    }
    if (m1 - m2).abs() > 1e-8 * m1.max(m2).max(1.0) {
        return Err(Error::MassMismatch(m1, m2));
    }
    let a = sorted_atoms(&mu.atoms);
    let b = sorted_atoms(&nu.atoms);
    // Walk the merged breakpoints; `gap` is F_μ − F_ν on the current interval.
    let (mut i, mut j) = (0, 0);
    let mut gap = 0.0f64;
    let mut prev: Option<f64> = None;
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let take_a = j >= b.len() || (i < a.len() && a[i].0 <= b[j].0);
        let (x, delta) = if take_a {
            i += 1;
            (a[i - 1].0, a[i - 1].1)
        } else {
            j += 1;
            (b[j - 1].0, -b[j - 1].1)
        };
        if let Some(p) = prev {
            total += gap.abs() * (x - p);
        }
        gap += delta;
        prev = Some(x);
    }
    Ok(total)
}

fn sorted_atoms(atoms: &[(f64, f64)]) -> std::borrow::Cow<'_, [(f64, f64)]> {
    if atoms.windows(2).all(|w| w[0].0 <= w[1].0) {
        std::borrow::Cow::Borrowed(atoms)
    } else {
        let mut v = atoms.to_vec();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        std::borrow::Cow::Owned(v)
    }
}

/// `h^d Σ |ρ_i − target(x_i)|`.
pub fn l1_error_on_grid(field: &DensityField, target: &SteadyState) -> Result<f64> {
    let grid = &field.grid;
    if grid.dim() != target.dimension() {
        return Err(Error::Domain("target and field dimensions differ".into()));
    }
    let mut sum = 0.0;
    for (node, r) in field.rho.iter().enumerate() {
        let p = grid.position(node);
        let t = target
            .density(&p[..grid.dim()])
            .ok_or_else(|| Error::Domain("atomic targets have no pointwise density".into()))?;
        sum += (r - t).abs();
    }
    Ok(grid.cell_volume() * sum)
}

/// Distance of a field to a target: `W₁` between unit-mass normalizations on the
/// line, the `L¹` grid error in the plane.
pub fn error_to_target(field: &DensityField, target: &SteadyState) -> Result<f64> {
    TargetMetric::new(target)?.evaluate(field)
}

/// Resolution of the midpoint sampling used to turn continuous 1D targets into atoms.
pub const TARGET_RESOLUTION: f64 = 1e-4;

/// A target prepared once for repeated evaluation during a run.
#[derive(Debug, Clone)]
pub enum TargetMetric {
    Wasserstein(DiscreteMeasure),
    L1(SteadyState),
}

impl TargetMetric {
    pub fn new(target: &SteadyState) -> Result<Self> {
        Ok(match target.dimension() {
            1 => TargetMetric::Wasserstein(target.measure_1d(TARGET_RESOLUTION)?.rescaled(1.0)?),
            _ => TargetMetric::L1(target.clone()),
        })
    }

    pub fn evaluate(&self, field: &DensityField) -> Result<f64> {
        match self {
            TargetMetric::Wasserstein(nu) => {
                let mu = DiscreteMeasure::from_field(field)?.rescaled(1.0)?;
                wasserstein1_1d(&mu, nu)
            }
            TargetMetric::L1(target) => l1_error_on_grid(field, target),
        }
    }
}

/// `½ Ψ⁻¹(Ψ(2 S₀) + 2t ‖∇K‖∞)`.
pub fn support_bound(t: f64, s0: f64, phi: &InfluenceFunction, grad_sup: f64) -> Result<f64> {
    if !grad_sup.is_finite() {
        return Err(Error::UnboundedGradient);
    }
    if !(t >= 0.0) || !(s0 >= 0.0) || !(grad_sup >= 0.0) {
        return Err(Error::Domain(format!(
            "support bound needs t, S0, ‖∇K‖ ≥ 0 (got {t}, {s0}, {grad_sup})"
        )));
    }
    let y = phi.psi(2.0 * s0)? + 2.0 * t * grad_sup;
    // Ψ⁻¹∘Ψ can round below the identity; the bound never lies below S0.
    Ok((0.5 * phi.psi_inverse(y)?).max(s0))
}
