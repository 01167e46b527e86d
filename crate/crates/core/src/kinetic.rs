//! Particle system with inertia `ε` and its first-order limit.
//!
//! ```text
//! dx_i/dt = v_i
//! ε dv_i/dt = (1/N) Σ_j φ(|x_j − x_i|)(v_j − v_i) − (1/N) Σ_j ∇K(x_i − x_j)
//! ```
//!
//! As `ε → 0` the velocities relax onto the solution of the implicit velocity
//! equation with uniform weights `1/N`, and positions follow that flow.

use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SweepConfig;
use crate::error::{Error, Result};
use crate::kernels::{InfluenceFunction, InteractionPotential};
use crate::solver::{solve_configuration, WeightedConfiguration};

/// Number of common sample times in an ε-sweep.
pub const SWEEP_SAMPLES: usize = 100;

/// Bound on `I(T)/ε²` for the bundled Morse sweeps, whose largest observed
/// value is about 4.3e−4.
pub const FLUCTUATION_BOUND: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// Explicit Euler in velocity, restricted to `dt ≤ 0.1 ε / φ(0)`.
    Strict,
    /// Alignment treated implicitly, interaction explicitly. Conserves total
    /// momentum exactly and stays stable for `dt` of order `ε`.
    #[default]
    SemiImplicit,
}

impl Integrator {
    /// Largest step this integrator takes for inertia `epsilon`.
    pub fn step_limit(&self, epsilon: f64, phi: &InfluenceFunction) -> f64 {
        match self {
            Integrator::Strict => 0.1 * epsilon / phi.value(0.0),
            Integrator::SemiImplicit => 0.25 * epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticState {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub epsilon: f64,
    pub time: f64,
}

impl KineticState {
    pub fn new(dim: usize, positions: Vec<f64>, velocities: Vec<f64>, epsilon: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Domain(format!("dimension must be 1 or 2, got {dim}")));
        }
        if positions.is_empty() || !positions.len().is_multiple_of(dim) || velocities.len() != positions.len() {
            return Err(Error::Domain(format!(
                "{} position and {} velocity entries do not form particles in dimension {dim}",
                positions.len(),
                velocities.len()
            )));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
        }
        if positions.iter().chain(&velocities).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite particle data".into()));
        }
        Ok(KineticState { dim, positions, velocities, epsilon, time: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Mean velocity `(1/N) Σ v_i`.
    pub fn mean_velocity(&self) -> Vec<f64> {
        mean_components(&self.velocities, self.dim)
    }

    /// Largest distance of a particle from the origin.
    pub fn max_radius(&self) -> f64 {
        max_radius(&self.positions, self.dim)
    }
}

fn mean_components(values: &[f64], dim: usize) -> Vec<f64> {
    let n = (values.len() / dim) as f64;
    (0..dim).map(|c| values.iter().skip(c).step_by(dim).sum::<f64>() / n).collect()
}

fn max_radius(positions: &[f64], dim: usize) -> f64 {
    positions.chunks(dim).map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Seeded particle cloud: positions uniform in `[−half_width, half_width]^d`,
/// velocities uniform in `[−velocity_scale, velocity_scale]^d` shifted to zero mean.
pub fn random_cloud(
    n: usize,
    dim: usize,
    half_width: f64,
    velocity_scale: f64,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-half_width..=half_width)).collect();
    let mut velocities: Vec<f64> =
        (0..n * dim).map(|_| rng.gen_range(-velocity_scale..=velocity_scale)).collect();
    let mean = mean_components(&velocities, dim);
    for (k, v) in velocities.iter_mut().enumerate() {
        *v -= mean[k % dim];
    }
    (positions, velocities)
}

/// Pairwise `φ_ij / N` and the interaction term `−(1/N) Σ_j ∇K(x_i − x_j)`.
struct PairTerms {
    n: usize,
    coupling: Vec<f64>,
    interaction: Vec<f64>,
}

fn pair_terms(dim: usize, positions: &[f64], phi: &InfluenceFunction, potential: &InteractionPotential) -> PairTerms {
    let n = positions.len() / dim;
    let inv_n = 1.0 / n as f64;
    let mut coupling = vec![0.0; n * n];
    let mut interaction = vec![0.0; n * dim];
    let mut diff = [0.0; 2];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut r2 = 0.0;
            for c in 0..dim {
                diff[c] = positions[i * dim + c] - positions[j * dim + c];
                r2 += diff[c] * diff[c];
            }
            let p = phi.value_sq(r2) * inv_n;
            coupling[i * n + j] = p;
            coupling[j * n + i] = p;
            if r2 > 0.0 {
                let g = potential.radial_factor(r2.sqrt()) * inv_n;
                for c in 0..dim {
                    interaction[i * dim + c] -= g * diff[c];
                    interaction[j * dim + c] += g * diff[c];
                }
            }
        }
    }
    PairTerms { n, coupling, interaction }
}

fn forces_from(state: &KineticState, terms: &PairTerms) -> Vec<f64> {
    let (n, dim) = (terms.n, state.dim);
    let mut out = terms.interaction.clone();
    for i in 0..n {
        for j in 0..n {
            let p = terms.coupling[i * n + j];
            if p != 0.0 {
                for c in 0..dim {
                    out[i * dim + c] += p * (state.velocities[j * dim + c] - state.velocities[i * dim + c]);
                }
            }
        }
    }
    out
}

/// Right-hand side `ε dv_i/dt` for every particle, flattened.
pub fn forces(state: &KineticState, phi: &InfluenceFunction, potential: &InteractionPotential) -> Vec<f64> {
    forces_from(state, &pair_terms(state.dim, &state.positions, phi, potential))
}

/// Right-hand side `ε dv_i/dt` for particle `i`.
pub fn force(state: &KineticState, phi: &InfluenceFunction, potential: &InteractionPotential, i: usize) -> Vec<f64> {
    forces(state, phi, potential)[i * state.dim..(i + 1) * state.dim].to_vec()
}

/// `(1/N) Σ_i |F_i|²`, the squared distance of the velocities from the
/// first-order velocity field.
pub fn fluctuation(state: &KineticState, phi: &InfluenceFunction, potential: &InteractionPotential) -> f64 {
    let f = forces(state, phi, potential);
    f.iter().map(|v| v * v).sum::<f64>() / state.len() as f64
}

/// Advances the state by `dt`; positions move with the updated velocities.
pub fn step_kinetic(
    state: &mut KineticState,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
    dt: f64,
    integrator: Integrator,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("time step must be positive, got {dt}")));
    }
    let terms = pair_terms(state.dim, &state.positions, phi, potential);
    let (n, dim) = (terms.n, state.dim);
    let ratio = dt / state.epsilon;
    match integrator {
        Integrator::Strict => {
            let limit = integrator.step_limit(state.epsilon, phi);
            if dt > limit * (1.0 + 1e-12) {
                return Err(Error::Stability { dt, limit });
            }
            let f = forces_from(state, &terms);
            for (v, fi) in state.velocities.iter_mut().zip(&f) {
                *v += ratio * fi;
            }
        }
        Integrator::SemiImplicit => {
            // (ε/dt I + L) v' = (ε/dt) v + g, with L the graph Laplacian of φ_ij/N.
            // eᵀL = 0 and Σ g = 0, so Σ v' = Σ v.
            let inv = 1.0 / ratio;
            let mat = Mat::<f64>::from_fn(n, n, |i, j| {
                if i == j {
                    inv + (0..n).map(|k| terms.coupling[i * n + k]).sum::<f64>()
                } else {
                    -terms.coupling[i * n + j]
                }
            });
            let rhs = Mat::<f64>::from_fn(n, dim, |i, c| {
                inv * state.velocities[i * dim + c] + terms.interaction[i * dim + c]
            });
            let sol = mat.partial_piv_lu().solve(&rhs);
            for i in 0..n {
                for c in 0..dim {
                    state.velocities[i * dim + c] = sol[(i, c)];
                }
            }
            if state.velocities.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularSolve("non-finite velocity in kinetic step".into()));
            }
        }
    }
    for (x, v) in state.positions.iter_mut().zip(&state.velocities) {
        *x += dt * v;
    }
    state.time += dt;
    Ok(())
}

/// Particles of the first-order model, each carrying weight `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderState {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub time: f64,
}

impl FirstOrderState {
    pub fn new(dim: usize, positions: Vec<f64>) -> Result<Self> {
        WeightedConfiguration::uniform(dim, positions.clone())?;
        Ok(FirstOrderState { dim, positions, time: 0.0 })
    }
}

/// First-order velocities `u(x_i)` for uniform weights `1/N`.
pub fn first_order_reference(
    dim: usize,
    positions: &[f64],
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
) -> Result<Vec<f64>> {
    let config = WeightedConfiguration::uniform(dim, positions.to_vec())?;
    let (velocities, solution) = solve_configuration(&config, phi, potential, 0.0)?;
    if !solution.residual_ok() {
        return Err(Error::ConstraintViolation(format!(
            "first-order residual {:e} exceeds tolerance",
            solution.residual_inf
        )));
    }
    Ok(velocities)
}

/// Forward Euler step of the first-order particle flow. Returns the velocities used.
pub fn step_first_order(
    state: &mut FirstOrderState,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
    dt: f64,
) -> Result<Vec<f64>> {
    let u = first_order_reference(state.dim, &state.positions, phi, potential)?;
    for (x, v) in state.positions.iter_mut().zip(&u) {
        *x += dt * v;
    }
    state.time += dt;
    Ok(u)
}

/// One inertia value of an ε-sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    /// Largest `|x_ε − x|` over particles and sample times in `[T/10, T]`.
    pub max_pos_err: f64,
    /// Largest `|v_ε − u(x)|` over particles and sample times in `[T/10, T]`.
    pub max_vel_err: f64,
    pub fluct_final: f64,
    pub fluct_over_eps2: f64,
    /// Largest `|mean velocity|` seen during the run.
    pub momentum_drift: f64,
    /// Largest particle distance from the origin during the run.
    pub max_radius: f64,
    pub dt: f64,
}

/// Positions and velocities of the first-order flow at the sample times.
struct Reference {
    positions: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

fn substeps(interval: f64, max_dt: f64) -> usize {
    ((interval / max_dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
}

fn first_order_samples(cfg: &SweepConfig, positions: &[f64]) -> Result<Reference> {
    let interval = cfg.t_final / SWEEP_SAMPLES as f64;
    let sub = substeps(interval, cfg.reference_dt);
    let dt = interval / sub as f64;
    let mut state = FirstOrderState::new(cfg.dimension, positions.to_vec())?;
    let mut out = Reference { positions: Vec::new(), velocities: Vec::new() };
    for _ in 0..SWEEP_SAMPLES {
        for _ in 0..sub {
            step_first_order(&mut state, &cfg.influence, &cfg.potential, dt)?;
        }
        out.velocities.push(first_order_reference(cfg.dimension, &state.positions, &cfg.influence, &cfg.potential)?);
        out.positions.push(state.positions.clone());
    }
    Ok(out)
}

fn max_pointwise_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    a.chunks(dim)
        .zip(b.chunks(dim))
        .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Runs the kinetic system for every `ε` of the sweep from a common seeded
/// cloud and compares it with the first-order flow at common sample times.
pub fn epsilon_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let (positions, velocities) =
        random_cloud(cfg.particles, cfg.dimension, cfg.box_half_width, cfg.velocity_scale, cfg.seed);
    let reference = first_order_samples(cfg, &positions)?;
    let interval = cfg.t_final / SWEEP_SAMPLES as f64;
    let first_compared = SWEEP_SAMPLES / 10 - 1;

    let mut rows = Vec::with_capacity(cfg.eps_list.len());
    for &epsilon in &cfg.eps_list {
        let max_dt = cfg.dt_max.min(cfg.integrator.step_limit(epsilon, &cfg.influence));
        let sub = substeps(interval, max_dt);
        let dt = interval / sub as f64;
        let mut state = KineticState::new(cfg.dimension, positions.clone(), velocities.clone(), epsilon)?;
        let mut row = SweepRow {
            epsilon,
            max_pos_err: 0.0,
            max_vel_err: 0.0,
            fluct_final: 0.0,
            fluct_over_eps2: 0.0,
            momentum_drift: 0.0,
            max_radius: state.max_radius(),
            dt,
        };
        for s in 0..SWEEP_SAMPLES {
            for _ in 0..sub {
                step_kinetic(&mut state, &cfg.influence, &cfg.potential, dt, cfg.integrator)?;
                let drift = state.mean_velocity().iter().map(|v| v * v).sum::<f64>().sqrt();
                row.momentum_drift = row.momentum_drift.max(drift);
                row.max_radius = row.max_radius.max(state.max_radius());
            }
            if s >= first_compared {
                let dim = cfg.dimension;
                row.max_pos_err =
                    row.max_pos_err.max(max_pointwise_distance(&state.positions, &reference.positions[s], dim));
                row.max_vel_err =
                    row.max_vel_err.max(max_pointwise_distance(&state.velocities, &reference.velocities[s], dim));
            }
        }
        row.fluct_final = fluctuation(&state, &cfg.influence, &cfg.potential);
        row.fluct_over_eps2 = row.fluct_final / (epsilon * epsilon);
        log::info!(
            "eps {epsilon}: dt {dt:.3e}, position error {:.3e}, velocity error {:.3e}, I(T)/eps^2 {:.3e}",
            row.max_pos_err,
            row.max_vel_err,
            row.fluct_over_eps2
        );
        rows.push(row);
    }
    Ok(rows)
}

/// Reasons a sweep fails: errors not strictly decreasing in `ε`, or
/// `I(T)/ε²` above `fluctuation_bound`. Monotonicity needs two rows.
pub fn sweep_failures(rows: &[SweepRow], fluctuation_bound: f64) -> Vec<String> {
    let mut out = Vec::new();
    for w in rows.windows(2) {
        if !(w[1].max_pos_err < w[0].max_pos_err) {
            out.push(format!(
                "position error does not decrease from eps {} ({:.3e}) to eps {} ({:.3e})",
                w[0].epsilon, w[0].max_pos_err, w[1].epsilon, w[1].max_pos_err
            ));
        }
        if !(w[1].max_vel_err < w[0].max_vel_err) {
            out.push(format!(
                "velocity error does not decrease from eps {} ({:.3e}) to eps {} ({:.3e})",
                w[0].epsilon, w[0].max_vel_err, w[1].epsilon, w[1].max_vel_err
            ));
        }
    }
    for r in rows {
        if !(r.fluct_over_eps2 <= fluctuation_bound) {
            out.push(format!(
                "I(T)/eps^2 = {:.3e} at eps {} exceeds {fluctuation_bound:.1e}",
                r.fluct_over_eps2, r.epsilon
            ));
        }
    }
    out
}

/// Observed convergence orders `log(e_k / e_{k+1}) / log(ε_k / ε_{k+1})`.
pub fn observed_orders(rows: &[SweepRow], error: impl Fn(&SweepRow) -> f64) -> Vec<f64> {
    rows.windows(2)
        .map(|w| (error(&w[0]) / error(&w[1])).ln() / (w[0].epsilon / w[1].epsilon).ln())
        .collect()
}
