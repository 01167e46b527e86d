//! Randomized property checks of the velocity solver.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kernels::{InfluenceFunction, InteractionPotential};
use crate::solver::{
    assemble, null_space_checks, regularize, solve_velocity, NullSpaceReport, VelocitySolution, VelocitySystem,
    WeightedConfiguration, DEFAULT_WEIGHT_THRESHOLD,
};

/// Tolerance on velocity changes when `η` is varied within its admissible range.
pub const ETA_INVARIANCE_TOL: f64 = 1e-8;
/// Tolerance on symmetry and scaling identities, relative to `max(1, ‖u‖∞)`.
pub const SYMMETRY_TOL: f64 = 1e-10;

const POTENTIALS: [InteractionPotential; 3] = [
    InteractionPotential::QuarticQuadratic,
    InteractionPotential::Morse,
    InteractionPotential::NewtonianQuadratic,
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOptions {
    pub configs: usize,
    pub seed: u64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Multiplies `η` by ten, which must break diagonal dominance.
    pub break_eta: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { configs: 200, seed: 0, min_nodes: 2, max_nodes: 200, break_eta: false }
    }
}

/// Tally of one named property over all configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    /// Largest measured defect.
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        CheckResult { name, passed: 0, failed: 0, worst: 0.0, first_failure: None }
    }

    fn record(&mut self, ok: bool, defect: f64, context: impl FnOnce() -> String) {
        if defect.is_finite() {
            self.worst = self.worst.max(defect);
        } else {
            self.worst = f64::INFINITY;
        }
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(context());
            }
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub configs: usize,
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::ok)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Case {
    label: String,
    config: WeightedConfiguration,
    potential: InteractionPotential,
}

fn random_case(rng: &mut ChaCha8Rng, index: usize, opts: &SuiteOptions) -> Result<Case> {
    let dim = 1 + index % 2;
    let potential = POTENTIALS[(index / 2) % POTENTIALS.len()];
    let n = rng.gen_range(opts.min_nodes..=opts.max_nodes);
    let positions: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    Ok(Case {
        label: format!("config {index} (d = {dim}, n = {n}, {potential:?})"),
        config: WeightedConfiguration::new(dim, positions, weights)?,
        potential,
    })
}

/// Point set symmetric under `x ↦ −x`, with matching weights.
fn mirrored(case: &Case) -> Result<WeightedConfiguration> {
    let dim = case.config.dim();
    let half = case.config.len().div_ceil(2);
    let mut positions = case.config.positions()[..half * dim].to_vec();
    positions.extend(case.config.positions()[..half * dim].iter().map(|x| -x));
    let mut weights = case.config.weights()[..half].to_vec();
    weights.extend_from_within(..);
    WeightedConfiguration::new(dim, positions, weights)
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn solve_scaled(sys: &VelocitySystem, eta_factor: f64) -> Result<VelocitySolution> {
    let mut s = sys.clone();
    s.eta *= eta_factor;
    solve_velocity(&s)
}

fn assemble_case(config: &WeightedConfiguration, potential: &InteractionPotential) -> Result<VelocitySystem> {
    assemble(config, &InfluenceFunction::InversePowerHalf, potential, DEFAULT_WEIGHT_THRESHOLD)
}

/// Runs every property over `opts.configs` seeded random configurations.
pub fn run_solver_suites(opts: &SuiteOptions) -> Result<SuiteReport> {
    let phi = InfluenceFunction::InversePowerHalf;
    let eta_factor = if opts.break_eta { 10.0 } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut null_space = CheckResult::new("null_space");
    let mut reduced = CheckResult::new("reduced_dominance");
    let mut dominance = CheckResult::new("diagonal_dominance");
    let mut residual = CheckResult::new("residual");
    let mut momentum = CheckResult::new("momentum");
    let mut eta_inv = CheckResult::new("eta_invariance");
    let mut scaling = CheckResult::new("weight_scaling");
    let mut translation = CheckResult::new("translation_degeneracy");
    let mut mirror = CheckResult::new("mirror_symmetry");
    let mut two_point = CheckResult::new("two_point_closed_form");

    for index in 0..opts.configs {
        let case = random_case(&mut rng, index, opts)?;
        let label = &case.label;
        let sys = assemble_case(&case.config, &case.potential)?;

        let report = null_space_checks(&sys)?;
        let identity = report.row_sum.max(report.left_null).max(report.rhs_orthogonality);
        null_space.record(identity <= NullSpaceReport::TOLERANCE, identity, || format!("{label}: {report:?}"));
        reduced.record(report.reduced_dominant, 0.0, || format!("{label}: reduced matrix not dominant"));

        let mut broken = sys.clone();
        broken.eta *= eta_factor;
        let regularized = regularize(&broken);
        dominance.record(regularized.is_ok(), 0.0, || {
            format!("{label}: {}", regularized.as_ref().err().map(|e| e.to_string()).unwrap_or_default())
        });

        let solution = solve_scaled(&sys, eta_factor);
        let Ok(sol) = solution else {
            let why = solution.err().map(|e| e.to_string()).unwrap_or_default();
            for check in [&mut residual, &mut momentum, &mut eta_inv, &mut scaling, &mut translation] {
                check.record(false, f64::INFINITY, || format!("{label}: solve failed: {why}"));
            }
            // The mirror and two-point checks run their own solves below.
            mirror_and_two_point(&case, eta_factor, &phi, &mut rng, &mut mirror, &mut two_point)?;
            continue;
        };
        let scale = sup(&sol.velocities).max(1.0);

        residual.record(sol.residual_ok(), sol.residual_inf / sol.b_inf.max(1e-300), || {
            format!("{label}: residual {:e}", sol.residual_inf)
        });
        momentum.record(sol.momentum_ok(), sol.momentum_residual, || {
            format!("{label}: momentum {:e}", sol.momentum_residual)
        });

        let half = solve_scaled(&sys, 0.5 * eta_factor);
        let gap = half.as_ref().map(|h| max_gap(&h.velocities, &sol.velocities) / scale).unwrap_or(f64::INFINITY);
        eta_inv.record(gap <= ETA_INVARIANCE_TOL, gap, || format!("{label}: η/2 changes u by {gap:e}"));

        let lambda = rng.gen_range(0.1..10.0);
        let scaled_cfg = WeightedConfiguration::new(
            case.config.dim(),
            case.config.positions().to_vec(),
            case.config.weights().iter().map(|w| lambda * w).collect(),
        )?;
        let scaled = assemble_case(&scaled_cfg, &case.potential).and_then(|s| solve_scaled(&s, eta_factor));
        let gap = scaled.as_ref().map(|s| max_gap(&s.velocities, &sol.velocities) / scale).unwrap_or(f64::INFINITY);
        scaling.record(gap <= SYMMETRY_TOL, gap, || format!("{label}: weights ×{lambda:.3} change u by {gap:e}"));

        let dim = sys.dim;
        let shift: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted: Vec<f64> = sol.velocities.iter().enumerate().map(|(k, u)| u + shift[k % dim]).collect();
        let r0 = max_gap(&sys.a.mul_block(&sol.velocities, dim), &sys.b);
        let r1 = max_gap(&sys.a.mul_block(&shifted, dim), &sys.b);
        let tol = 1e-12 * (sys.len() as f64 * sys.a.max_abs() * sup(&shift)).max(1.0);
        translation.record((r1 - r0).abs() <= tol, (r1 - r0).abs(), || {
            format!("{label}: shift changes the residual by {:e}", (r1 - r0).abs())
        });

        mirror_and_two_point(&case, eta_factor, &phi, &mut rng, &mut mirror, &mut two_point)?;
    }

    Ok(SuiteReport {
        configs: opts.configs,
        checks: vec![
            null_space,
            reduced,
            dominance,
            residual,
            momentum,
            eta_inv,
            scaling,
            translation,
            mirror,
            two_point,
        ],
    })
}

fn mirror_and_two_point(
    case: &Case,
    eta_factor: f64,
    phi: &InfluenceFunction,
    rng: &mut ChaCha8Rng,
    mirror: &mut CheckResult,
    two_point: &mut CheckResult,
) -> Result<()> {
    let label = &case.label;
    let sym = mirrored(case)?;
    let dim = sym.dim();
    let half = sym.len() / 2;
    let result = assemble_case(&sym, &case.potential).and_then(|s| solve_scaled(&s, eta_factor));
    let gap = result
        .as_ref()
        .map(|s| {
            let u = &s.velocities;
            let scale = sup(u).max(1.0);
            (0..half * dim).fold(0.0f64, |m, k| m.max((u[k] + u[half * dim + k]).abs())) / scale
        })
        .unwrap_or(f64::INFINITY);
    mirror.record(gap <= SYMMETRY_TOL, gap, || format!("{label}: u(−x) + u(x) = {gap:e}"));

    let a = rng.gen_range(0.05..1.5);
    let w = rng.gen_range(0.1..1.0);
    let pair = WeightedConfiguration::new(1, vec![-a, a], vec![w, w])?;
    let r = 2.0 * a;
    let expected = -case.potential.radial_factor(r) * r / (2.0 * phi.value(r));
    let result = assemble_case(&pair, &case.potential).and_then(|s| solve_scaled(&s, eta_factor));
    let gap = result
        .as_ref()
        .map(|s| {
            ((s.velocities[1] - expected).abs() + (s.velocities[0] + expected).abs()) / expected.abs().max(1.0)
        })
        .unwrap_or(f64::INFINITY);
    two_point.record(gap <= SYMMETRY_TOL, gap, || format!("{label}: pair at ±{a:.3} off by {gap:e}"));
    Ok(())
}
