//! Momentum-constrained solve of the implicit velocity equation.
//!
//! For a weighted point set `(x_i, w_i)` the midpoint discretization of
//!
//! ```text
//! Φ(x) u(x) = ∫ φ(|x−y|) ρ(y) u(y) dy − ∇K∗ρ(x),     ∫ ρ u = 0
//! ```
//!
//! gives `A u = b` with
//!
//! ```text
//! A_ii = Σ_{k≠i} φ_ik w_k,   A_ik = −φ_ik w_k,   b_i = −Σ_k ∇K(x_i − x_k) w_k.
//! ```
//!
//! `A` has constant vectors in its kernel, so the system is singular. Its left
//! kernel is spanned by `w`, and `b ⊥ w` by antisymmetry of `∇K`, so solutions
//! exist and differ by constants. The zero-momentum solution is the unique solution
//! of `M u = b` with `M = A + η e wᵀ`, which is strictly diagonally dominant
//! whenever `0 < η ≤ min φ_ik`.

use faer::linalg::solvers::Solve;
use faer::Mat;

use crate::error::{Error, Result};
use crate::kernels::{InfluenceFunction, InteractionPotential};

/// Default activity threshold, relative to the largest weight.
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 1e-12;

/// Points in `R^d` carrying nonnegative masses.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedConfiguration {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedConfiguration {
    /// `positions` is flat, `dim` coordinates per point.
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidConfig(format!("dimension must be 1 or 2, got {dim}")));
        }
        if positions.len() != dim * weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} coordinates do not describe {} points in dimension {dim}",
                positions.len(),
                weights.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("positions must be finite".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("weights must be finite and nonnegative".into()));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidConfig("total weight must be positive".into()));
        }
        Ok(WeightedConfiguration { dim, positions, weights })
    }

    /// Equal weights `1/N` on every point.
    pub fn uniform(dim: usize, positions: Vec<f64>) -> Result<Self> {
        let n = positions.len() / dim.max(1);
        let w = if n == 0 { 0.0 } else { 1.0 / n as f64 };
        Self::new(dim, positions, vec![w; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n + k]
    }

    #[inline]
    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.n + k] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self · x` for `x` holding `cols` interleaved right-hand sides.
    pub fn mul_block(&self, x: &[f64], cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n * cols];
        for i in 0..self.n {
            let row = self.row(i);
            for (k, a) in row.iter().enumerate() {
                for c in 0..cols {
                    out[i * cols + c] += a * x[k * cols + c];
                }
            }
        }
        out
    }

    /// First row that is not strictly diagonally dominant, if any.
    pub fn dominance_violation(&self) -> Option<(usize, f64, f64)> {
        (0..self.n).find_map(|i| {
            let row = self.row(i);
            let diag = row[i].abs();
            let off: f64 = row.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, v)| v.abs()).sum();
            (diag <= off).then_some((i, diag, off))
        })
    }
}

/// Assembled singular system `A u = b` on the active nodes.
#[derive(Debug, Clone)]
pub struct VelocitySystem {
    pub dim: usize,
    pub a: DenseMatrix,
    /// `n × dim`, interleaved by node.
    pub b: Vec<f64>,
    /// Regularization constant; `0 < eta ≤ min φ_ik` over active pairs.
    pub eta: f64,
    /// Active index → index in the originating configuration.
    pub active: Vec<usize>,
    pub weights: Vec<f64>,
    pub positions: Vec<f64>,
    /// `Σ_k |∇K(x_i − x_k)| w_k` per component: the scale for `wᵀb ≈ 0`.
    b_abs: Vec<f64>,
}

impl VelocitySystem {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Builds `A`, `b` and `η` over the nodes whose weight exceeds
/// `weight_threshold · max w`.
pub fn assemble(
    config: &WeightedConfiguration,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
    weight_threshold: f64,
) -> Result<VelocitySystem> {
    if !(weight_threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "weight threshold must be nonnegative, got {weight_threshold}"
        )));
    }
    let dim = config.dim();
    let w_max = config.weights().iter().cloned().fold(0.0, f64::max);
    let cut = weight_threshold * w_max;
    let active: Vec<usize> = (0..config.len()).filter(|&i| config.weights()[i] > cut).collect();
    if active.is_empty() {
        return Err(Error::EmptyActiveSet);
    }
    let n = active.len();
    let weights: Vec<f64> = active.iter().map(|&i| config.weights()[i]).collect();
    let mut positions = Vec::with_capacity(n * dim);
    for &i in &active {
        positions.extend_from_slice(config.position(i));
    }

    let mut a = DenseMatrix::zeros(n);
    let mut b = vec![0.0; n * dim];
    let mut b_abs = vec![0.0; n * dim];
    let mut eta = phi.value(0.0);
    let mut diff = [0.0; 2];
    for i in 0..n {
        let xi = &positions[i * dim..(i + 1) * dim];
        for k in (i + 1)..n {
            let xk = &positions[k * dim..(k + 1) * dim];
            let mut r2 = 0.0;
            for c in 0..dim {
                diff[c] = xi[c] - xk[c];
                r2 += diff[c] * diff[c];
            }
            let p = phi.value_sq(r2);
            eta = eta.min(p);
            a.set(i, k, -p * weights[k]);
            a.set(k, i, -p * weights[i]);
            a.data[i * n + i] += p * weights[k];
            a.data[k * n + k] += p * weights[i];
            if r2 > 0.0 {
                let g = potential.radial_factor(r2.sqrt());
                for c in 0..dim {
                    // ∇K(x_i − x_k) = g·diff, ∇K(x_k − x_i) = −g·diff
                    let grad = g * diff[c];
                    b[i * dim + c] -= grad * weights[k];
                    b[k * dim + c] += grad * weights[i];
                    b_abs[i * dim + c] += grad.abs() * weights[k];
                    b_abs[k * dim + c] += grad.abs() * weights[i];
                }
            }
        }
    }
    Ok(VelocitySystem { dim, a, b, eta, active, weights, positions, b_abs })
}

/// `M = A + η e wᵀ`, checked for strict diagonal dominance.
pub fn regularize(sys: &VelocitySystem) -> Result<DenseMatrix> {
    if !(sys.eta > 0.0) {
        return Err(Error::Domain(format!("eta must be positive, got {}", sys.eta)));
    }
    let n = sys.len();
    let mut m = sys.a.clone();
    for i in 0..n {
        for k in 0..n {
            m.data[i * n + k] += sys.eta * sys.weights[k];
        }
    }
    if let Some((row, diagonal, off_diagonal)) = m.dominance_violation() {
        return Err(Error::DominanceViolation { row, diagonal, off_diagonal });
    }
    Ok(m)
}

/// Zero-momentum velocities on the active nodes.
#[derive(Debug, Clone)]
pub struct VelocitySolution {
    pub dim: usize,
    /// `n × dim`, interleaved by node.
    pub velocities: Vec<f64>,
    /// `‖A u − b‖∞` against the unregularized matrix.
    pub residual_inf: f64,
    /// `max_c |Σ_i w_i u_ic|`.
    pub momentum_residual: f64,
    pub active: Vec<usize>,
    pub total_weight: f64,
    pub b_inf: f64,
}

impl VelocitySolution {
    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn max_speed_component(&self) -> f64 {
        self.velocities.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Velocities over all `total` nodes of the source configuration, zero off the active set.
    pub fn scatter(&self, total: usize) -> Vec<f64> {
        let mut out = vec![0.0; total * self.dim];
        for (j, &g) in self.active.iter().enumerate() {
            out[g * self.dim..(g + 1) * self.dim].copy_from_slice(self.velocity(j));
        }
        out
    }

    /// `‖Au − b‖∞ ≤ 1e−9‖b‖∞ + 1e−12`.
    pub fn residual_ok(&self) -> bool {
        self.residual_inf <= 1e-9 * self.b_inf + 1e-12
    }

    /// `|wᵀu| ≤ 1e−10 · Σw · max|u|`.
    pub fn momentum_ok(&self) -> bool {
        self.momentum_residual <= 1e-10 * self.total_weight * self.max_speed_component()
    }
}

/// Solves `M u = b` for every velocity component from one LU factorization.
pub fn solve_velocity(sys: &VelocitySystem) -> Result<VelocitySolution> {
    let m = regularize(sys)?;
    let n = sys.len();
    let dim = sys.dim;
    let mat = Mat::<f64>::from_fn(n, n, |i, k| m.get(i, k));
    let rhs = Mat::<f64>::from_fn(n, dim, |i, c| sys.b[i * dim + c]);
    let sol = mat.partial_piv_lu().solve(&rhs);
    let mut velocities = vec![0.0; n * dim];
    for i in 0..n {
        for c in 0..dim {
            velocities[i * dim + c] = sol[(i, c)];
        }
    }
    if velocities.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSolve("non-finite velocity in LU solution".into()));
    }

    let au = sys.a.mul_block(&velocities, dim);
    let residual_inf = au.iter().zip(&sys.b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let momentum_residual = (0..dim)
        .map(|c| (0..n).map(|i| sys.weights[i] * velocities[i * dim + c]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Ok(VelocitySolution {
        dim,
        velocities,
        residual_inf,
        momentum_residual,
        active: sys.active.clone(),
        total_weight: sys.total_weight(),
        b_inf: sys.b.iter().fold(0.0, |m, v| m.max(v.abs())),
    })
}

/// Outcome of the structural checks on an assembled system.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceReport {
    /// `max_i |Σ_k A_ik| / ‖A_i‖₁`.
    pub row_sum: f64,
    /// `max_k |Σ_i w_i A_ik| / (‖w‖₁ max|A|)`.
    pub left_null: f64,
    /// `max_c |Σ_i w_i b_ic| / Σ_i w_i Σ_k |∇K_ik,c| w_k`.
    pub rhs_orthogonality: f64,
    /// Whether deleting one positive-weight row and column leaves a strictly
    /// diagonally dominant matrix (rank `n − 1` witness).
    pub reduced_dominant: bool,
}

impl NullSpaceReport {
    pub const TOLERANCE: f64 = 1e-12;

    /// Names of the identities that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !(self.row_sum <= Self::TOLERANCE) {
            out.push("A·e = 0");
        }
        if !(self.left_null <= Self::TOLERANCE) {
            out.push("Aᵀw = 0");
        }
        if !(self.rhs_orthogonality <= Self::TOLERANCE) {
            out.push("wᵀb = 0");
        }
        if !self.reduced_dominant {
            out.push("reduced matrix dominance");
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Verifies the kernel structure of `A` and the solvability condition on `b`.
pub fn null_space_checks(sys: &VelocitySystem) -> Result<NullSpaceReport> {
    let n = sys.len();
    let positive = sys.weights.iter().filter(|&&w| w > 0.0).count();
    if n < 2 || positive < 2 {
        return Err(Error::Domain("null-space checks need at least two weighted nodes".into()));
    }
    let a = &sys.a;
    let row_sum = (0..n)
        .map(|i| {
            let row = a.row(i);
            let l1: f64 = row.iter().map(|v| v.abs()).sum();
            let s: f64 = row.iter().sum();
            if l1 == 0.0 {
                s.abs()
            } else {
                s.abs() / l1
            }
        })
        .fold(0.0, f64::max);

    let w_l1: f64 = sys.weights.iter().map(|w| w.abs()).sum();
    let scale = w_l1 * a.max_abs();
    let left_null = (0..n)
        .map(|k| {
            let s: f64 = (0..n).map(|i| sys.weights[i] * a.get(i, k)).sum();
            if scale == 0.0 {
                s.abs()
            } else {
                s.abs() / scale
            }
        })
        .fold(0.0, f64::max);

    let dim = sys.dim;
    let rhs_orthogonality = (0..dim)
        .map(|c| {
            let s: f64 = (0..n).map(|i| sys.weights[i] * sys.b[i * dim + c]).sum();
            let scale: f64 = (0..n).map(|i| sys.weights[i] * sys.b_abs[i * dim + c]).sum();
            if scale == 0.0 {
                s.abs()
            } else {
                s.abs() / scale
            }
        })
        .fold(0.0, f64::max);

    let drop = (0..n)
        .max_by(|&i, &k| sys.weights[i].total_cmp(&sys.weights[k]))
        .expect("n ≥ 2");
    let reduced_dominant = (0..n).filter(|&i| i != drop).all(|i| {
        let row = a.row(i);
        let off: f64 = (0..n).filter(|&k| k != i && k != drop).map(|k| row[k].abs()).sum();
        row[i].abs() > off
    });

    Ok(NullSpaceReport { row_sum, left_null, rhs_orthogonality, reduced_dominant })
}

/// Assembles and solves in one call, returning velocities on every point of
/// `config` (zero off the active set).
pub fn solve_configuration(
    config: &WeightedConfiguration,
    phi: &InfluenceFunction,
    potential: &InteractionPotential,
    weight_threshold: f64,
) -> Result<(Vec<f64>, VelocitySolution)> {
    let sys = assemble(config, phi, potential, weight_threshold)?;
    let sol = solve_velocity(&sys)?;
    Ok((sol.scatter(config.len()), sol))
}
