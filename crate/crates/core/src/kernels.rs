//! Influence functions and interaction potentials.
//!
//! Every shipped potential is radial, so its gradient has the form
//! `∇K(x) = g(|x|) · x` for `x ≠ 0`. Hot loops use [`InteractionPotential::radial_factor`]
//! directly and skip coincident points; `∇K(0)` is the zero vector for every kind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alignment weight `φ(r)` as a function of distance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InfluenceFunction {
    /// `φ(r) = (1 + r²)^(-1/2)`.
    #[default]
    InversePowerHalf,
}

impl InfluenceFunction {
    /// Evaluates `φ(r)`, rejecting negative or non-finite distances.
    pub fn eval(&self, r: f64) -> Result<f64> {
        check_distance(r)?;
        Ok(self.value(r))
    }

    /// Unchecked `φ(r)` for `r ≥ 0`; used in assembly loops.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        match self {
            InfluenceFunction::InversePowerHalf => 1.0 / (1.0 + r * r).sqrt(),
        }
    }

    /// `φ` evaluated from a squared distance, avoiding the square root.
    #[inline]
    pub fn value_sq(&self, r2: f64) -> f64 {
        match self {
            InfluenceFunction::InversePowerHalf => 1.0 / (1.0 + r2).sqrt(),
        }
    }

    /// Primitive `Ψ(r) = ∫₀ʳ φ(s) ds`.
    pub fn psi(&self, r: f64) -> Result<f64> {
        check_distance(r)?;
        Ok(match self {
            InfluenceFunction::InversePowerHalf => r.asinh(),
        })
    }

    /// Inverse of `Ψ` on `[0, ∞)`.
    pub fn psi_inverse(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::Domain(format!("Ψ⁻¹ needs a finite nonnegative argument, got {y}")));
        }
        Ok(match self {
            InfluenceFunction::InversePowerHalf => y.sinh(),
        })
    }

    /// `Ψ⁻¹` by bisection on the increasing map `Ψ`. Kinds without a closed form
    /// route through here; the closed forms are checked against it in tests.
    pub fn psi_inverse_bisect(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::Domain(format!("Ψ⁻¹ needs a finite nonnegative argument, got {y}")));
        }
        let mut hi = 1.0;
        while self.psi(hi)? < y {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Domain(format!("Ψ stays below {y}; slow decay fails")));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.psi(mid)? < y {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn check_distance(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("distance must be finite and nonnegative, got {r}")))
    }
}

/// Symmetric pairwise potential `K(x) = K(-x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InteractionPotential {
    /// `K(x) = |x|⁴/4 − |x|²/2`: quadratic repulsion, quartic attraction.
    QuarticQuadratic,
    /// `K(x) = −e^(−|x|/2) + e^(−|x|)`.
    Morse,
    /// `K(x) = −ln|x| + |x|²/2`: Newtonian repulsion in the plane, quadratic attraction.
    NewtonianQuadratic,
    /// `K ≡ 0`. Pure alignment; used for control runs.
    Zero,
}

impl InteractionPotential {
    /// Factor `g(r)` with `∇K(x) = g(|x|)·x`, valid for `r > 0`.
    #[inline]
    pub fn radial_factor(&self, r: f64) -> f64 {
        match self {
            InteractionPotential::QuarticQuadratic => r * r - 1.0,
            InteractionPotential::Morse => (0.5 * (-0.5 * r).exp() - (-r).exp()) / r,
            InteractionPotential::NewtonianQuadratic => 1.0 - 1.0 / (r * r),
            InteractionPotential::Zero => 0.0,
        }
    }

    /// Writes `∇K(x)` into `out`. Zero at the origin.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), out.len());
        let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
        if r == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let g = self.radial_factor(r);
        for (o, c) in out.iter_mut().zip(x) {
            *o = g * c;
        }
    }

    /// `∇K(x)` as a fresh vector.
    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.grad_into(x, &mut out);
        out
    }

    /// `‖∇K‖∞` over all of space, when it is finite.
    ///
    /// Computed by sampling the radial profile `|g(r)|·r` on a fine grid; `None`
    /// for potentials whose gradient grows without bound or blows up at the origin.
    pub fn gradient_sup_norm(&self) -> Option<f64> {
        match self {
            InteractionPotential::Morse => {
                // The profile decays like e^(-r/2); 60 is far past where it matters.
                let samples = 600_000;
                let r_max = 60.0;
                let sup = (1..=samples)
                    .map(|k| {
                        let r = r_max * k as f64 / samples as f64;
                        (self.radial_factor(r) * r).abs()
                    })
                    .fold(0.0, f64::max);
                // The supremum of |K'| is approached as r → 0⁺.
                let near_origin = (self.radial_factor(1e-12) * 1e-12).abs();
                Some(sup.max(near_origin))
            }
            InteractionPotential::Zero => Some(0.0),
            InteractionPotential::QuarticQuadratic | InteractionPotential::NewtonianQuadratic => None,
        }
    }
}
