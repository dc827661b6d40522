//! Polynomial smoothstep profiles for the cutoffs ψ (along-curve) and χ
//! (radial, in the normal offsets).
//!
//! `SmoothStep::new(m)` builds the degree 2m+1 polynomial with S(0) = 0,
//! S(1) = 1 and vanishing derivatives of orders 1..m at both ends, so a glued
//! plateau/ramp profile has m continuous derivatives with exact endpoint
//! vanishing. The constructions use m = k + 2.

use nalgebra::DVector;

use crate::error::{GeonetError, Result};

fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

/// Generalized smoothstep S_m with m vanishing derivatives at both endpoints.
#[derive(Debug, Clone)]
pub struct SmoothStep {
    /// Monomial coefficients, constant term first.
    coeffs: Vec<f64>,
    order: usize,
}

impl SmoothStep {
    pub fn new(order: usize) -> Self {
        let n = order as u64;
        let mut coeffs = vec![0.0; (2 * order + 2) as usize];
        for j in 0..=n {
            let c = binomial(n + j, j) * binomial(2 * n + 1, n - j) * (-1.0f64).powi(j as i32);
            coeffs[(n + 1 + j) as usize] = c;
        }
        SmoothStep { coeffs, order }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// d^deriv/dx^deriv of the clamped profile at `x` (0 for x <= 0, 1 for
    /// x >= 1 with all derivatives zero).
    pub fn eval_deriv(&self, x: f64, deriv: usize) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return if deriv == 0 { 1.0 } else { 0.0 };
        }
        // Horner on the deriv-th derivative of the monomial series.
        let mut acc = 0.0;
        for p in (deriv..self.coeffs.len()).rev() {
            let mut fall = 1.0;
            for q in 0..deriv {
                fall *= (p - q) as f64;
            }
            acc = acc * x + self.coeffs[p] * fall;
        }
        // Hornering with shifted powers: multiply out the remaining x^0 shift.
        acc
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_deriv(x, 0)
    }
}

/// Along-curve cutoff ψ: equal to 1 on `[0, plateau]`, descending smoothly to
/// 0 at `cut`, and 0 beyond; arguments below 0 evaluate to 1 (the profile is
/// only queried at nonnegative offsets from the match point).
#[derive(Debug, Clone)]
pub struct PsiBump {
    step: SmoothStep,
    pub plateau: f64,
    pub cut: f64,
}

impl PsiBump {
    /// Standard profile for a connector span of length `span`: plateau at a
    /// quarter span, support ending at half span.
    pub fn for_span(span: f64, order: usize) -> Result<Self> {
        if !(span > 0.0) {
            return Err(GeonetError::Input("psi span must be positive".into()));
        }
        Ok(PsiBump {
            step: SmoothStep::new(order),
            plateau: span / 4.0,
            cut: span / 2.0,
        })
    }

    pub fn eval_deriv(&self, x: f64, deriv: usize) -> f64 {
        if x <= self.plateau {
            return if deriv == 0 { 1.0 } else { 0.0 };
        }
        if x >= self.cut {
            return 0.0;
        }
        let w = self.cut - self.plateau;
        let t = (x - self.plateau) / w;
        let sign = -1.0;
        sign * self.step.eval_deriv(t, deriv) / w.powi(deriv as i32)
            + if deriv == 0 { 1.0 } else { 0.0 }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_deriv(x, 0)
    }
}

/// Radial cutoff χ in the normal offsets: 1 for |h| <= cutoff/2, smooth ramp
/// to 0 at |h| = cutoff, 0 beyond.
#[derive(Debug, Clone)]
pub struct ChiBump {
    step: SmoothStep,
    pub cutoff: f64,
}

impl ChiBump {
    pub fn new(cutoff: f64, order: usize) -> Result<Self> {
        if !(cutoff > 0.0) {
            return Err(GeonetError::Input("chi cutoff must be positive".into()));
        }
        Ok(ChiBump {
            step: SmoothStep::new(order),
            cutoff,
        })
    }

    /// Value as a function of the offset norm |h|.
    pub fn eval_radial(&self, r: f64) -> f64 {
        let half = self.cutoff / 2.0;
        if r <= half {
            1.0
        } else if r >= self.cutoff {
            0.0
        } else {
            1.0 - self.step.eval((r - half) / half)
        }
    }

    /// d/dr of the radial profile.
    pub fn eval_radial_d1(&self, r: f64) -> f64 {
        let half = self.cutoff / 2.0;
        if r <= half || r >= self.cutoff {
            0.0
        } else {
            -self.step.eval_deriv((r - half) / half, 1) / half
        }
    }

    /// Value and gradient with respect to the offset vector `h`.
    pub fn eval_with_gradient(&self, h: &DVector<f64>) -> (f64, DVector<f64>) {
        let r = h.norm();
        let val = self.eval_radial(r);
        if r < 1e-300 {
            return (val, DVector::zeros(h.len()));
        }
        let d = self.eval_radial_d1(r);
        (val, h * (d / r))
    }
}
