//! Ornstein-Uhlenbeck input noise and the correlation moments that
//! parameterise the weak-colour expansion.
//!
//! For a stationary zero-mean input `ξ` with autocorrelation `R(τ) = E ξ(t+τ) ξ(t)`
//! the expansion needs two numbers:
//!
//! ```text
//! mu1 = 2 ∫_{-∞}^0 R(τ) dτ          (integrated autocorrelation)
//! mu2 = | ∫_{-∞}^0 τ R(τ) dτ |       (its first moment)
//! ```
//!
//! For the OU process `dξ = -(ξ/τc) dt + (√(2D)/τc) dB` these are `(2D, D τc)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intensity and correlation time of an Ornstein-Uhlenbeck input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Noise intensity `D`.
    pub d: f64,
    /// Correlation time `τc`.
    pub tau_cor: f64,
}

impl OuParams {
    pub fn new(d: f64, tau_cor: f64) -> Result<Self> {
        let p = Self { d, tau_cor };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d >= 0.0 && self.d.is_finite()) {
            return Err(Error::Config(format!("OU intensity D must be >= 0, got {}", self.d)));
        }
        if !(self.tau_cor > 0.0 && self.tau_cor.is_finite()) {
            return Err(Error::Config(format!(
                "OU correlation time must be > 0, got {}",
                self.tau_cor
            )));
        }
        Ok(())
    }

    /// Stationary variance `D / τc` of the OU process itself.
    pub fn stationary_variance(&self) -> f64 {
        self.d / self.tau_cor
    }

    /// Autocorrelation `R(τ) = (D/τc) e^{-|τ|/τc}`.
    pub fn autocorrelation(&self, tau: f64) -> f64 {
        self.stationary_variance() * (-tau.abs() / self.tau_cor).exp()
    }

    /// Largest step allowed for explicit Euler-Maruyama on this process.
    pub fn max_stable_dt(&self) -> f64 {
        self.tau_cor / 10.0
    }

    pub fn check_dt(&self, dt: f64) -> Result<()> {
        let limit = self.max_stable_dt();
        // Small slack so that dt = tau/10 computed elsewhere passes.
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stability {
                detail: format!(
                    "dt = {dt} exceeds tau_cor/10 = {limit} for the OU input (tau_cor = {})",
                    self.tau_cor
                ),
            });
        }
        Ok(())
    }
}

/// Correlation moments of a weakly coloured input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColouredStats {
    pub mu1: f64,
    pub mu2: f64,
}

impl ColouredStats {
    pub fn new(mu1: f64, mu2: f64) -> Result<Self> {
        if !(mu1 >= 0.0 && mu1.is_finite() && mu2 >= 0.0 && mu2.is_finite()) {
            return Err(Error::Config(format!(
                "correlation moments must be finite and non-negative, got mu1 = {mu1}, mu2 = {mu2}"
            )));
        }
        Ok(Self { mu1, mu2 })
    }

    /// White-noise limit with the same intensity.
    pub fn white(self) -> Self {
        Self { mu2: 0.0, ..self }
    }

    /// `mu2 / mu1`, the effective correlation time scale (zero when `mu1` is).
    pub fn colour_time(&self) -> f64 {
        if self.mu1 > 0.0 {
            self.mu2 / self.mu1
        } else {
            0.0
        }
    }

    /// True when the colour time is not small against `system_time`.
    /// The factor 0.1 is a heuristic for "weak".
    pub fn weak_colour_suspect(&self, system_time: f64) -> bool {
        self.colour_time() > 0.1 * system_time
    }
}

/// Stationary autocorrelation `R(τ)`, evaluated for `τ <= 0`.
pub trait AutocorrelationFn {
    fn eval(&self, tau: f64) -> f64;
}

impl<F: Fn(f64) -> f64> AutocorrelationFn for F {
    fn eval(&self, tau: f64) -> f64 {
        self(tau)
    }
}

impl AutocorrelationFn for OuParams {
    fn eval(&self, tau: f64) -> f64 {
        self.autocorrelation(tau)
    }
}

pub fn ou_stats(p: &OuParams) -> ColouredStats {
    ColouredStats {
        mu1: 2.0 * p.d,
        mu2: p.d * p.tau_cor,
    }
}

/// Moments by composite trapezoid quadrature on `[-tail_cutoff, 0]`.
///
/// `mu2` is reported as the magnitude of `∫ τ R(τ) dτ`, which is the sign
/// convention that gives `D τc` for the OU kernel.
pub fn stats_from_autocorrelation(
    r: &dyn AutocorrelationFn,
    tail_cutoff: f64,
    quad_step: f64,
) -> Result<ColouredStats> {
    if !(tail_cutoff > 0.0 && quad_step > 0.0) {
        return Err(Error::Config(format!(
            "tail cutoff and quadrature step must be positive, got {tail_cutoff} and {quad_step}"
        )));
    }
    let n = (tail_cutoff / quad_step).ceil().max(1.0) as usize;
    let h = tail_cutoff / n as f64;
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for i in 0..=n {
        let tau = -(i as f64) * h;
        let v = r.eval(tau);
        if !v.is_finite() {
            return Err(Error::Evaluation(format!("autocorrelation is {v} at tau = {tau}")));
        }
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        m0 += w * v;
        m1 += w * tau * v;
    }
    Ok(ColouredStats {
        mu1: 2.0 * m0 * h,
        mu2: (m1 * h).abs(),
    })
}

/// Cutoff at which `|R|` has dropped below `1e-12 R(0)`, scanning outward
/// geometrically; used as the default tail for [`stats_from_autocorrelation`].
pub fn default_tail_cutoff(r: &dyn AutocorrelationFn, scale_hint: f64) -> f64 {
    let r0 = r.eval(0.0).abs();
    if r0 == 0.0 {
        return scale_hint;
    }
    let mut t = scale_hint;
    for _ in 0..200 {
        if r.eval(-t).abs() < 1e-12 * r0 {
            return t;
        }
        t *= 1.25;
    }
    t
}

/// True when `R(0) >= |R(τ)|` at every sample point.
pub fn is_stationary_kernel(r: &dyn AutocorrelationFn, taus: &[f64]) -> bool {
    let r0 = r.eval(0.0);
    taus.iter().all(|&t| r0 >= r.eval(t).abs())
}

/// One Euler-Maruyama step of the OU process with a supplied Brownian increment.
#[inline]
pub fn ou_step(xi: f64, p: &OuParams, dt: f64, d_b: f64) -> f64 {
    xi + (-xi / p.tau_cor) * dt + ((2.0 * p.d).sqrt() / p.tau_cor) * d_b
}
