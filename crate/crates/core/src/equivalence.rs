//! Stochastic equivalence between the coloured system `ẋ = f(x) + g(x) ξ`
//! and a white-noise diffusion with the same Fokker-Planck equation.
//!
//! With `r = f/g` and correlation moments `(mu1, mu2)`:
//!
//! ```text
//! k1 = f + (mu1/2) g g' + mu2 g² g' r'          drift of the Fokker-Planck equation
//! k2 = mu1 g² + 2 mu2 g³ r'                     diffusion of the Fokker-Planck equation
//! a  = f - (mu2/2) g² g' r' - (mu2/2) g³ r''    = k1 - k2'/4
//! b  = √mu1 g √(1 + (2 mu2/mu1) g r')           b² = k2
//! ```
//!
//! `a` is the drift that accompanies `b` when the white noise is read in the
//! symmetric (Stratonovich) sense; the drift of the same diffusion written as
//! an Itô equation is `a + (b²)'/4 = k1`. Both are exposed: [`EquivalentIto::a`]
//! and [`EquivalentIto::ito_drift`].

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::jets::{ratio_jet, Jet4, SmoothFn, SINGULARITY_THRESHOLD};
use crate::noise::ColouredStats;

/// The coloured system `ẋ = f(x) + g(x) ξ`.
#[derive(Clone)]
pub struct SystemModel {
    pub f: Arc<dyn SmoothFn>,
    pub g: Arc<dyn SmoothFn>,
    /// Optional admissible state interval; evaluations outside it fail.
    pub domain: Option<(f64, f64)>,
}

impl std::fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemModel").field("domain", &self.domain).finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(f: impl SmoothFn + 'static, g: impl SmoothFn + 'static) -> Self {
        Self { f: Arc::new(f), g: Arc::new(g), domain: None }
    }

    /// Restricts the model to `[lo, hi]`, checking that `g` has no zero at
    /// `probes` evenly spaced interior points.
    pub fn with_domain(mut self, lo: f64, hi: f64, probes: usize) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Config(format!("empty state domain [{lo}, {hi}]")));
        }
        let n = probes.max(2);
        let mut prev_sign = 0.0;
        for i in 0..n {
            let x = lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
            let g = self.g.value(x);
            if g.abs() < crate::jets::SINGULARITY_THRESHOLD || (prev_sign * g < 0.0) {
                return Err(Error::SingularNoiseCoefficient {
                    x,
                    g_abs: g.abs(),
                    threshold: crate::jets::SINGULARITY_THRESHOLD,
                });
            }
            prev_sign = g.signum();
        }
        self.domain = Some((lo, hi));
        Ok(self)
    }

    pub(crate) fn check_domain(&self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Evaluation(format!("state {x} is not finite")));
        }
        match self.domain {
            Some((lo, hi)) if x < lo || x > hi => Err(Error::Evaluation(format!(
                "state {x} outside the model domain [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        }
    }

    /// Jets of `f`, `g` and `f/g` at `x`.
    pub fn jets(&self, x: f64) -> Result<ModelJets> {
        self.check_domain(x)?;
        let f = self.f.jet(x);
        let g = self.g.jet(x);
        let r = ratio_jet(f, g).map_err(|e| match e {
            Error::SingularNoiseCoefficient { g_abs, threshold, .. } => {
                Error::SingularNoiseCoefficient { x, g_abs, threshold }
            }
            other => other,
        })?;
        Ok(ModelJets { f, g, r })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ModelJets {
    pub f: Jet4,
    pub g: Jet4,
    /// `f/g`
    pub r: Jet4,
}

/// Every coefficient of the equivalence transform at one state, together with
/// the derivatives the second-order filter needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalCoefficients {
    pub x: f64,
    /// `a`, `a'`, `a''`
    pub a: [f64; 3],
    /// `k2`, `k2'`, `k2''` (equal to `b²` and its derivatives)
    pub k2: [f64; 3],
    pub k1: f64,
    /// `f''`, kept separately for diagnostics
    pub f2: f64,
}

impl LocalCoefficients {
    pub fn evaluate(model: &SystemModel, stats: &ColouredStats, x: f64) -> Result<Self> {
        let ModelJets { f, g, r } = model.jets(x)?;
        Ok(Self::from_jets(f, g, r, stats, x))
    }

    pub fn from_jets(f: Jet4, g: Jet4, r: Jet4, stats: &ColouredStats, x: f64) -> Self {
        let (mu1, mu2) = (stats.mu1, stats.mu2);
        let (g0, g1, g2, g3) = (g.value, g.d1, g.d2, g.d3);
        let (r1, r2, r3, r4) = (r.d1, r.d2, r.d3, r.d4);
        let g0_2 = g0 * g0;
        let g0_3 = g0_2 * g0;
        let g1_2 = g1 * g1;

        // u = g² g' r' + g³ r'' and its first two derivatives.
        let u = g0_2 * g1 * r1 + g0_3 * r2;
        let du = 2.0 * g0 * g1_2 * r1 + g0_2 * g2 * r1 + 4.0 * g0_2 * g1 * r2 + g0_3 * r3;
        let ddu = g0_3 * r4
            + 7.0 * g0_2 * g1 * r3
            + 5.0 * g0_2 * g2 * r2
            + 10.0 * g0 * g1_2 * r2
            + g0_2 * g3 * r1
            + 2.0 * g1_2 * g1 * r1
            + 6.0 * g0 * g1 * g2 * r1;

        let half_mu2 = 0.5 * mu2;
        let a = [f.value - half_mu2 * u, f.d1 - half_mu2 * du, f.d2 - half_mu2 * ddu];

        let k2 = [
            mu1 * g0_2 + 2.0 * mu2 * g0_3 * r1,
            2.0 * mu1 * g0 * g1 + 2.0 * mu2 * (3.0 * g0_2 * g1 * r1 + g0_3 * r2),
            2.0 * mu1 * (g1_2 + g0 * g2)
                + 2.0
                    * mu2
                    * (6.0 * g0 * g1_2 * r1 + 3.0 * g0_2 * g2 * r1 + 6.0 * g0_2 * g1 * r2 + g0_3 * r3),
        ];
        let k1 = f.value + 0.5 * mu1 * g0 * g1 + mu2 * g0_2 * g1 * r1;

        Self { x, a, k2, k1, f2: f.d2 }
    }

    /// `b` as a signed square root following the sign of `g`.
    pub fn b(&self, g: f64, stats: &ColouredStats, r1: f64) -> Result<f64> {
        if stats.mu1 > 0.0 {
            let radicand = 1.0 + (2.0 * stats.mu2 / stats.mu1) * g * r1;
            if radicand < 0.0 {
                return Err(Error::NegativeRadicand { x: self.x, k2: self.k2[0] });
            }
            Ok(stats.mu1.sqrt() * g * radicand.sqrt())
        } else if self.k2[0] < 0.0 {
            Err(Error::NegativeRadicand { x: self.x, k2: self.k2[0] })
        } else {
            Ok(g.signum() * self.k2[0].sqrt())
        }
    }
}

/// `(k1, k2)` at `x`.
pub fn kinetic_coefficients(m: &SystemModel, s: &ColouredStats, x: f64) -> Result<(f64, f64)> {
    let c = LocalCoefficients::evaluate(m, s, x)?;
    Ok((c.k1, c.k2[0]))
}

/// The drift `a(x)`.
pub fn effective_drift(m: &SystemModel, s: &ColouredStats, x: f64) -> Result<f64> {
    Ok(LocalCoefficients::evaluate(m, s, x)?.a[0])
}

/// The diffusion coefficient `b(x)`; fails where the radicand is negative.
pub fn effective_diffusion(m: &SystemModel, s: &ColouredStats, x: f64) -> Result<f64> {
    let jets = m.jets(x)?;
    let c = LocalCoefficients::from_jets(jets.f, jets.g, jets.r, s, x);
    c.b(jets.g.value, s, jets.r.d1)
}

/// `(M, k)` with `k1 = M + k'/4` and `k2 = k`.
pub fn fpe_decomposition(m: &SystemModel, s: &ColouredStats, x: f64) -> Result<(f64, f64)> {
    let c = LocalCoefficients::evaluate(m, s, x)?;
    Ok((c.k1 - 0.25 * c.k2[1], c.k2[0]))
}

/// Kinetic coefficients of a coloured system as a reusable evaluator.
#[derive(Debug, Clone)]
pub struct KineticCoefficients {
    pub model: SystemModel,
    pub stats: ColouredStats,
}

impl KineticCoefficients {
    pub fn new(model: SystemModel, stats: ColouredStats) -> Self {
        Self { model, stats }
    }

    pub fn k1(&self, x: f64) -> Result<f64> {
        kinetic_coefficients(&self.model, &self.stats, x).map(|(k1, _)| k1)
    }

    pub fn k2(&self, x: f64) -> Result<f64> {
        kinetic_coefficients(&self.model, &self.stats, x).map(|(_, k2)| k2)
    }

    /// `M(x)`, the drift left after removing `k'/4`.
    pub fn m(&self, x: f64) -> Result<f64> {
        fpe_decomposition(&self.model, &self.stats, x).map(|(m, _)| m)
    }

    pub fn k(&self, x: f64) -> Result<f64> {
        self.k2(x)
    }
}

/// The white-noise diffusion equivalent to a coloured system.
#[derive(Debug, Clone)]
pub struct EquivalentIto {
    pub model: SystemModel,
    pub stats: ColouredStats,
}

impl EquivalentIto {
    pub fn new(model: SystemModel, stats: ColouredStats) -> Self {
        Self { model, stats }
    }

    pub fn a(&self, x: f64) -> Result<f64> {
        effective_drift(&self.model, &self.stats, x)
    }

    pub fn b(&self, x: f64) -> Result<f64> {
        effective_diffusion(&self.model, &self.stats, x)
    }

    /// Drift of the diffusion in Itô form, `a + (b²)'/4`.
    pub fn ito_drift(&self, x: f64) -> Result<f64> {
        self.kinetic().k1(x)
    }

    pub fn kinetic(&self) -> KineticCoefficients {
        KineticCoefficients::new(self.model.clone(), self.stats)
    }

    /// `(ito_drift, b)`, using first derivatives only.
    pub fn drift_and_diffusion(&self, x: f64) -> Result<(f64, f64)> {
        self.model.check_domain(x)?;
        let (f, f1) = self.model.f.value_d1(x);
        let (g, g1) = self.model.g.value_d1(x);
        if g.abs() < SINGULARITY_THRESHOLD {
            return Err(Error::SingularNoiseCoefficient { x, g_abs: g.abs(), threshold: SINGULARITY_THRESHOLD });
        }
        let r1 = (f1 * g - f * g1) / (g * g);
        let ColouredStats { mu1, mu2 } = self.stats;
        let k1 = f + 0.5 * mu1 * g * g1 + mu2 * g * g * g1 * r1;
        let k2 = mu1 * g * g + 2.0 * mu2 * g * g * g * r1;
        let b = if mu1 > 0.0 {
            let radicand = 1.0 + (2.0 * mu2 / mu1) * g * r1;
            if radicand < 0.0 {
                return Err(Error::NegativeRadicand { x, k2 });
            }
            mu1.sqrt() * g * radicand.sqrt()
        } else if k2 < 0.0 {
            return Err(Error::NegativeRadicand { x, k2 });
        } else {
            g.signum() * k2.sqrt()
        };
        Ok((k1, b))
    }

    /// `(a, b)` from a single jet evaluation.
    pub fn symmetric_drift_and_diffusion(&self, x: f64) -> Result<(f64, f64)> {
        let jets = self.model.jets(x)?;
        let c = LocalCoefficients::from_jets(jets.f, jets.g, jets.r, &self.stats, x);
        Ok((c.a[0], c.b(jets.g.value, &self.stats, jets.r.d1)?))
    }
}
