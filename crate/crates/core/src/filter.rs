//! Second-order approximate filter for systems driven by weakly coloured noise.
//!
//! The conditional mean `x̂` and variance `P` evolve as
//!
//! ```text
//! dx̂ = (a + ½ P a'') dt + P h' φ⁻¹ (dz - (h + ½ P h'') dt)
//! dP = (2 P a' + b² + ½ P (b²)'' - P² φ⁻¹ h'²) dt + P² h'' φ⁻¹ (dz - (h + ½ P h'') dt)
//! ```
//!
//! with `a`, `b` from [`crate::equivalence`] and every function evaluated at `x̂`.
//! Expanding `a''` and `(b²)''` in terms of `g` and `r = f/g` gives the bracket
//!
//! ```text
//! a'' = f'' - (mu2/2) (g³ r'''' + 7 g² g' r''' + 5 g² g'' r'' + 10 g g'² r''
//!                      + g² g''' r' + 2 g'³ r' + 6 g g' g'' r')
//! ```
//!
//! which reproduces the closed-form Duffing filter in [`duffing_step`] exactly.
//! With `mu2 = 0` the equations reduce to the classical second-order filter.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equivalence::{LocalCoefficients, SystemModel};
use crate::error::{Error, Result};
use crate::jets::{Polynomial, SmoothFn};
use crate::noise::{ou_stats, ColouredStats, OuParams};

/// Observation `dz = h(x) dt + dη` with `var(dη) = φ dt`.
#[derive(Clone)]
pub struct ObservationModel {
    pub h: Arc<dyn SmoothFn>,
    pub phi_eta: f64,
}

impl std::fmt::Debug for ObservationModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObservationModel").field("phi_eta", &self.phi_eta).finish_non_exhaustive()
    }
}

impl ObservationModel {
    /// A zero or infinite intensity has no filter (noiseless or useless
    /// observations), so both are rejected.
    pub fn new(h: impl SmoothFn + 'static, phi_eta: f64) -> Result<Self> {
        if !(phi_eta > 0.0 && phi_eta.is_finite()) {
            return Err(Error::Config(format!(
                "observation noise intensity must be finite and > 0, got {phi_eta}"
            )));
        }
        Ok(Self { h: Arc::new(h), phi_eta })
    }

    /// `h(x) = x`
    pub fn direct(phi_eta: f64) -> Result<Self> {
        Self::new(Polynomial::linear(1.0, 0.0), phi_eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub t: f64,
    pub x_hat: f64,
    pub p: f64,
}

impl FilterState {
    pub fn new(t: f64, x_hat: f64, p: f64) -> Self {
        Self { t, x_hat, p }
    }
}

/// The damped Duffing system after adiabatic elimination, with OU input:
/// `ẋ = -(α/β) x + (a/β) x³ + (x/β) ξ`, observed through `h(x) = x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuffingParams {
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    pub d: f64,
    pub tau_cor: f64,
    pub phi_eta: f64,
}

impl DuffingParams {
    pub fn ou(&self) -> OuParams {
        OuParams { d: self.d, tau_cor: self.tau_cor }
    }

    pub fn stats(&self) -> ColouredStats {
        ou_stats(&self.ou())
    }

    /// `f(x) = -(α/β) x + (a/β) x³`
    pub fn drift(&self) -> Polynomial {
        Polynomial::new(vec![0.0, -self.alpha / self.beta, 0.0, self.a / self.beta])
    }

    /// `g(x) = x/β`; the sign of the noise term is absorbed into `ξ`.
    pub fn noise_coefficient(&self) -> Polynomial {
        Polynomial::linear(1.0 / self.beta, 0.0)
    }

    pub fn model(&self) -> SystemModel {
        SystemModel::new(self.drift(), self.noise_coefficient())
    }

    pub fn observation(&self) -> Result<ObservationModel> {
        ObservationModel::direct(self.phi_eta)
    }

    /// Deterministic part of the closed-form mean equation.
    pub fn mean_bracket(&self, x: f64, p: f64) -> f64 {
        let (alpha, beta, a) = (self.alpha, self.beta, self.a);
        let mu2 = self.stats().mu2;
        let beta3 = beta * beta * beta;
        -(alpha / beta) * x + (a / beta) * x * x * x - (2.0 * a * mu2 / beta3) * x * x * x
            + 0.5 * p * (6.0 * a * x / beta - 12.0 * a * mu2 * x / beta3)
    }

    /// Deterministic part of the closed-form variance equation.
    pub fn variance_bracket(&self, x: f64, p: f64) -> f64 {
        let (alpha, beta, a, phi) = (self.alpha, self.beta, self.a, self.phi_eta);
        let ColouredStats { mu1, mu2 } = self.stats();
        let beta2 = beta * beta;
        let beta3 = beta2 * beta;
        let x2 = x * x;
        let injection = if mu1 > 0.0 {
            (mu1 * x2 / beta2) * (1.0 + 4.0 * mu2 * a * x2 / (beta * mu1))
        } else {
            // mu1 = 0 forces mu2 = 0 for OU input; the product form is 0/0 there.
            mu1 * x2 / beta2 + 4.0 * mu2 * a * x2 * x2 / beta3
        };
        2.0 * p * (-alpha / beta + 3.0 * a * x2 / beta - 6.0 * a * mu2 * x2 / beta3)
            + injection
            + 0.5 * p * (2.0 * mu1 / beta2 + 48.0 * a * mu2 * x2 / beta3)
            - p * p / phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// The general second-order filter with the supplied correlation moments.
    SecondOrderColoured,
    /// Same equations with `mu2` forced to zero.
    SecondOrderClassical,
    /// Closed-form Duffing equations.
    DuffingClosedForm(DuffingParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterOptions {
    pub variance_floor: f64,
    pub mode: FilterMode,
    /// Ignore the observations (`φ⁻¹ = 0`): pure prediction.
    pub open_loop: bool,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            variance_floor: 1e-12,
            mode: FilterMode::SecondOrderColoured,
            open_loop: false,
        }
    }
}

impl FilterOptions {
    pub fn with_mode(mode: FilterMode) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config(format!(
                "variance floor must be > 0, got {}",
                self.variance_floor
            )));
        }
        Ok(())
    }

    fn inverse_phi(&self, obs: &ObservationModel) -> f64 {
        if self.open_loop {
            0.0
        } else {
            1.0 / obs.phi_eta
        }
    }
}

/// Drift of the conditional mean, without the innovation term.
pub fn mean_drift(
    m: &SystemModel,
    s: &ColouredStats,
    _obs: &ObservationModel,
    st: &FilterState,
) -> Result<f64> {
    let c = LocalCoefficients::evaluate(m, s, st.x_hat)?;
    Ok(c.a[0] + 0.5 * st.p * c.a[2])
}

/// Deterministic drift of the conditional variance.
pub fn variance_drift(
    m: &SystemModel,
    s: &ColouredStats,
    obs: &ObservationModel,
    st: &FilterState,
) -> Result<f64> {
    let c = LocalCoefficients::evaluate(m, s, st.x_hat)?;
    let h1 = obs.h.jet(st.x_hat).d1;
    Ok(variance_drift_from(&c, st.p, h1, 1.0 / obs.phi_eta))
}

fn variance_drift_from(c: &LocalCoefficients, p: f64, h1: f64, inv_phi: f64) -> f64 {
    2.0 * p * c.a[1] + c.k2[0] + 0.5 * p * c.k2[2] - p * p * inv_phi * h1 * h1
}

/// `max(P, floor)`
pub fn variance_guard(p: f64, opts: &FilterOptions) -> f64 {
    if p < opts.variance_floor || p.is_nan() {
        opts.variance_floor
    } else {
        p
    }
}

/// What the variance guard did during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GuardEvents {
    /// The stochastic forcing of the variance was dropped to keep `P` positive.
    pub forcing_dropped: bool,
    /// `P` was raised to the floor.
    pub clamped: bool,
}

impl GuardEvents {
    pub fn any(&self) -> bool {
        self.forcing_dropped || self.clamped
    }
}

fn finite(what: &'static str, v: f64, x: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { what, x })
    }
}

/// One Euler step of the filter consuming the observation increment `dz`.
pub fn filter_step(
    st: &FilterState,
    dz: f64,
    dt: f64,
    m: &SystemModel,
    s: &ColouredStats,
    obs: &ObservationModel,
    opts: &FilterOptions,
) -> Result<FilterState> {
    filter_step_traced(st, dz, dt, m, s, obs, opts).map(|(state, _)| state)
}

/// [`filter_step`] that also reports guard activity.
pub fn filter_step_traced(
    st: &FilterState,
    dz: f64,
    dt: f64,
    m: &SystemModel,
    s: &ColouredStats,
    obs: &ObservationModel,
    opts: &FilterOptions,
) -> Result<(FilterState, GuardEvents)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("filter step must be > 0, got {dt}")));
    }
    let stats = match opts.mode {
        FilterMode::SecondOrderColoured => *s,
        FilterMode::SecondOrderClassical => s.white(),
        FilterMode::DuffingClosedForm(params) => return duffing_step_traced(st, dz, dt, &params, opts),
    };
    let x = st.x_hat;
    let p = st.p;
    let c = LocalCoefficients::evaluate(m, &stats, x)?;
    let h = obs.h.jet(x);
    let inv_phi = opts.inverse_phi(obs);

    let mean_rate = finite("mean drift", c.a[0] + 0.5 * p * c.a[2], x)?;
    let var_rate = finite("variance drift", variance_drift_from(&c, p, h.d1, inv_phi), x)?;
    let innovation = finite("innovation", dz - (h.value + 0.5 * p * h.d2) * dt, x)?;

    let x_next = finite("conditional mean", x + mean_rate * dt + p * h.d1 * inv_phi * innovation, x)?;
    let deterministic = p + var_rate * dt;
    let forcing = p * p * h.d2 * inv_phi * innovation;
    let mut events = GuardEvents::default();
    let mut p_next = deterministic + forcing;
    if forcing != 0.0 && p_next < opts.variance_floor {
        p_next = deterministic;
        events.forcing_dropped = true;
    }
    let p_next = finite("conditional variance", p_next, x)?;
    let guarded = variance_guard(p_next, opts);
    events.clamped = guarded != p_next;
    Ok((FilterState::new(st.t + dt, x_next, guarded), events))
}

/// One step of the closed-form Duffing filter (`h(x) = x`).
pub fn duffing_step(
    st: &FilterState,
    dz: f64,
    dt: f64,
    params: &DuffingParams,
    opts: &FilterOptions,
) -> Result<FilterState> {
    duffing_step_traced(st, dz, dt, params, opts).map(|(state, _)| state)
}

fn duffing_step_traced(
    st: &FilterState,
    dz: f64,
    dt: f64,
    params: &DuffingParams,
    opts: &FilterOptions,
) -> Result<(FilterState, GuardEvents)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("filter step must be > 0, got {dt}")));
    }
    if params.beta == 0.0 {
        return Err(Error::Config("Duffing damping beta must be non-zero".into()));
    }
    let (x, p) = (st.x_hat, st.p);
    let inv_phi = if opts.open_loop { 0.0 } else { 1.0 / params.phi_eta };
    let mean_rate = finite("mean drift", params.mean_bracket(x, p), x)?;
    // The closed-form bracket carries -P²/φ; add it back when running open loop.
    let var_rate = if opts.open_loop {
        params.variance_bracket(x, p) + p * p / params.phi_eta
    } else {
        params.variance_bracket(x, p)
    };
    let var_rate = finite("variance drift", var_rate, x)?;
    let x_next = finite("conditional mean", x + mean_rate * dt + p * inv_phi * (dz - x * dt), x)?;
    let p_next = finite("conditional variance", p + var_rate * dt, x)?;
    let guarded = variance_guard(p_next, opts);
    let events = GuardEvents { forcing_dropped: false, clamped: guarded != p_next };
    Ok((FilterState::new(st.t + dt, x_next, guarded), events))
}

/// A filter trajectory with guard bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// States at `t0, t0 + dt, ...`; one more entry than increments consumed.
    pub states: Vec<FilterState>,
    /// Indices of steps at which the guard intervened.
    pub guard_steps: Vec<usize>,
}

/// Runs the filter over a sequence of observation increments.
pub fn run_filter(
    initial: FilterState,
    increments: &[f64],
    dt: f64,
    m: &SystemModel,
    s: &ColouredStats,
    obs: &ObservationModel,
    opts: &FilterOptions,
) -> Result<FilterRun> {
    opts.validate()?;
    let mut states = Vec::with_capacity(increments.len() + 1);
    let mut guard_steps = Vec::new();
    let mut st = FilterState { p: variance_guard(initial.p, opts), ..initial };
    states.push(st);
    for (step, &dz) in increments.iter().enumerate() {
        let (next, events) = filter_step_traced(&st, dz, dt, m, s, obs, opts)
            .map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
        if events.any() {
            guard_steps.push(step);
        }
        st = next;
        states.push(st);
    }
    Ok(FilterRun { states, guard_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::JetFn;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    fn preset_like(beta: f64) -> DuffingParams {
        DuffingParams { alpha: -0.001, beta, a: 0.001, d: 5.0, tau_cor: 0.005, phi_eta: 1e3 }
    }

    #[test]
    fn observation_intensity_must_be_positive_and_finite() {
        assert!(ObservationModel::direct(0.0).is_err());
        assert!(ObservationModel::direct(f64::INFINITY).is_err());
        assert!(ObservationModel::direct(1e4).is_ok());
    }

    #[test]
    fn mean_drift_without_variance_is_the_effective_drift() {
        let m = SystemModel::new(Polynomial::new(vec![0.2, -1.0, 0.3, 0.1]), Polynomial::new(vec![1.0, 0.4]));
        let s = ColouredStats::new(0.5, 0.02).unwrap();
        let obs = ObservationModel::direct(2.0).unwrap();
        let st = FilterState::new(0.0, 0.6, 0.0);
        let a = crate::equivalence::effective_drift(&m, &s, 0.6).unwrap();
        assert_eq!(mean_drift(&m, &s, &obs, &st).unwrap(), a);
    }

    #[test]
    fn classical_mean_drift() {
        let f = Polynomial::new(vec![0.0, -0.5, 0.8, -0.2]);
        let m = SystemModel::new(f.clone(), Polynomial::constant(0.9));
        let s = ColouredStats::new(1.3, 0.0).unwrap();
        let obs = ObservationModel::direct(1.0).unwrap();
        let st = FilterState::new(0.0, 0.7, 0.3);
        let j = f.jet(0.7);
        assert!(rel(mean_drift(&m, &s, &obs, &st).unwrap(), j.value + 0.15 * j.d2) < 1e-14);
    }

    #[test]
    fn kalman_bucy_variance_drift() {
        let (lambda, c, mu1, phi, p) = (-0.8, 1.5, 0.6, 2.5, 0.4);
        let m = SystemModel::new(Polynomial::linear(lambda, 0.0), Polynomial::constant(c));
        let s = ColouredStats::new(mu1, 0.0).unwrap();
        let obs = ObservationModel::direct(phi).unwrap();
        let st = FilterState::new(0.0, 0.3, p);
        let want = 2.0 * lambda * p + mu1 * c * c - p * p / phi;
        assert!(rel(variance_drift(&m, &s, &obs, &st).unwrap(), want) < 1e-14);

        // Pure diffusion injection.
        let m = SystemModel::new(Polynomial::constant(0.0), Polynomial::constant(c));
        let st = FilterState::new(0.0, 0.3, 0.0);
        assert!(rel(variance_drift(&m, &s, &obs, &st).unwrap(), mu1 * c * c) < 1e-15);
    }

    #[test]
    fn duffing_brackets_match_generic_equations() {
        for beta in [1.0, 7.5, 1e3, 1e4] {
            let params = preset_like(beta);
            let (m, s, obs) = (params.model(), params.stats(), params.observation().unwrap());
            for x in [-1.9, -0.3, 0.45, 1.2] {
                for p in [1e-6, 0.01, 0.7] {
                    let st = FilterState::new(0.0, x, p);
                    let md = mean_drift(&m, &s, &obs, &st).unwrap();
                    let vd = variance_drift(&m, &s, &obs, &st).unwrap();
                    assert!(rel(md, params.mean_bracket(x, p)) < 1e-10, "beta {beta} x {x} p {p}");
                    assert!(rel(vd, params.variance_bracket(x, p)) < 1e-10, "beta {beta} x {x} p {p}");
                }
            }
        }
    }

    #[test]
    fn duffing_step_agrees_with_generic_step() {
        let params = DuffingParams { alpha: -0.4, beta: 2.0, a: 0.3, d: 0.5, tau_cor: 0.05, phi_eta: 0.8 };
        let (m, s, obs) = (params.model(), params.stats(), params.observation().unwrap());
        let st = FilterState::new(1.0, 0.8, 0.05);
        let generic = filter_step(&st, 0.013, 0.01, &m, &s, &obs, &FilterOptions::default()).unwrap();
        let closed = duffing_step(&st, 0.013, 0.01, &params, &FilterOptions::default()).unwrap();
        let via_mode = filter_step(
            &st, 0.013, 0.01, &m, &s, &obs,
            &FilterOptions::with_mode(FilterMode::DuffingClosedForm(params)),
        )
        .unwrap();
        assert_eq!(closed, via_mode);
        assert!(rel(generic.x_hat, closed.x_hat) < 1e-13);
        assert!(rel(generic.p, closed.p) < 1e-13);
        assert_eq!(generic.t, closed.t);
    }

    #[test]
    fn duffing_without_cubic_term() {
        // a = 0 leaves a linear filter with multiplicative injection mu1 x²/β².
        let params = DuffingParams { alpha: -0.3, beta: 4.0, a: 0.0, d: 0.7, tau_cor: 0.01, phi_eta: 2.0 };
        let (x, p) = (1.3, 0.2);
        let mu1 = 1.4;
        let lin = 0.3 / 4.0;
        assert!(rel(params.mean_bracket(x, p), lin * x) < 1e-15);
        let want = 2.0 * p * lin + mu1 * x * x / 16.0 + p * mu1 / 16.0 - p * p / 2.0;
        assert!(rel(params.variance_bracket(x, p), want) < 1e-14);
    }

    #[test]
    fn duffing_at_rest() {
        let params = preset_like(1e4);
        let st = FilterState::new(2.0, 0.0, 0.0);
        let next = duffing_step(&st, 0.37, 0.1, &params, &FilterOptions { variance_floor: 1e-300, ..Default::default() }).unwrap();
        assert_eq!(next.x_hat, 0.0);
        assert_eq!(next.t, 2.1);
    }

    #[test]
    fn zero_variance_gives_pure_prediction() {
        let f = Polynomial::new(vec![0.0, -0.5, 0.0, 0.2]);
        let m = SystemModel::new(f.clone(), Polynomial::constant(1.0));
        let s = ColouredStats::new(0.0, 0.0).unwrap();
        let obs = ObservationModel::direct(0.5).unwrap();
        let opts = FilterOptions { variance_floor: 1e-300, ..Default::default() };
        let st = FilterState::new(0.0, 0.9, 0.0);
        let next = filter_step(&st, 123.0, 0.01, &m, &s, &obs, &opts).unwrap();
        assert_eq!(next.x_hat, 0.9 + f.value(0.9) * 0.01);
    }

    #[test]
    fn linear_observation_makes_variance_deterministic() {
        let m = SystemModel::new(Polynomial::new(vec![0.0, -0.5, 0.0, 0.2]), Polynomial::linear(0.2, 1.0));
        let s = ColouredStats::new(0.4, 0.01).unwrap();
        let obs = ObservationModel::direct(0.5).unwrap();
        let st = FilterState::new(0.0, 0.4, 0.3);
        let opts = FilterOptions::default();
        let a = filter_step(&st, -2.0, 0.01, &m, &s, &obs, &opts).unwrap();
        let b = filter_step(&st, 5.0, 0.01, &m, &s, &obs, &opts).unwrap();
        assert_eq!(a.p, b.p);
        assert_ne!(a.x_hat, b.x_hat);
    }

    #[test]
    fn guard_clamps_and_drops_forcing() {
        let opts = FilterOptions::default();
        assert_eq!(variance_guard(0.5, &opts), 0.5);
        assert_eq!(variance_guard(-1e-9, &opts), 1e-12);

        // Quadratic observation: a strongly negative innovation would push P
        // below zero through the forcing term, so the modified filter drops it.
        let m = SystemModel::new(Polynomial::constant(0.0), Polynomial::constant(1.0));
        let s = ColouredStats::new(0.0, 0.0).unwrap();
        let obs = ObservationModel::new(Polynomial::new(vec![0.0, 0.0, 1.0]), 0.1).unwrap();
        let st = FilterState::new(0.0, 0.0, 0.5);
        let (next, events) = filter_step_traced(&st, -10.0, 0.01, &m, &s, &obs, &opts).unwrap();
        assert!(events.forcing_dropped);
        assert!(!events.clamped);
        assert!(next.p > 0.0);
    }

    #[test]
    fn classical_mode_ignores_colour() {
        let m = SystemModel::new(Polynomial::new(vec![0.1, -0.6, 0.0, -0.2]), Polynomial::linear(0.3, 1.0));
        let obs = ObservationModel::new(JetFn::new(|u| u.sin()), 0.3).unwrap();
        let st = FilterState::new(0.0, 0.2, 0.1);
        let classical = FilterOptions::with_mode(FilterMode::SecondOrderClassical);
        let coloured = FilterOptions::default();
        let s = ColouredStats::new(0.9, 0.05).unwrap();
        let a = filter_step(&st, 0.01, 0.01, &m, &s, &obs, &classical).unwrap();
        let b = filter_step(&st, 0.01, 0.01, &m, &s.white(), &obs, &coloured).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_terms_are_named() {
        let m = SystemModel::new(Polynomial::new(vec![0.0, 0.0, 0.0, 1e300]), Polynomial::constant(1.0));
        let s = ColouredStats::new(0.1, 0.0).unwrap();
        let obs = ObservationModel::direct(1.0).unwrap();
        let st = FilterState::new(0.0, 1e10, 0.1);
        let err = filter_step(&st, 0.0, 0.01, &m, &s, &obs, &FilterOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what: "mean drift", .. }), "{err:?}");
    }

    #[test]
    fn singular_noise_coefficient_is_an_error() {
        let params = preset_like(10.0);
        let st = FilterState::new(0.0, 0.0, 0.1);
        let (m, s, obs) = (params.model(), params.stats(), params.observation().unwrap());
        assert!(matches!(
            filter_step(&st, 0.0, 0.1, &m, &s, &obs, &FilterOptions::default()),
            Err(Error::SingularNoiseCoefficient { .. })
        ));
    }
}
