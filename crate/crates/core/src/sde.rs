//! Euler-Maruyama simulation of the coloured system, its equivalent diffusion
//! and the observation process.
//!
//! The coloured system is integrated on the augmented state `(x, ξ)`:
//!
//! ```text
//! x_{n+1} = x_n + (f(x_n) + g(x_n) ξ_n) dt
//! ξ_{n+1} = ξ_n - ξ_n/τc dt + √(2D)/τc ΔB_n
//! ```
//!
//! Path `i` of an ensemble draws its Brownian increments from the process
//! substream `i` and its initial values from the initial-condition substream `i`
//! (see [`crate::rng`]). A coloured ensemble and a diffusion ensemble run with the
//! same seed therefore share their Brownian increments path by path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equivalence::{EquivalentIto, SystemModel};
use crate::error::{Error, Result};
use crate::io::CsvSeries;
use crate::jets::SmoothFn;
use crate::noise::{ou_step, OuParams};
use crate::rng::{Purpose, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub n_paths: usize,
}

impl SimConfig {
    pub fn new(dt: f64, t_end: f64, seed: u64, n_paths: usize) -> Result<Self> {
        let cfg = Self { dt, t_end, seed, n_paths };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be > 0, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(Error::Config(format!(
                "dt = {} exceeds t_end = {}",
                self.dt, self.t_end
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps, `t_end / dt` rounded to the nearest integer.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// A sampled trajectory on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<f64>,
}

impl Path {
    fn with_capacity(n: usize) -> Self {
        Self { times: Vec::with_capacity(n), states: Vec::with_capacity(n) }
    }

    fn push(&mut self, t: f64, x: f64) {
        self.times.push(t);
        self.states.push(x);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.states.last().copied()
    }

    /// Spacing of the time grid; `None` for fewer than two samples.
    pub fn dt(&self) -> Option<f64> {
        match self.times.as_slice() {
            [t0, t1, ..] => Some(t1 - t0),
            _ => None,
        }
    }
}

impl CsvSeries for Path {
    fn columns(&self) -> Vec<&'static str> {
        vec!["t", "x"]
    }
    fn row_count(&self) -> usize {
        self.states.len()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        vec![self.times[i], self.states[i]]
    }
}

/// Observation increments `dz_n` over `[t_n, t_n + dt)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSeries {
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
}

impl CsvSeries for ObservationSeries {
    fn columns(&self) -> Vec<&'static str> {
        vec!["t", "dz"]
    }
    fn row_count(&self) -> usize {
        self.increments.len()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        vec![self.times[i], self.increments[i]]
    }
}

/// State and noise trajectories of the coloured system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ColouredPath {
    pub x: Path,
    pub xi: Path,
}

/// Time of step `n`, computed from the index so grids stay exactly uniform.
#[inline]
fn time_at(n: usize, dt: f64) -> f64 {
    n as f64 * dt
}

fn check_state(x: f64, prev: f64, step: usize) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::AtStep { step, source: Box::new(Error::NonFinite { what: "state", x: prev }) })
    }
}

fn integrate_coloured(
    m: &SystemModel,
    p: &OuParams,
    xi0: f64,
    x0: f64,
    cfg: &SimConfig,
    index: u64,
    mut record: impl FnMut(usize, f64, f64),
) -> Result<(f64, f64)> {
    cfg.validate()?;
    p.validate()?;
    p.check_dt(cfg.dt)?;
    let dt = cfg.dt;
    let mut rng = StreamRng::new(cfg.seed, Purpose::Process, index);
    let (mut x, mut xi) = (x0, xi0);
    record(0, x, xi);
    for n in 0..cfg.n_steps() {
        let d_b = rng.brownian(dt);
        let next = x + (m.f.value(x) + m.g.value(x) * xi) * dt;
        xi = ou_step(xi, p, dt, d_b);
        x = check_state(next, x, n)?;
        record(n + 1, x, xi);
    }
    Ok((x, xi))
}

/// Single coloured path `index` of the ensemble defined by `cfg.seed`.
pub fn simulate_coloured(
    m: &SystemModel,
    p: &OuParams,
    xi0: f64,
    x0: f64,
    cfg: &SimConfig,
    index: u64,
) -> Result<ColouredPath> {
    let n = cfg.n_steps() + 1;
    let mut out = ColouredPath { x: Path::with_capacity(n), xi: Path::with_capacity(n) };
    integrate_coloured(m, p, xi0, x0, cfg, index, |k, x, xi| {
        let t = time_at(k, cfg.dt);
        out.x.push(t, x);
        out.xi.push(t, xi);
    })?;
    Ok(out)
}

/// A scalar Itô diffusion `dx = drift dt + diffusion dB`.
pub trait ItoSde: Sync {
    fn drift_diffusion(&self, x: f64) -> Result<(f64, f64)>;
}

impl ItoSde for EquivalentIto {
    fn drift_diffusion(&self, x: f64) -> Result<(f64, f64)> {
        self.drift_and_diffusion(x)
    }
}

/// The equivalent diffusion with `a` taken as the Itô drift, dropping the
/// `(b²)'/4` correction. Useful as a negative control.
#[derive(Debug, Clone)]
pub struct UncorrectedIto(pub EquivalentIto);

impl ItoSde for UncorrectedIto {
    fn drift_diffusion(&self, x: f64) -> Result<(f64, f64)> {
        self.0.symmetric_drift_and_diffusion(x)
    }
}

/// Diffusion given by a closure returning `(drift, diffusion)`.
pub struct FnSde<F>(pub F);

impl<F> ItoSde for FnSde<F>
where
    F: Fn(f64) -> (f64, f64) + Sync,
{
    fn drift_diffusion(&self, x: f64) -> Result<(f64, f64)> {
        Ok((self.0)(x))
    }
}

fn integrate_ito(
    sde: &dyn ItoSde,
    x0: f64,
    cfg: &SimConfig,
    index: u64,
    mut record: impl FnMut(usize, f64),
) -> Result<f64> {
    cfg.validate()?;
    let dt = cfg.dt;
    let mut rng = StreamRng::new(cfg.seed, Purpose::Process, index);
    let mut x = x0;
    record(0, x);
    for n in 0..cfg.n_steps() {
        let d_b = rng.brownian(dt);
        let (drift, diffusion) = sde.drift_diffusion(x).map_err(|e| Error::AtStep {
            step: n,
            source: Box::new(with_state(e, x)),
        })?;
        x = check_state(x + drift * dt + diffusion * d_b, x, n)?;
        record(n + 1, x);
    }
    Ok(x)
}

/// Fills in the visited state for errors raised by state-free evaluators.
fn with_state(e: Error, x: f64) -> Error {
    match e {
        Error::NegativeRadicand { x: xe, k2 } if xe.is_nan() => Error::NegativeRadicand { x, k2 },
        other => other,
    }
}

/// Single diffusion path `index` of the ensemble defined by `cfg.seed`.
pub fn simulate_ito(sde: &dyn ItoSde, x0: f64, cfg: &SimConfig, index: u64) -> Result<Path> {
    let mut path = Path::with_capacity(cfg.n_steps() + 1);
    integrate_ito(sde, x0, cfg, index, |k, x| path.push(time_at(k, cfg.dt), x))?;
    Ok(path)
}

/// Noisy observations `dz_n = h(x_n) dt + √(φ dt) N(0,1)` of `path`.
///
/// `index` selects the observation substream, normally the index of the path.
pub fn simulate_observations(
    path: &Path,
    h: &dyn SmoothFn,
    phi_eta: f64,
    seed: u64,
    index: u64,
) -> Result<ObservationSeries> {
    if !(phi_eta >= 0.0 && phi_eta.is_finite()) {
        return Err(Error::Config(format!(
            "observation noise intensity must be >= 0, got {phi_eta}"
        )));
    }
    let Some(dt) = path.dt() else {
        return Ok(ObservationSeries::default());
    };
    let mut rng = StreamRng::new(seed, Purpose::Observation, index);
    let scale = (phi_eta * dt).sqrt();
    let n = path.len() - 1;
    let mut out = ObservationSeries { times: Vec::with_capacity(n), increments: Vec::with_capacity(n) };
    for k in 0..n {
        let noise = scale * rng.standard_normal();
        out.times.push(path.times[k]);
        out.increments.push(h.value(path.states[k]) * dt + noise);
    }
    Ok(out)
}

/// Distribution of the initial state across an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    Point(f64),
    Normal { mean: f64, std: f64 },
}

impl InitialCondition {
    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Self::Point(x) => x,
            Self::Normal { mean, std } => mean + std * rng.standard_normal(),
        }
    }
}

/// Initial state of path `index`, plus a stationary draw for the OU input.
///
/// The state is always drawn first, so coloured and diffusion ensembles with the
/// same seed start from the same states.
pub fn initial_values(init: &InitialCondition, p: Option<&OuParams>, seed: u64, index: u64) -> (f64, f64) {
    let mut rng = StreamRng::new(seed, Purpose::Initial, index);
    let x0 = init.draw(&mut rng);
    let xi0 = match p {
        Some(p) => p.stationary_variance().sqrt() * rng.standard_normal(),
        None => 0.0,
    };
    (x0, xi0)
}

fn run_indexed<F>(n: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| f(i as u64).map_err(|e| Error::Run { run: i, source: Box::new(e) }))
        .collect()
}

/// Terminal states of `cfg.n_paths` coloured paths, in path order.
/// The OU input starts from its stationary distribution.
pub fn coloured_ensemble(
    m: &SystemModel,
    p: &OuParams,
    init: &InitialCondition,
    cfg: &SimConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    p.check_dt(cfg.dt)?;
    run_indexed(cfg.n_paths, |i| {
        let (x0, xi0) = initial_values(init, Some(p), cfg.seed, i);
        integrate_coloured(m, p, xi0, x0, cfg, i, |_, _, _| {}).map(|(x, _)| x)
    })
}

/// Terminal states of `cfg.n_paths` diffusion paths, in path order.
pub fn ito_ensemble(sde: &dyn ItoSde, init: &InitialCondition, cfg: &SimConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    run_indexed(cfg.n_paths, |i| {
        let (x0, _) = initial_values(init, None, cfg.seed, i);
        integrate_ito(sde, x0, cfg, i, |_, _| {})
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jets::Polynomial;
    use crate::noise::ColouredStats;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    /// Standard error of a sample variance of Gaussian data.
    fn var_se(var: f64, n: usize) -> f64 {
        var * (2.0 / (n as f64 - 1.0)).sqrt()
    }

    fn linear(lambda: f64, sigma: f64) -> FnSde<impl Fn(f64) -> (f64, f64) + Sync> {
        FnSde(move |x: f64| (-lambda * x, sigma))
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(0.0, 1.0, 1, 1).is_err());
        assert!(SimConfig::new(2.0, 1.0, 1, 1).is_err());
        assert!(SimConfig::new(0.1, 1.0, 1, 0).is_err());
        assert_eq!(SimConfig::new(0.1, 1.0, 1, 1).unwrap().n_steps(), 10);
    }

    #[test]
    fn noiseless_coloured_path_follows_the_ode() {
        let m = SystemModel::new(Polynomial::linear(-1.0, 0.0), Polynomial::constant(1.0));
        let p = OuParams::new(0.0, 0.1).unwrap();
        let cfg = SimConfig::new(0.001, 1.0, 7, 1).unwrap();
        let path = simulate_coloured(&m, &p, 0.0, 1.0, &cfg, 0).unwrap();
        assert_eq!(path.x.len(), 1001);
        assert!((path.x.last().unwrap() - (-1.0f64).exp()).abs() < 2.0 * cfg.dt);
        assert!(path.xi.states.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn coloured_step_rule_is_enforced() {
        let m = SystemModel::new(Polynomial::linear(-1.0, 0.0), Polynomial::constant(1.0));
        let p = OuParams::new(1.0, 0.005).unwrap();
        let cfg = SimConfig::new(0.001, 1.0, 7, 1).unwrap();
        assert!(matches!(simulate_coloured(&m, &p, 0.0, 1.0, &cfg, 0), Err(Error::Stability { .. })));
    }

    #[test]
    fn linear_system_with_ou_input_has_the_filtered_variance() {
        // Spectral oracle: x = H * ξ with |H(iω)|² = 1/(λ² + ω²) and
        // S_ξ(ω) = 2D/(1 + ω²τ²), integrating to D / (λ (1 + λ τ)).
        let (lambda, d, tau) = (1.0, 0.5, 0.1);
        let m = SystemModel::new(Polynomial::linear(-lambda, 0.0), Polynomial::constant(1.0));
        let p = OuParams::new(d, tau).unwrap();
        let cfg = SimConfig::new(0.005, 10.0, 11, 20_000).unwrap();
        let xs = coloured_ensemble(&m, &p, &InitialCondition::Point(0.0), &cfg).unwrap();
        let (_, var) = mean_var(&xs);
        let want = d / (lambda * (1.0 + lambda * tau));
        assert!((var - want).abs() < 3.0 * var_se(want, xs.len()), "{var} vs {want}");
    }

    #[test]
    fn same_seed_gives_identical_paths() {
        let m = SystemModel::new(Polynomial::new(vec![0.0, -1.0, 0.0, -1.0]), Polynomial::linear(1.0, 2.0));
        let p = OuParams::new(0.1, 0.01).unwrap();
        let cfg = SimConfig::new(0.001, 0.5, 99, 1).unwrap();
        let a = simulate_coloured(&m, &p, 0.3, 0.2, &cfg, 4).unwrap();
        let b = simulate_coloured(&m, &p, 0.3, 0.2, &cfg, 4).unwrap();
        assert_eq!(a, b);
        let c = simulate_coloured(&m, &p, 0.3, 0.2, &cfg, 5).unwrap();
        assert_ne!(a, c);

        let eq = EquivalentIto::new(m, ColouredStats::new(0.2, 0.001).unwrap());
        assert_eq!(simulate_ito(&eq, 0.2, &cfg, 3).unwrap(), simulate_ito(&eq, 0.2, &cfg, 3).unwrap());
    }

    #[test]
    fn ensembles_are_reproducible() {
        let sde = linear(1.0, 0.5);
        let cfg = SimConfig::new(0.01, 1.0, 5, 500).unwrap();
        let init = InitialCondition::Normal { mean: 1.0, std: 0.1 };
        let a = ito_ensemble(&sde, &init, &cfg).unwrap();
        let b = ito_ensemble(&sde, &init, &cfg).unwrap();
        assert_eq!(a, b);
        for i in [0usize, 17, 499] {
            let (x0, _) = initial_values(&init, None, 5, i as u64);
            assert_eq!(simulate_ito(&sde, x0, &cfg, i as u64).unwrap().last().unwrap(), a[i]);
        }
    }

    #[test]
    fn brownian_motion_variance_grows_linearly() {
        let d: f64 = 0.3;
        let sde = FnSde(move |_: f64| (0.0, (2.0 * d).sqrt()));
        let cfg = SimConfig::new(0.01, 2.0, 3, 20_000).unwrap();
        let xs = ito_ensemble(&sde, &InitialCondition::Point(0.0), &cfg).unwrap();
        let (_, var) = mean_var(&xs);
        let want = 2.0 * d * 2.0;
        assert!((var - want).abs() < 3.0 * var_se(want, xs.len()));
    }

    #[test]
    fn ou_diffusion_reaches_its_stationary_variance() {
        let (lambda, sigma) = (2.0, 0.7);
        let cfg = SimConfig::new(0.001, 5.0, 21, 20_000).unwrap();
        let xs = ito_ensemble(&linear(lambda, sigma), &InitialCondition::Point(0.0), &cfg).unwrap();
        let (_, var) = mean_var(&xs);
        let want = sigma * sigma / (2.0 * lambda);
        assert!((var - want).abs() < 3.0 * var_se(want, xs.len()), "{var} vs {want}");
    }

    #[test]
    fn mean_bias_shrinks_with_the_step() {
        let (lambda, x0, t): (f64, f64, f64) = (2.0, 1.0, 1.0);
        let exact = x0 * (-lambda * t).exp();
        let bias: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&dt| {
                let cfg = SimConfig::new(dt, t, 8, 200_000).unwrap();
                let xs = ito_ensemble(&linear(lambda, 0.1), &InitialCondition::Point(x0), &cfg).unwrap();
                (mean_var(&xs).0 - exact).abs()
            })
            .collect();
        assert!(bias[0] > bias[1] && bias[1] > bias[2], "{bias:?}");
    }

    #[test]
    fn negative_radicand_reports_state_and_step() {
        // g = 1 + x and f = -x² give r' < 0 for x > 0; a large mu2 flips the radicand.
        let m = SystemModel::new(Polynomial::new(vec![0.0, 0.0, -1.0]), Polynomial::linear(1.0, 1.0));
        let eq = EquivalentIto::new(m, ColouredStats::new(0.01, 1.0).unwrap());
        let cfg = SimConfig::new(0.01, 1.0, 1, 1).unwrap();
        let err = simulate_ito(&eq, 1.0, &cfg, 0).unwrap_err();
        match err {
            Error::AtStep { step: 0, source } => {
                assert!(matches!(*source, Error::NegativeRadicand { x, .. } if x == 1.0), "{source:?}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exploding_path_reports_the_step() {
        let sde = FnSde(|x: f64| (x * x * x, 0.0));
        let cfg = SimConfig::new(0.5, 100.0, 1, 1).unwrap();
        let err = simulate_ito(&sde, 2.0, &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::AtStep { source, .. } if matches!(*source, Error::NonFinite { what: "state", .. })));
    }

    #[test]
    fn noiseless_observations_are_exact() {
        let path = Path { times: vec![0.0, 0.01, 0.02, 0.03], states: vec![2.0; 4] };
        let obs = simulate_observations(&path, &Polynomial::linear(1.0, 0.0), 0.0, 1, 0).unwrap();
        assert_eq!(obs.increments, vec![0.02; 3]);
        assert_eq!(obs.times, vec![0.0, 0.01, 0.02]);
    }

    #[test]
    fn pure_observation_noise_has_intensity_phi() {
        let n = 100_000;
        let dt = 0.01;
        let phi = 3.0;
        let path = Path {
            times: (0..=n).map(|k| time_at(k, dt)).collect(),
            states: vec![0.7; n + 1],
        };
        let obs = simulate_observations(&path, &Polynomial::constant(0.0), phi, 4, 0).unwrap();
        let scaled: Vec<f64> = obs.increments.iter().map(|v| v / dt.sqrt()).collect();
        let (_, var) = mean_var(&scaled);
        assert!((var - phi).abs() < 3.0 * var_se(phi, n));
    }

    #[test]
    fn observation_stream_does_not_touch_the_state() {
        let m = SystemModel::new(Polynomial::linear(-1.0, 0.0), Polynomial::constant(1.0));
        let p = OuParams::new(0.2, 0.05).unwrap();
        let cfg = SimConfig::new(0.005, 1.0, 31, 1).unwrap();
        let before = simulate_coloured(&m, &p, 0.0, 1.0, &cfg, 0).unwrap();
        let h = Polynomial::linear(1.0, 0.0);
        let o1 = simulate_observations(&before.x, &h, 1.0, 31, 0).unwrap();
        let o2 = simulate_observations(&before.x, &h, 1.0, 32, 0).unwrap();
        let after = simulate_coloured(&m, &p, 0.0, 1.0, &cfg, 0).unwrap();
        assert_eq!(before, after);
        assert_ne!(o1, o2);
    }

    #[test]
    fn errors_carry_the_path_index() {
        let sde = FnSde(|x: f64| (x * x * x, 1.0));
        let cfg = SimConfig::new(0.5, 50.0, 1, 3).unwrap();
        let err = ito_ensemble(&sde, &InitialCondition::Point(3.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::Run { run: 0, .. }), "{err:?}");
    }
}
