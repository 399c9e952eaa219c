//! Duffing experiments: truth simulation, observations, filtering and metrics.
//!
//! A run simulates the adiabatically eliminated Duffing oscillator
//! `ẋ = -(α/β) x + (a/β) x³ + (x/β) ξ`, observes it through `dz = x dt + dη`,
//! and runs both the filter and the open-loop predictor (the same equations with
//! the measurement gain forced to zero) from the same initial guess.

use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equivalence::EquivalentIto;
use crate::error::{Error, Result};
use crate::filter::{run_filter, DuffingParams, FilterMode, FilterOptions, FilterRun, FilterState};
use crate::io::{export_csv, CsvSeries};
use crate::jets::Polynomial;
use crate::rng::{Purpose, StreamRng};
use crate::sde::{initial_values, simulate_coloured, simulate_ito, simulate_observations, ObservationSeries, Path, SimConfig};

/// Below this damping the adiabatic elimination is questionable.
pub const BETA_WARNING_THRESHOLD: f64 = 100.0;

/// Guard events in the first steps are tolerated while the filter settles.
pub const WARMUP_STEPS: usize = 10;

/// How the truth trajectory is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthModel {
    /// The equivalent white-noise diffusion, integrable with any step.
    EquivalentIto,
    /// The coloured system itself; needs `dt <= tau_cor/10`.
    Coloured,
}

/// Initial filter estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialEstimate {
    /// `x̂0 ~ N(x0, P0)`, drawn per run.
    Sample,
    /// `x̂0 = x0`.
    Exact,
}

/// Which filter equations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Coloured,
    Classical,
    ClosedForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset_id: Option<u8>,
    pub alpha: f64,
    pub beta: f64,
    pub a: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub tau_cor: f64,
    pub phi_eta: f64,
    #[serde(rename = "P0")]
    pub p0: f64,
    pub x0: f64,
    pub x_hat0_policy: InitialEstimate,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub n_runs: usize,
    pub truth: TruthModel,
    pub filter: FilterKind,
    pub variance_floor: f64,
}

/// Parameter values of one published set.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PresetValues {
    d: f64,
    tau_cor: f64,
    a: f64,
    beta: f64,
    alpha: f64,
    phi_eta: f64,
    p0: f64,
    /// Horizon and truth initial state are toolkit choices, see [`preset`].
    t_end: f64,
}

const PRESETS: [PresetValues; 4] = [
    PresetValues { d: 5.0, tau_cor: 0.005, a: 0.001, beta: 1e4, alpha: -0.001, phi_eta: 1e4, p0: 0.01, t_end: 1e6 },
    PresetValues { d: 5.0, tau_cor: 0.001, a: 0.001, beta: 1e4, alpha: -0.001, phi_eta: 1e4, p0: 0.1, t_end: 5e5 },
    PresetValues { d: 5.0, tau_cor: 0.005, a: 0.001, beta: 1e3, alpha: -0.001, phi_eta: 1e3, p0: 0.1, t_end: 3e4 },
    PresetValues { d: 5.0, tau_cor: 0.005, a: 0.001, beta: 1e3, alpha: -0.001, phi_eta: 1e3, p0: 0.01, t_end: 3e4 },
];

/// Steps per run for the preset horizons.
pub const PRESET_STEPS: usize = 2000;

/// One of the four published Duffing parameter sets.
///
/// The sets fix `D, tau_cor, a, beta, alpha, phi_eta, P0`. The remaining knobs are
/// toolkit defaults: `x0 = 1`, `x̂0 ~ N(x0, P0)`, 2000 steps, the equivalent
/// diffusion as truth, 100 runs, and a horizon well inside the finite escape
/// time of the unstable cubic drift.
pub fn preset(id: u8) -> Result<ExperimentConfig> {
    let p = match id {
        1..=4 => PRESETS[id as usize - 1],
        _ => return Err(Error::UnknownPreset(id)),
    };
    Ok(ExperimentConfig {
        preset_id: Some(id),
        alpha: p.alpha,
        beta: p.beta,
        a: p.a,
        d: p.d,
        tau_cor: p.tau_cor,
        phi_eta: p.phi_eta,
        p0: p.p0,
        x0: 1.0,
        x_hat0_policy: InitialEstimate::Sample,
        dt: p.t_end / PRESET_STEPS as f64,
        t_end: p.t_end,
        seed: 0,
        n_runs: 100,
        truth: TruthModel::EquivalentIto,
        filter: FilterKind::Coloured,
        variance_floor: FilterOptions::default().variance_floor,
    })
}

/// Keys accepted in a JSON config file. Model parameters come from the preset
/// when `preset_id` is given and must all be present otherwise.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset_id: Option<u8>,
    alpha: Option<f64>,
    beta: Option<f64>,
    a: Option<f64>,
    #[serde(rename = "D")]
    d: Option<f64>,
    tau_cor: Option<f64>,
    phi_eta: Option<f64>,
    #[serde(rename = "P0")]
    p0: Option<f64>,
    x0: Option<f64>,
    x_hat0_policy: Option<InitialEstimate>,
    dt: Option<f64>,
    t_end: Option<f64>,
    seed: Option<u64>,
    n_runs: Option<usize>,
    truth: Option<TruthModel>,
    filter: Option<FilterKind>,
    variance_floor: Option<f64>,
}

impl ExperimentConfig {
    /// Parses a JSON config, filling unspecified knobs from the preset or the
    /// defaults of preset 1.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = match file.preset_id {
            Some(id) => preset(id)?,
            None => {
                let missing: Vec<&str> = [
                    ("alpha", file.alpha.is_none()),
                    ("beta", file.beta.is_none()),
                    ("a", file.a.is_none()),
                    ("D", file.d.is_none()),
                    ("tau_cor", file.tau_cor.is_none()),
                    ("phi_eta", file.phi_eta.is_none()),
                    ("P0", file.p0.is_none()),
                ]
                .iter()
                .filter(|(_, m)| *m)
                .map(|(k, _)| *k)
                .collect();
                if !missing.is_empty() {
                    return Err(Error::Config(format!(
                        "config without preset_id must set {}",
                        missing.join(", ")
                    )));
                }
                ExperimentConfig { preset_id: None, ..preset(1)? }
            }
        };
        macro_rules! take {
            ($($field:ident),*) => { $( if let Some(v) = file.$field { cfg.$field = v; } )* };
        }
        take!(alpha, beta, a, d, tau_cor, phi_eta, p0, x0, x_hat0_policy, seed, n_runs, truth, filter, variance_floor);
        cfg.set_horizon(file.t_end, file.dt);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides the horizon and step. A new horizon without a step keeps the
    /// number of steps at [`PRESET_STEPS`].
    pub fn set_horizon(&mut self, t_end: Option<f64>, dt: Option<f64>) {
        if let Some(t) = t_end {
            self.t_end = t;
            self.dt = t / PRESET_STEPS as f64;
        }
        if let Some(dt) = dt {
            self.dt = dt;
        }
    }

    pub fn from_file(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn params(&self) -> DuffingParams {
        DuffingParams {
            alpha: self.alpha,
            beta: self.beta,
            a: self.a,
            d: self.d,
            tau_cor: self.tau_cor,
            phi_eta: self.phi_eta,
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(self.dt, self.t_end, self.seed, self.n_runs)
    }

    pub fn filter_options(&self) -> FilterOptions {
        let mode = match self.filter {
            FilterKind::Coloured => FilterMode::SecondOrderColoured,
            FilterKind::Classical => FilterMode::SecondOrderClassical,
            FilterKind::ClosedForm => FilterMode::DuffingClosedForm(self.params()),
        };
        FilterOptions { variance_floor: self.variance_floor, mode, open_loop: false }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.a, self.d, self.tau_cor, self.phi_eta, self.p0, self.x0];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        if self.beta == 0.0 {
            return Err(Error::Config("beta must be non-zero".into()));
        }
        if !(self.phi_eta > 0.0) {
            return Err(Error::Config(format!("phi_eta must be > 0, got {}", self.phi_eta)));
        }
        if !(self.p0 >= 0.0) {
            return Err(Error::Config(format!("P0 must be >= 0, got {}", self.p0)));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config(format!("variance_floor must be > 0, got {}", self.variance_floor)));
        }
        self.params().ou().validate()?;
        let sim = self.sim_config()?;
        if self.truth == TruthModel::Coloured {
            self.params().ou().check_dt(sim.dt)?;
        }
        Ok(())
    }

    /// Non-fatal concerns about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.beta.abs() < BETA_WARNING_THRESHOLD {
            out.push(format!(
                "beta = {} is below {BETA_WARNING_THRESHOLD}; the adiabatic elimination assumes strong damping",
                self.beta
            ));
        }
        out
    }
}

/// Metrics of a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub rmse_filter: f64,
    pub rmse_open_loop: f64,
    pub mean_nees: f64,
    pub clamp_events: usize,
    pub clamp_events_after_warmup: usize,
    pub min_p: f64,
}

impl RunMetrics {
    pub fn filter_wins(&self) -> bool {
        self.rmse_filter < self.rmse_open_loop
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Root of the run-averaged mean squared error.
    pub rmse_filter: f64,
    pub rmse_open_loop: f64,
    /// Average over runs of the per-run mean NEES.
    pub mean_nees: f64,
    pub clamp_events: usize,
    pub clamp_events_after_warmup: usize,
    /// Runs in which the filter beat the open-loop predictor.
    pub filter_wins: usize,
    pub n_runs: usize,
    pub per_run: Vec<RunMetrics>,
}

/// Aligned truth, estimate and observations of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub truth: Path,
    pub observations: ObservationSeries,
    pub filter: FilterRun,
    pub open_loop: FilterRun,
}

impl CsvSeries for RunTrace {
    fn columns(&self) -> Vec<&'static str> {
        vec!["t", "x_true", "x_hat", "P"]
    }
    fn row_count(&self) -> usize {
        self.truth.len()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        let s = &self.filter.states[i];
        vec![self.truth.times[i], self.truth.states[i], s.x_hat, s.p]
    }
}

impl RunTrace {
    fn metrics(&self, run: usize) -> RunMetrics {
        let n = self.truth.len() as f64;
        let (mut se_f, mut se_o, mut nees, mut min_p) = (0.0, 0.0, 0.0, f64::INFINITY);
        for (i, &x) in self.truth.states.iter().enumerate() {
            let f = &self.filter.states[i];
            let o = &self.open_loop.states[i];
            se_f += (x - f.x_hat).powi(2);
            se_o += (x - o.x_hat).powi(2);
            nees += (x - f.x_hat).powi(2) / f.p;
            min_p = min_p.min(f.p);
        }
        let guard = &self.filter.guard_steps;
        RunMetrics {
            run,
            rmse_filter: (se_f / n).sqrt(),
            rmse_open_loop: (se_o / n).sqrt(),
            mean_nees: nees / n,
            clamp_events: guard.len(),
            clamp_events_after_warmup: guard.iter().filter(|&&s| s >= WARMUP_STEPS).count(),
            min_p,
        }
    }
}

/// Initial filter estimate for `run`.
fn initial_estimate(cfg: &ExperimentConfig, run: usize) -> f64 {
    match cfg.x_hat0_policy {
        InitialEstimate::Exact => cfg.x0,
        InitialEstimate::Sample => {
            let mut rng = StreamRng::new(cfg.seed, Purpose::Estimator, run as u64);
            cfg.x0 + cfg.p0.sqrt() * rng.standard_normal()
        }
    }
}

/// Simulates the truth path of `run`.
pub fn simulate_truth(cfg: &ExperimentConfig, run: usize) -> Result<Path> {
    let params = cfg.params();
    let sim = cfg.sim_config()?;
    let index = run as u64;
    match cfg.truth {
        TruthModel::EquivalentIto => {
            let eq = EquivalentIto::new(params.model(), params.stats());
            simulate_ito(&eq, cfg.x0, &sim, index)
        }
        TruthModel::Coloured => {
            let ou = params.ou();
            let (_, xi0) = initial_values(&crate::sde::InitialCondition::Point(cfg.x0), Some(&ou), cfg.seed, index);
            simulate_coloured(&params.model(), &ou, xi0, cfg.x0, &sim, index).map(|p| p.x)
        }
    }
}

/// Truth, observations and both estimators for one run.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<RunTrace> {
    let wrap = |e| Error::Run { run, source: Box::new(e) };
    let params = cfg.params();
    let truth = simulate_truth(cfg, run).map_err(wrap)?;
    let observations =
        simulate_observations(&truth, &Polynomial::linear(1.0, 0.0), cfg.phi_eta, cfg.seed, run as u64).map_err(wrap)?;
    let (model, stats, obs) = (params.model(), params.stats(), params.observation().map_err(wrap)?);
    let start = FilterState::new(0.0, initial_estimate(cfg, run), cfg.p0);
    let opts = cfg.filter_options();
    let filter = run_filter(start, &observations.increments, cfg.dt, &model, &stats, &obs, &opts).map_err(wrap)?;
    let open = FilterOptions { open_loop: true, ..opts };
    let open_loop = run_filter(start, &observations.increments, cfg.dt, &model, &stats, &obs, &open).map_err(wrap)?;
    Ok(RunTrace { truth, observations, filter, open_loop })
}

fn aggregate(per_run: Vec<RunMetrics>) -> MetricsReport {
    let n = per_run.len() as f64;
    let mean = |f: fn(&RunMetrics) -> f64| per_run.iter().map(f).sum::<f64>() / n;
    MetricsReport {
        rmse_filter: mean(|m| m.rmse_filter.powi(2)).sqrt(),
        rmse_open_loop: mean(|m| m.rmse_open_loop.powi(2)).sqrt(),
        mean_nees: mean(|m| m.mean_nees),
        clamp_events: per_run.iter().map(|m| m.clamp_events).sum(),
        clamp_events_after_warmup: per_run.iter().map(|m| m.clamp_events_after_warmup).sum(),
        filter_wins: per_run.iter().filter(|m| m.filter_wins()).count(),
        n_runs: per_run.len(),
        per_run,
    }
}

/// Runs every seed of the experiment and aggregates the metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let per_run = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| run_single(cfg, run).map(|t| t.metrics(run)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(per_run))
}

/// [`run_experiment`] that also writes `run_NNN.csv` (filter trajectory),
/// `obs_NNN.csv` (observations) and `metrics.json` into `out_dir`.
pub fn run_experiment_to_dir(cfg: &ExperimentConfig, out_dir: impl AsRef<FsPath>) -> Result<MetricsReport> {
    cfg.validate()?;
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let per_run = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let trace = run_single(cfg, run)?;
            export_csv(&trace, dir.join(format!("run_{run:03}.csv")))?;
            export_csv(&trace.observations, dir.join(format!("obs_{run:03}.csv")))?;
            Ok(trace.metrics(run))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = aggregate(per_run);
    write_json(&report, dir.join("metrics.json"))?;
    Ok(report)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<FsPath>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path.as_ref(), text).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))
}
