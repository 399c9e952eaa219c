//! Grid solution of the Fokker-Planck equation and Monte-Carlo comparison.
//!
//! The density is advanced in conservative flux form,
//!
//! ```text
//! ∂p/∂t = -∂J/∂x,   J = k1 p - ½ ∂(k2 p)/∂x,
//! ```
//!
//! with interface fluxes `J_{i+½} = k1(x_{i+½}) (p_i + p_{i+1})/2 - ((k2 p)_{i+1} - (k2 p)_i)/(2Δx)`
//! and `J = 0` at both ends. Each step moves mass between neighbouring cells only,
//! so the total mass is conserved up to rounding.

use serde::{Deserialize, Serialize};

use crate::equivalence::{kinetic_coefficients, EquivalentIto, KineticCoefficients, SystemModel};
use crate::error::{Error, Result};
use crate::io::CsvSeries;
use crate::jets::Polynomial;
use crate::noise::{ou_stats, OuParams};
use crate::sde::{coloured_ensemble, ito_ensemble, InitialCondition, SimConfig};

/// Uniform cell layout on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_min < x_max && x_min.is_finite() && x_max.is_finite()) {
            return Err(Error::Config(format!("grid bounds must satisfy x_min < x_max, got [{x_min}, {x_max}]")));
        }
        if n_cells == 0 {
            return Err(Error::Config("grid needs at least one cell".into()));
        }
        Ok(Self { x_min, x_max, n_cells })
    }

    /// `[mean - 6 std, mean + 6 std]` of the samples.
    pub fn around_samples(samples: &[f64], n_cells: usize) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Config("need at least two samples to place a grid".into()));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::Config(format!("sample spread must be positive and finite, got {std}")));
        }
        Self::new(mean - 6.0 * std, mean + 6.0 * std, n_cells)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.x_min + (i as f64 + 0.5) * self.dx()
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.n_cells).map(|i| self.center(i)).collect()
    }

    /// Cell containing `x`, with `x_max` assigned to the last cell.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.x_min && x <= self.x_max) {
            return None;
        }
        let i = ((x - self.x_min) / self.dx()).floor() as usize;
        Some(i.min(self.n_cells - 1))
    }
}

/// A density sampled at cell centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
    pub values: Vec<f64>,
}

impl Grid1D {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { x_min: spec.x_min, x_max: spec.x_max, n_cells: spec.n_cells, values: vec![0.0; spec.n_cells] }
    }

    /// `density` evaluated at the cell centres.
    pub fn from_density(spec: GridSpec, density: impl Fn(f64) -> f64) -> Self {
        let values = spec.centers().into_iter().map(density).collect();
        Self { x_min: spec.x_min, x_max: spec.x_max, n_cells: spec.n_cells, values }
    }

    /// Normal density, renormalised to unit mass on the grid.
    pub fn gaussian(spec: GridSpec, mean: f64, std: f64) -> Self {
        let norm = 1.0 / (std * (2.0 * std::f64::consts::PI).sqrt());
        Self::from_density(spec, |x| norm * (-0.5 * ((x - mean) / std).powi(2)).exp()).normalized()
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { x_min: self.x_min, x_max: self.x_max, n_cells: self.n_cells }
    }

    pub fn dx(&self) -> f64 {
        self.spec().dx()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx()
    }

    /// Scaled to unit mass; a zero density is returned unchanged.
    pub fn normalized(&self) -> Self {
        let mass = self.mass();
        let mut out = self.clone();
        if mass > 0.0 {
            out.values.iter_mut().for_each(|v| *v /= mass);
        }
        out
    }

    pub fn mean(&self) -> f64 {
        let dx = self.dx();
        let spec = self.spec();
        self.values.iter().enumerate().map(|(i, p)| spec.center(i) * p * dx).sum::<f64>() / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let (dx, spec, mean) = (self.dx(), self.spec(), self.mean());
        self.values.iter().enumerate().map(|(i, p)| (spec.center(i) - mean).powi(2) * p * dx).sum::<f64>()
            / self.mass()
    }
}

impl CsvSeries for Grid1D {
    fn columns(&self) -> Vec<&'static str> {
        vec!["x", "p"]
    }
    fn row_count(&self) -> usize {
        self.values.len()
    }
    fn row(&self, i: usize) -> Vec<f64> {
        vec![self.spec().center(i), self.values[i]]
    }
}

/// Drift and diffusion coefficients of a Fokker-Planck equation.
pub trait FokkerPlanck {
    fn coefficients(&self, x: f64) -> Result<(f64, f64)>;
}

impl FokkerPlanck for KineticCoefficients {
    fn coefficients(&self, x: f64) -> Result<(f64, f64)> {
        kinetic_coefficients(&self.model, &self.stats, x)
    }
}

/// Coefficients `(k1, k2)` given by a closure.
pub struct FnKinetic<F>(pub F);

impl<F: Fn(f64) -> (f64, f64)> FokkerPlanck for FnKinetic<F> {
    fn coefficients(&self, x: f64) -> Result<(f64, f64)> {
        Ok((self.0)(x))
    }
}

struct Discretization {
    /// `k1` at the interior interfaces.
    k1_face: Vec<f64>,
    /// `k2` at the cell centres.
    k2_cell: Vec<f64>,
}

fn discretize(kc: &dyn FokkerPlanck, spec: GridSpec) -> Result<Discretization> {
    let dx = spec.dx();
    let mut k2_cell = Vec::with_capacity(spec.n_cells);
    for x in spec.centers() {
        let (_, k2) = kc.coefficients(x)?;
        if k2 < 0.0 {
            return Err(Error::NegativeRadicand { x, k2 });
        }
        if !k2.is_finite() {
            return Err(Error::NonFinite { what: "k2", x });
        }
        k2_cell.push(k2);
    }
    let mut k1_face = Vec::with_capacity(spec.n_cells.saturating_sub(1));
    for i in 1..spec.n_cells {
        let x = spec.x_min + i as f64 * dx;
        let (k1, _) = kc.coefficients(x)?;
        if !k1.is_finite() {
            return Err(Error::NonFinite { what: "k1", x });
        }
        k1_face.push(k1);
    }
    Ok(Discretization { k1_face, k2_cell })
}

fn step_limits(d: &Discretization, dx: f64) -> (f64, f64) {
    let k2_max = d.k2_cell.iter().cloned().fold(0.0, f64::max);
    let k1_max = d.k1_face.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let diffusive = if k2_max > 0.0 { dx * dx / (2.0 * k2_max) } else { f64::INFINITY };
    let advective = if k1_max > 0.0 { dx / k1_max } else { f64::INFINITY };
    (diffusive, advective)
}

/// Largest step the explicit scheme accepts on `grid`.
pub fn stable_dt(kc: &dyn FokkerPlanck, spec: GridSpec) -> Result<f64> {
    let d = discretize(kc, spec)?;
    let (diffusive, advective) = step_limits(&d, spec.dx());
    Ok(diffusive.min(advective))
}

/// Advances `grid0` to `t_end` with steps no longer than `dt`.
///
/// The step is shortened so that a whole number of steps reaches `t_end`.
pub fn fpe_evolve(kc: &dyn FokkerPlanck, grid0: &Grid1D, dt: f64, t_end: f64) -> Result<Grid1D> {
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(Error::Config(format!("need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}")));
    }
    let spec = grid0.spec();
    let dx = spec.dx();
    let d = discretize(kc, spec)?;
    let (diffusive, advective) = step_limits(&d, dx);
    if dt > diffusive {
        return Err(Error::Stability {
            detail: format!("dt = {dt} exceeds dx²/(2 max k2) = {diffusive} on this grid"),
        });
    }
    if dt > advective {
        return Err(Error::Stability { detail: format!("dt = {dt} exceeds dx/max|k1| = {advective} on this grid") });
    }
    let n_steps = (t_end / dt).ceil() as usize;
    if n_steps == 0 {
        return Ok(grid0.clone());
    }
    let h = t_end / n_steps as f64;
    let n = spec.n_cells;
    let mut p = grid0.values.clone();
    let mut flux = vec![0.0; n + 1];
    for _ in 0..n_steps {
        for i in 0..n - 1 {
            let q_lo = d.k2_cell[i] * p[i];
            let q_hi = d.k2_cell[i + 1] * p[i + 1];
            flux[i + 1] = d.k1_face[i] * 0.5 * (p[i] + p[i + 1]) - 0.5 * (q_hi - q_lo) / dx;
        }
        for i in 0..n {
            p[i] -= h / dx * (flux[i + 1] - flux[i]);
        }
    }
    Ok(Grid1D { values: p, ..grid0.clone() })
}

/// Smallest ensemble [`mc_histogram`] accepts.
pub const MIN_HISTOGRAM_SAMPLES: usize = 1000;

/// Histogram density of `samples`, normalised over the samples inside the grid.
pub fn mc_histogram(samples: &[f64], spec: GridSpec) -> Result<Grid1D> {
    if samples.len() < MIN_HISTOGRAM_SAMPLES {
        return Err(Error::Config(format!(
            "histogram needs at least {MIN_HISTOGRAM_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let mut grid = Grid1D::zeros(spec);
    let mut covered = 0usize;
    for &x in samples {
        if let Some(i) = spec.cell_of(x) {
            grid.values[i] += 1.0;
            covered += 1;
        }
    }
    // covered / total >= 0.999, in integers
    if covered * 1000 < samples.len() * 999 {
        return Err(Error::Coverage { covered, total: samples.len() });
    }
    let scale = 1.0 / (covered as f64 * spec.dx());
    grid.values.iter_mut().for_each(|v| *v *= scale);
    Ok(grid)
}

/// `Σ |a_i - b_i| Δx`
pub fn l1_distance(a: &Grid1D, b: &Grid1D) -> Result<f64> {
    if a.spec() != b.spec() {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", a.spec(), b.spec())));
    }
    Ok(a.values.iter().zip(&b.values).map(|(u, v)| (u - v).abs()).sum::<f64>() * a.dx())
}

/// The confined cubic test system `f = γx³ - x`, `g = x + 2`.
pub fn cubic_test_model(gamma: f64) -> SystemModel {
    SystemModel::new(Polynomial::new(vec![0.0, -1.0, 0.0, gamma]), Polynomial::linear(1.0, 2.0))
}

/// Settings for comparing the coloured system, its equivalent diffusion and
/// the Fokker-Planck solution at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub ou: OuParams,
    /// Initial state distribution; the grid solution starts from the same normal.
    pub x0_mean: f64,
    pub x0_std: f64,
    pub t: f64,
    pub n_paths: usize,
    pub n_cells: usize,
    /// Simulation step; both ensembles use it.
    pub dt: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub coloured: Grid1D,
    pub ito: Grid1D,
    pub fpe: Grid1D,
    pub l1_coloured_ito: f64,
    pub l1_coloured_fpe: f64,
    pub l1_ito_fpe: f64,
}

impl EquivalenceReport {
    pub fn max_l1(&self) -> f64 {
        self.l1_coloured_ito.max(self.l1_coloured_fpe).max(self.l1_ito_fpe)
    }
}

impl EquivalenceCheck {
    /// `10⁵` paths, 400 cells, `t = 1`, `dt = τc/10`, `x0 ~ N(0.2, 0.1²)`.
    pub fn standard(ou: OuParams, seed: u64) -> Self {
        Self {
            ou,
            x0_mean: 0.2,
            x0_std: 0.1,
            t: 1.0,
            n_paths: 100_000,
            n_cells: 400,
            dt: ou.max_stable_dt(),
            seed,
        }
    }

    fn init(&self) -> InitialCondition {
        InitialCondition::Normal { mean: self.x0_mean, std: self.x0_std }
    }

    fn sim(&self) -> Result<SimConfig> {
        SimConfig::new(self.dt, self.t, self.seed, self.n_paths)
    }

    /// Runs both ensembles and the grid solver. The grid is placed around the
    /// coloured ensemble before any comparison.
    pub fn run(&self, model: &SystemModel) -> Result<EquivalenceReport> {
        let stats = ou_stats(&self.ou);
        let sim = self.sim()?;
        let coloured_samples = coloured_ensemble(model, &self.ou, &self.init(), &sim)?;
        let spec = GridSpec::around_samples(&coloured_samples, self.n_cells)?;
        let coloured = mc_histogram(&coloured_samples, spec)?;
        drop(coloured_samples);

        let eq = EquivalentIto::new(model.clone(), stats);
        let ito = mc_histogram(&ito_ensemble(&eq, &self.init(), &sim)?, spec)?;

        let kc = eq.kinetic();
        let p0 = Grid1D::gaussian(spec, self.x0_mean, self.x0_std);
        let fpe_dt = 0.5 * stable_dt(&kc, spec)?;
        let fpe = fpe_evolve(&kc, &p0, fpe_dt, self.t)?;

        Ok(EquivalenceReport {
            l1_coloured_ito: l1_distance(&coloured, &ito)?,
            l1_coloured_fpe: l1_distance(&coloured, &fpe)?,
            l1_ito_fpe: l1_distance(&ito, &fpe)?,
            coloured,
            ito,
            fpe,
        })
    }

    /// L1 distance between the coloured ensemble and the white-noise diffusion
    /// with the same intensity.
    pub fn white_noise_distance(&self, model: &SystemModel) -> Result<f64> {
        let sim = self.sim()?;
        let coloured_samples = coloured_ensemble(model, &self.ou, &self.init(), &sim)?;
        let spec = GridSpec::around_samples(&coloured_samples, self.n_cells)?;
        let coloured = mc_histogram(&coloured_samples, spec)?;
        let white = EquivalentIto::new(model.clone(), ou_stats(&self.ou).white());
        let white = mc_histogram(&ito_ensemble(&white, &self.init(), &sim)?, spec)?;
        l1_distance(&coloured, &white)
    }
}
