//! Nonlinear filtering and simulation for scalar systems driven by weakly
//! coloured noise.
//!
//! A system `ẋ = f(x) + g(x) ξ` with a short-memory input `ξ` is replaced by a
//! white-noise diffusion with the same Fokker-Planck equation. The filter then
//! propagates a conditional mean and variance with second-order corrections.
//!
//! ```
//! use weakcolour::{ou_stats, EquivalentIto, OuParams, Polynomial, SystemModel};
//!
//! let stats = ou_stats(&OuParams::new(5.0, 0.005)?);
//! assert_eq!((stats.mu1, stats.mu2), (10.0, 0.025));
//!
//! let model = SystemModel::new(Polynomial::new(vec![0.0, -1.0]), Polynomial::constant(1.0));
//! let eq = EquivalentIto::new(model, stats);
//! // b² = mu1 (1 + 2 (mu2/mu1) g r') with g = 1 and r' = -1
//! assert!((eq.b(0.3)? - 9.95f64.sqrt()).abs() < 1e-12);
//! # Ok::<(), weakcolour::Error>(())
//! ```

pub mod equivalence;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod fpe;
pub mod io;
pub mod jets;
pub mod noise;
pub mod rng;
pub mod sde;

pub use equivalence::{EquivalentIto, KineticCoefficients, LocalCoefficients, SystemModel};
pub use error::{Error, Result};
pub use experiment::{preset, run_experiment, ExperimentConfig, MetricsReport};
pub use filter::{
    duffing_step, filter_step, mean_drift, run_filter, variance_drift, variance_guard, DuffingParams,
    FilterMode, FilterOptions, FilterState, ObservationModel,
};
pub use fpe::{fpe_evolve, l1_distance, mc_histogram, Grid1D, GridSpec};
pub use io::{export_csv, read_csv, CsvSeries};
pub use jets::{ratio_jet, validate_jet, Jet4, JetFn, Polynomial, SmoothFn};
pub use noise::{ou_stats, stats_from_autocorrelation, ColouredStats, OuParams};
pub use sde::{simulate_coloured, simulate_ito, simulate_observations, ObservationSeries, Path, SimConfig};

/// The guide's code samples, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $file:literal) => {
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        };
    }
    chapter!(introduction, "introduction.md");
    chapter!(correlation_moments, "correlation-moments.md");
    chapter!(jets, "jets.md");
    chapter!(equivalence, "equivalence.md");
    chapter!(simulation, "simulation.md");
    chapter!(filter, "filter.md");
    chapter!(fokker_planck, "fokker-planck.md");
    chapter!(experiments, "experiments.md");
}
