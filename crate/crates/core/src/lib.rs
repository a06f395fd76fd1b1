//! Learning mixtures of identity-covariance Gaussians with a score-based
//! diffusion model.
//!
//! The library implements both phases of the algorithm and the machinery to
//! verify them at desk scale:
//!
//! - [`mixture`]: the data distribution `P_0 = Q_0 * N(0, sigma0^2 I_n)` for
//!   discrete mixing measures, with exact density / score / posterior-mean
//!   oracles.
//! - [`hermite`] and [`quadrature`]: scaled Hermite polynomial features and
//!   Gauss-Hermite quadrature.
//! - [`schedule`]: the variance-exploding time grid and reverse-step
//!   coefficient.
//! - [`warm_starts`]: Voronoi assignment, Tweedie denoising, and greedy ball
//!   cover for maintaining approximate component centers.
//! - [`regression`]: denoising datasets and per-cell norm-constrained
//!   Hermite regression.
//! - [`pipeline`]: the level loop fitting scores from the largest noise time
//!   down, refreshing warm starts as the time halves.
//! - [`sampler`]: the discretized reverse SDE.
//! - [`diagnostics`]: score-error estimates, coefficient spectra, TV and
//!   change-of-measure bounds, and sample-quality metrics.

pub mod diagnostics;
pub mod hermite;
pub mod mixture;
pub mod pipeline;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod warm_starts;

pub use hermite::{enumerate_multi_indices, hermite_1d, FeatureBasis, MultiIndex};
pub use mixture::{KLocalityParams, MixtureComponent, MixtureSpec};
pub use pipeline::{train, SampleSource, TrainConfig, TrainedStack};
pub use regression::{
    build_denoising_dataset, fit_cell, fit_piecewise, regression_targets, DenoisingDataset,
    PiecewiseScoreModel,
};
pub use sampler::{
    generate, init_sample, reverse_step, OracleScore, ReverseTrajectory, ScoreSource,
};
pub use schedule::{build_schedule, reverse_step_coefficient, NoiseSchedule};
pub use warm_starts::{
    assign_voronoi, denoise_points, greedy_cover, refresh_warm_starts, WarmStartConstants,
    WarmStartSet,
};
