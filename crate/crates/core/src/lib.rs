//! Spline-backfitted local linear (SBLL) model-assisted estimation of
//! finite population totals.
//!
//! The estimator fits an additive working model in two stages. A
//! design-weighted truncated power spline gives quick pilot estimates of
//! every additive component; each component is then re-smoothed with a
//! design-weighted local linear fit on pseudo-responses from which all the
//! other pilot components have been removed. The fitted surface is plugged
//! into the generalized difference estimator, which can also be written as
//! a calibrated linear weighting of the sample responses (g-weights).
//!
//! Population row indices are 0-based throughout the library.

pub mod baselines;
pub mod design;
mod error;
pub mod frame;
mod linalg;
pub mod montecarlo;
pub mod oracle;
pub mod pilot;
pub mod sbll;
pub mod selection;
pub mod splinebasis;
mod units;

pub use design::{delta, draw_srs, draw_srs_seeded, make_srs, SampleData, SamplingDesign, SimpleRandomSampling};
pub use error::{Result, SbllError};
pub use frame::PopulationFrame;
pub use pilot::{fit_pilot, ht_total, PilotFit};
pub use sbll::{
    estimate_sbll, g_weights, local_linear_at, rot_bandwidth, sbll_fit, sbll_fit_with_rule, sbll_total, variance_g,
    variance_ht, BandwidthRule, EstimateReport, KernelSpec, SbllConfig, SbllFit,
};
pub use splinebasis::{knot_count, knots_for, SplineSpec};
