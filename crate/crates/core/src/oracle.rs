//! The population-level SBLL fit, available when every response in the
//! population is known. It is the sample pipeline run on all `N` rows with
//! unit weights, and serves as the reference for the sample estimator's
//! asymptotic behaviour.

use crate::design::{SampleData, SamplingDesign};
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;
use crate::sbll::{self, KernelSpec, SbllFit};
use crate::splinebasis::SplineSpec;
use crate::units::Units;

/// Largest population for which the general `O(N^2)` AMSE double sum is
/// evaluated.
pub const AMSE_DOUBLE_SUM_CAP: usize = 20_000;

#[derive(Debug, Clone)]
pub struct OracleFit {
    fit: SbllFit,
    responses: Vec<f64>,
}

impl OracleFit {
    /// Unweighted pilot coefficients over the population.
    pub fn coefficients(&self) -> &[f64] {
        self.fit.pilot().coefficients()
    }

    /// Centered pilot components at every population row, `[alpha][i]`.
    pub fn components(&self) -> &[Vec<f64>] {
        self.fit.pilot().sample_components()
    }

    /// Population-level fitted surface `m~*_i`.
    pub fn fitted(&self) -> &[f64] {
        self.fit.fitted()
    }

    pub fn inner(&self) -> &SbllFit {
        &self.fit
    }

    /// `y_i - m~*_i` over the population.
    pub fn residuals(&self) -> Vec<f64> {
        self.responses.iter().zip(self.fit.fitted()).map(|(y, m)| y - m).collect()
    }
}

pub fn oracle_fit(frame: &PopulationFrame, spec: &SplineSpec, kernel: &KernelSpec) -> Result<OracleFit> {
    if kernel.bandwidths().len() != spec.dim() {
        return Err(SbllError::InvalidInput("spline spec and kernel disagree on the number of covariates".into()));
    }
    fit_with(frame, spec, sbll::KernelSource::Given(kernel))
}

fn fit_with(frame: &PopulationFrame, spec: &SplineSpec, kernel: sbll::KernelSource<'_>) -> Result<OracleFit> {
    let y = frame.responses().ok_or(SbllError::MissingResponse)?;
    if frame.len() < spec.basis_dim() {
        return Err(SbllError::BasisTooLarge { n: frame.len(), basis_dim: spec.basis_dim() });
    }
    let scaled = spec.rescale_frame(frame)?;
    let rows: Vec<usize> = (0..frame.len()).collect();
    let units = Units::census(&rows, y);
    let fit = sbll::fit_units(&units, &scaled, spec, kernel, None);
    Ok(OracleFit { fit, responses: y.to_vec() })
}

/// `sum_U m~*_i + sum_s (y_i - m~*_i) / pi_i`.
pub fn oracle_total(fit: &OracleFit, sample: &SampleData) -> f64 {
    sbll::difference_total(sample, fit.fitted())
}

/// Design variance of `N^-1` times the HT estimator of the residual total,
/// `N^-2 sum_{i,j in U} Delta_ij (e_i/pi_i)(e_j/pi_j)`.
///
/// SRS is evaluated exactly in `O(N)` as
/// `(1 - f) / (n (N - 1)) [sum e^2 - (sum e)^2 / N]`; other designs use the
/// double sum and are limited to [`AMSE_DOUBLE_SUM_CAP`] units.
pub fn amse(fit: &OracleFit, design: &dyn SamplingDesign) -> Result<f64> {
    population_variance(&fit.residuals(), design)
}

pub fn population_variance(e: &[f64], design: &dyn SamplingDesign) -> Result<f64> {
    let big_n = e.len();
    if design.population_size() != big_n {
        return Err(SbllError::InvalidInput(format!(
            "design covers {} units, population has {big_n}",
            design.population_size()
        )));
    }
    let nf = big_n as f64;
    if let Some(f) = design.srs_fraction() {
        if big_n < 2 {
            return Ok(0.0);
        }
        let n = design.sample_size() as f64;
        let sum: f64 = e.iter().sum();
        let ss: f64 = e.iter().map(|v| v * v).sum();
        return Ok((1.0 - f) / (n * (nf - 1.0)) * (ss - sum * sum / nf));
    }
    if big_n > AMSE_DOUBLE_SUM_CAP {
        return Err(SbllError::TooLarge { size: big_n, cap: AMSE_DOUBLE_SUM_CAP });
    }
    let u: Vec<f64> = e.iter().enumerate().map(|(i, v)| v / design.first_order(i)).collect();
    let mut total = 0.0;
    for i in 0..big_n {
        for j in 0..big_n {
            total += design.delta(i, j) * u[i] * u[j];
        }
    }
    Ok(total / (nf * nf))
}

/// The SRS shortcut `(1 - f) / (n (N - 1)) sum_U e_i^2`, which omits the
/// squared residual mean. The two agree when the residuals average to zero.
pub fn amse_srs_simplified(fit: &OracleFit, sample_size: usize) -> Result<f64> {
    let e = fit.residuals();
    let big_n = e.len();
    if sample_size == 0 || sample_size > big_n || big_n < 2 {
        return Err(SbllError::InvalidDesign(format!("sample size {sample_size} for population {big_n}")));
    }
    let (n, nf) = (sample_size as f64, big_n as f64);
    let f = n / nf;
    Ok((1.0 - f) / (n * (nf - 1.0)) * e.iter().map(|v| v * v).sum::<f64>())
}

/// Population fit tuned as the sample pipeline would be for samples of size
/// `sample_size`: knot count from the knot rule, knots at population
/// quantiles, and rule-of-thumb bandwidths at the `sample_size^(-1/5)` rate.
pub fn oracle_for_sample_size(frame: &PopulationFrame, sample_size: usize, config: &sbll::SbllConfig) -> Result<OracleFit> {
    let j = crate::splinebasis::knot_count(sample_size, frame.dim(), config.knot_constant);
    oracle_with_knots(frame, sample_size, j, config)
}

fn oracle_with_knots(frame: &PopulationFrame, sample_size: usize, j: usize, config: &sbll::SbllConfig) -> Result<OracleFit> {
    config.validate()?;
    let big_n = frame.len();
    if sample_size == 0 {
        return Err(SbllError::Config("sample size must be positive".into()));
    }
    let rows: Vec<usize> = (0..big_n).collect();
    let spec = crate::splinebasis::knots_for_rows(frame, &rows, j)?;
    fit_with(frame, &spec, sbll::KernelSource::Rule(config.bandwidth, sample_size))
}

/// Population BIC of a covariate subset: `ln AMSE + J_r ln(n) / n` with the
/// SRS shortcut AMSE, `J_r = 1 + |r| (J + 1)` and `J` the knot count used for
/// the subset fit.
pub fn oracle_bic(frame: &PopulationFrame, subset: &[usize], sample_size: usize, config: &sbll::SbllConfig) -> Result<f64> {
    let big_n = frame.len();
    let y = frame.responses().ok_or(SbllError::MissingResponse)?;
    let n = sample_size as f64;
    if subset.is_empty() {
        let mean = y.iter().sum::<f64>() / big_n as f64;
        let f = n / big_n as f64;
        let ss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let v = (1.0 - f) / (n * (big_n as f64 - 1.0)) * ss;
        return Ok(v.max(1e-300).ln() + n.ln() / n);
    }
    let sub = frame.select(subset)?;
    let j = crate::splinebasis::knot_count(sample_size, subset.len(), config.knot_constant);
    let fit = oracle_with_knots(&sub, sample_size, j, config)?;
    let v = amse_srs_simplified(&fit, sample_size)?;
    let j_r = 1.0 + subset.len() as f64 * (j as f64 + 1.0);
    Ok(v.max(1e-300).ln() + j_r * n.ln() / n)
}
