//! Comparator estimators: Horvitz-Thompson, the linear regression (GREG)
//! difference estimator and the one-step linear spline.

use nalgebra::DMatrix;

use crate::design::SampleData;
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;
use crate::linalg::Projector;
use crate::pilot;
use crate::sbll::{report, EstimateReport, Method};
use crate::splinebasis::SplineSpec;
use crate::units::Units;

/// A working-model fit that is linear in the responses: the fitted surface
/// over the population and the matching g-weights.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    pub method: Method,
    pub fitted: Vec<f64>,
    pub g_weights: Vec<f64>,
    pub rank_deficient: bool,
}

impl BaselineFit {
    pub fn report(&self, sample: &SampleData) -> Result<EstimateReport> {
        report(self.method, sample, &self.fitted, &self.g_weights)
    }
}

/// `c_j = 1 - I_j / pi_j` over the population.
fn difference_coefficients(sample: &SampleData) -> Vec<f64> {
    let mut coef = vec![1.0; sample.population_size()];
    for &i in sample.indices() {
        coef[i] = 1.0 - 1.0 / sample.design().first_order(i);
    }
    coef
}

fn check_frame(sample: &SampleData, frame: &PopulationFrame) -> Result<()> {
    if frame.len() != sample.population_size() {
        return Err(SbllError::InvalidInput(format!(
            "frame has {} rows but the design covers {}",
            frame.len(),
            sample.population_size()
        )));
    }
    Ok(())
}

/// Horvitz-Thompson as a degenerate difference estimator (`m = 0`, `g = 1`).
pub fn ht_fit(sample: &SampleData) -> BaselineFit {
    BaselineFit {
        method: Method::Ht,
        fitted: vec![0.0; sample.population_size()],
        g_weights: vec![1.0; sample.len()],
        rank_deficient: false,
    }
}

pub fn ht_report(sample: &SampleData) -> Result<EstimateReport> {
    ht_fit(sample).report(sample)
}

/// Design-weighted least squares of `y` on `[1, x_1, ..., x_d]` (raw
/// covariates), plugged into the difference estimator.
pub fn lreg_fit(sample: &SampleData, frame: &PopulationFrame) -> Result<BaselineFit> {
    check_frame(sample, frame)?;
    let d = frame.dim();
    if sample.len() < d + 1 {
        return Err(SbllError::BasisTooLarge { n: sample.len(), basis_dim: d + 1 });
    }
    let row = |i: usize, out: &mut [f64]| {
        out[0] = 1.0;
        for a in 0..d {
            out[a + 1] = frame.column(a)[i];
        }
    };
    let mut x = DMatrix::zeros(sample.len(), d + 1);
    let mut buf = vec![0.0; d + 1];
    for (k, &i) in sample.indices().iter().enumerate() {
        row(i, &mut buf);
        for (c, &v) in buf.iter().enumerate() {
            x[(k, c)] = v;
        }
    }
    let inv_pi = sample.design_weights();
    let projector = Projector::new(&x, &inv_pi);
    let beta = projector.apply(sample.responses());
    let coef = difference_coefficients(sample);
    let mut fitted = Vec::with_capacity(frame.len());
    let mut summed = vec![0.0; d + 1];
    for (j, &cj) in coef.iter().enumerate() {
        row(j, &mut buf);
        fitted.push(buf.iter().zip(&beta).map(|(a, b)| a * b).sum());
        for (s, v) in summed.iter_mut().zip(&buf) {
            *s += cj * v;
        }
    }
    let w = projector.apply_transpose(&summed);
    let g_weights = w.iter().zip(&inv_pi).map(|(wi, v)| 1.0 + wi / v).collect();
    Ok(BaselineFit { method: Method::Lreg, fitted, g_weights, rank_deficient: projector.is_rank_deficient() })
}

pub fn lreg_total(sample: &SampleData, frame: &PopulationFrame) -> Result<EstimateReport> {
    lreg_fit(sample, frame)?.report(sample)
}

/// Stage-one spline pilot only: `m_i = t_hat / N + sum_a m_a(x_ia)`.
pub fn ls_fit(sample: &SampleData, frame: &PopulationFrame, spec: &SplineSpec) -> Result<BaselineFit> {
    check_frame(sample, frame)?;
    if sample.len() < spec.basis_dim() {
        return Err(SbllError::BasisTooLarge { n: sample.len(), basis_dim: spec.basis_dim() });
    }
    let scaled = spec.rescale_frame(frame)?;
    let units = Units::from_sample(sample);
    let fit = pilot::fit_units(&units, &scaled, spec);
    let big_n = frame.len() as f64;
    let g_dim = spec.basis_dim();
    let coef = difference_coefficients(sample);

    let mut fitted = Vec::with_capacity(frame.len());
    let mut point = vec![0.0; spec.dim()];
    let mut row_sum = vec![0.0; g_dim];
    for (j, &cj) in coef.iter().enumerate() {
        for (a, p) in point.iter_mut().enumerate() {
            *p = scaled[a][j];
        }
        fitted.push(fit.surface_at(&point));
        if cj != 0.0 {
            let row = spec.basis_row(&point);
            for (s, v) in row_sum.iter_mut().zip(&row) {
                *s += cj * v;
            }
        }
    }

    // m_j = v'y / N + (Gamma_j - v' Gamma_s / N) D P y with D dropping the intercept.
    let c_sum: f64 = coef.iter().sum();
    let mut weighted_basis = vec![0.0; g_dim];
    for (k, v) in units.inv_pi.iter().enumerate() {
        for (c, wb) in weighted_basis.iter_mut().enumerate() {
            *wb += v * fit.basis[(k, c)];
        }
    }
    let mut q: Vec<f64> = row_sum.iter().zip(&weighted_basis).map(|(r, wb)| r - c_sum * wb / big_n).collect();
    q[0] = 0.0;
    let back = fit.projector.apply_transpose(&q);
    let g_weights = units
        .inv_pi
        .iter()
        .zip(&back)
        .map(|(v, b)| 1.0 + (c_sum * v / big_n + b) / v)
        .collect();
    Ok(BaselineFit { method: Method::Ls, fitted, g_weights, rank_deficient: fit.rank_deficient() })
}

pub fn ls_total(sample: &SampleData, frame: &PopulationFrame, spec: &SplineSpec) -> Result<EstimateReport> {
    ls_fit(sample, frame, spec)?.report(sample)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::design::{draw_srs_seeded, make_srs, SamplingDesign, SimpleRandomSampling};
    use crate::sbll::{estimate_sbll, SbllConfig};

    fn population(n: usize, linear: bool) -> PopulationFrame {
        let x1: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64 / n as f64 * 4.0).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 53 + 11) % n) as f64 / n as f64).collect();
        let y = x1
            .iter()
            .zip(&x2)
            .map(|(a, b)| if linear { 3.0 + 0.5 * a - 2.0 * b } else { (3.0 * b).sin() * a + a * a })
            .collect();
        PopulationFrame::new(vec![x1, x2], Some(y), vec!["x1".into(), "x2".into()]).unwrap()
    }

    fn weighted_total(fit: &BaselineFit, sample: &SampleData, values: &[f64]) -> f64 {
        let pi = sample.inclusion_probabilities();
        fit.g_weights.iter().zip(values).zip(&pi).map(|((g, v), p)| g * v / p).sum()
    }

    #[test]
    fn linear_population_has_zero_error() {
        let frame = population(300, true);
        let t = frame.response_total().unwrap();
        let design = make_srs(300, 40).unwrap();
        for seed in 0..5 {
            let sample = draw_srs_seeded(&design, &frame, seed).unwrap();
            let lreg = lreg_total(&sample, &frame).unwrap();
            assert!(((lreg.total - t) / t).abs() < 1e-10);
            let spec = SbllConfig::default().spline_spec(&sample, &frame).unwrap();
            let ls = ls_total(&sample, &frame, &spec).unwrap();
            assert!(((ls.total - t) / t).abs() < 1e-10);
        }
    }

    #[test]
    fn census_reproduces_total() {
        let frame = population(60, false);
        let census: Arc<dyn SamplingDesign> = Arc::new(SimpleRandomSampling::census(60).unwrap());
        let sample = SampleData::new((0..60).collect(), frame.responses().unwrap().to_vec(), census).unwrap();
        let t = frame.response_total().unwrap();
        assert!((lreg_total(&sample, &frame).unwrap().total - t).abs() < 1e-9);
        assert!((ht_report(&sample).unwrap().total - t).abs() < 1e-9);
    }

    #[test]
    fn g_weights_are_calibrated_and_reproduce_totals() {
        let frame = population(400, false);
        let design = make_srs(400, 60).unwrap();
        let sample = draw_srs_seeded(&design, &frame, 21).unwrap();
        let spec = SbllConfig::default().spline_spec(&sample, &frame).unwrap();
        for fit in [lreg_fit(&sample, &frame).unwrap(), ls_fit(&sample, &frame, &spec).unwrap()] {
            let report = fit.report(&sample).unwrap();
            let via_g = weighted_total(&fit, &sample, sample.responses());
            assert!(((via_g - report.total) / report.total).abs() < 1e-10, "{}", fit.method);
            let ones = vec![1.0; sample.len()];
            assert!((weighted_total(&fit, &sample, &ones) - 400.0).abs() < 1e-8);
            for a in 0..2 {
                let xs: Vec<f64> = sample.indices().iter().map(|&i| frame.column(a)[i]).collect();
                let est = weighted_total(&fit, &sample, &xs);
                assert!(((est - frame.column_total(a)) / frame.column_total(a)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ls_shares_the_sbll_pilot() {
        let frame = population(300, false);
        let design = make_srs(300, 50).unwrap();
        let sample = draw_srs_seeded(&design, &frame, 4).unwrap();
        let (fit, _) = estimate_sbll(&sample, &frame, &SbllConfig::default()).unwrap();
        let direct = pilot::fit_pilot(&sample, &frame, fit.pilot().spec()).unwrap();
        assert_eq!(direct.coefficients(), fit.pilot().coefficients());
    }

    #[test]
    fn ht_ignores_covariates() {
        let frame = population(100, false);
        let design = make_srs(100, 10).unwrap();
        let sample = draw_srs_seeded(&design, &frame, 2).unwrap();
        let r = ht_report(&sample).unwrap();
        assert!((r.total - pilot::ht_total(&sample).unwrap()).abs() < 1e-12);
    }
}
