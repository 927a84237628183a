//! Stage one: the design-weighted spline pilot fit of all additive
//! components, centered components, and the pseudo-responses handed to the
//! local linear stage.

use nalgebra::DMatrix;

use crate::design::SampleData;
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;
use crate::linalg::Projector;
use crate::splinebasis::SplineSpec;
use crate::units::Units;

/// Horvitz-Thompson estimator `sum_s y_i / pi_i`.
pub fn ht_total(sample: &SampleData) -> Result<f64> {
    let mut total = 0.0;
    for (&i, &y) in sample.indices().iter().zip(sample.responses()) {
        let pi = sample.design().first_order(i);
        if !(pi > 0.0) {
            return Err(SbllError::InvalidDesign(format!("inclusion probability of unit {i} is {pi}")));
        }
        total += y / pi;
    }
    Ok(total)
}

/// Result of the weighted spline least squares fit.
#[derive(Debug, Clone)]
pub struct PilotFit {
    coefficients: Vec<f64>,
    centering: Vec<f64>,
    spec: SplineSpec,
    ht_total: f64,
    population_size: usize,
    rows: Vec<usize>,
    rank: usize,
    /// Centered components at the fitting units, `[alpha][k]`.
    sample_components: Vec<Vec<f64>>,
    pub(crate) projector: Projector,
    /// Basis matrix at the fitting units (`n x G`).
    pub(crate) basis: DMatrix<f64>,
}

impl PilotFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Centering constants, one per covariate.
    pub fn centering(&self) -> &[f64] {
        &self.centering
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn ht_total(&self) -> f64 {
        self.ht_total
    }

    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// True when the weighted Gram matrix was singular and a minimum-norm
    /// solution was returned.
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.coefficients.len()
    }

    /// Centered component `alpha` at a rescaled coordinate.
    pub fn component_at(&self, alpha: usize, x: f64) -> f64 {
        self.uncentered(alpha, x) - self.centering[alpha]
    }

    fn uncentered(&self, alpha: usize, x: f64) -> f64 {
        let block = self.spec.block(alpha);
        let coef = &self.coefficients[block];
        let mut value = coef[0] * x;
        for (b, &k) in coef[1..].iter().zip(self.spec.knots(alpha)) {
            value += b * (x - k).max(0.0);
        }
        value
    }

    /// Centered components at the fitting units, indexed `[alpha][k]`.
    pub fn sample_components(&self) -> &[Vec<f64>] {
        &self.sample_components
    }

    /// One-step spline surface `t_hat / N + sum_a m_a(x_a)` at a rescaled point.
    pub fn surface_at(&self, x: &[f64]) -> f64 {
        self.ht_total / self.population_size as f64
            + x.iter().enumerate().map(|(a, &xa)| self.component_at(a, xa)).sum::<f64>()
    }

    pub(crate) fn rows(&self) -> &[usize] {
        &self.rows
    }
}

/// Fits the pilot on a sample. Covariates are rescaled with `spec`.
pub fn fit_pilot(sample: &SampleData, frame: &PopulationFrame, spec: &SplineSpec) -> Result<PilotFit> {
    let scaled = spec.rescale_frame(frame)?;
    Ok(fit_units(&Units::from_sample(sample), &scaled, spec))
}

pub(crate) fn fit_units(units: &Units<'_>, scaled: &[Vec<f64>], spec: &SplineSpec) -> PilotFit {
    let n = units.len();
    let g = spec.basis_dim();
    let d = spec.dim();
    let mut basis = DMatrix::zeros(n, g);
    let mut buf = Vec::new();
    for (k, &row) in units.rows.iter().enumerate() {
        basis[(k, 0)] = 1.0;
        for (a, column) in scaled.iter().enumerate() {
            let block = spec.block(a);
            buf.resize(block.len(), 0.0);
            spec.fill_block(a, column[row], &mut buf);
            for (c, &v) in block.zip(&buf) {
                basis[(k, c)] = v;
            }
        }
    }
    let projector = Projector::new(&basis, &units.inv_pi);
    let coefficients = projector.apply(units.y);
    let big_n = units.population_size as f64;

    let mut sample_components = Vec::with_capacity(d);
    let mut centering = Vec::with_capacity(d);
    for a in 0..d {
        let block = spec.block(a);
        let raw: Vec<f64> = (0..n)
            .map(|k| block.clone().map(|c| basis[(k, c)] * coefficients[c]).sum())
            .collect();
        let c_a = raw.iter().zip(&units.inv_pi).map(|(v, w)| v * w).sum::<f64>() / big_n;
        sample_components.push(raw.iter().map(|v| v - c_a).collect());
        centering.push(c_a);
    }

    PilotFit {
        rank: projector.rank(),
        coefficients,
        centering,
        spec: spec.clone(),
        ht_total: units.ht_total(),
        population_size: units.population_size,
        rows: units.rows.to_vec(),
        sample_components,
        projector,
        basis,
    }
}

/// Pseudo-responses for covariate `alpha`:
/// `y_i - t_hat / N - sum_{b != alpha} m_b(x_ib)` over the sample.
pub fn pseudo_responses(fit: &PilotFit, sample: &SampleData, alpha: usize) -> Result<Vec<f64>> {
    if fit.rows() != sample.indices() {
        return Err(SbllError::InvalidInput("pilot fit was computed on a different sample".into()));
    }
    if alpha >= fit.spec.dim() {
        return Err(SbllError::InvalidInput(format!("covariate {alpha} out of range")));
    }
    Ok(pseudo_from_parts(fit, sample.responses(), alpha))
}

pub(crate) fn pseudo_from_parts(fit: &PilotFit, y: &[f64], alpha: usize) -> Vec<f64> {
    let mean = fit.ht_total / fit.population_size as f64;
    (0..y.len())
        .map(|k| {
            let others: f64 = fit
                .sample_components
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != alpha)
                .map(|(_, comp)| comp[k])
                .sum();
            y[k] - mean - others
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::design::{make_srs, SamplingDesign, SimpleRandomSampling};
    use crate::splinebasis::knots_for;

    /// Plain Gaussian elimination with partial pivoting, used as an
    /// independent oracle for small normal equations.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn toy() -> (PopulationFrame, SampleData, SplineSpec) {
        let x = vec![0.0, 0.15, 0.3, 0.55, 0.7, 0.85, 1.0, 0.4];
        let y = vec![1.0, 0.3, 0.9, 2.0, 1.1, 0.2, 1.7, 0.5];
        let frame = PopulationFrame::new(vec![x], Some(y.clone()), vec!["x1".into()]).unwrap();
        // Five sampled units with unequal (synthetic) weights via a custom design.
        let design = Arc::new(Unequal { pi: vec![0.5, 0.25, 0.8, 0.4, 0.6, 0.3, 0.9, 0.5] });
        let rows = vec![0, 2, 3, 5, 6];
        let sample = SampleData::new(rows.clone(), rows.iter().map(|&i| y[i]).collect(), design).unwrap();
        let spec = SplineSpec::new(vec![vec![0.5]], vec![(0.0, 1.0)], 1).unwrap();
        (frame, sample, spec)
    }

    #[derive(Debug)]
    struct Unequal {
        pi: Vec<f64>,
    }

    impl SamplingDesign for Unequal {
        fn population_size(&self) -> usize {
            self.pi.len()
        }
        fn sample_size(&self) -> usize {
            5
        }
        fn first_order(&self, i: usize) -> f64 {
            self.pi[i]
        }
        fn second_order(&self, i: usize, j: usize) -> f64 {
            if i == j {
                self.pi[i]
            } else {
                self.pi[i] * self.pi[j] * 0.9
            }
        }
    }

    #[test]
    fn ht_total_values() {
        let d: Arc<dyn SamplingDesign> = Arc::new(make_srs(4, 2).unwrap());
        let s = SampleData::new(vec![0, 1], vec![2.0, 3.0], d).unwrap();
        assert_eq!(ht_total(&s).unwrap(), 10.0);

        let census: Arc<dyn SamplingDesign> = Arc::new(SimpleRandomSampling::census(3).unwrap());
        let s = SampleData::new(vec![0, 1, 2], vec![1.5, 2.5, -1.0], census).unwrap();
        assert_eq!(ht_total(&s).unwrap(), 3.0);
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let (frame, sample, spec) = toy();
        let fit = fit_pilot(&sample, &frame, &spec).unwrap();
        let mut gram = vec![vec![0.0; 3]; 3];
        let mut rhs = vec![0.0; 3];
        for (&i, &y) in sample.indices().iter().zip(sample.responses()) {
            let row = spec.basis_row(&[frame.column(0)[i]]);
            let w = 1.0 / sample.design().first_order(i);
            for r in 0..3 {
                rhs[r] += w * row[r] * y;
                for c in 0..3 {
                    gram[r][c] += w * row[r] * row[c];
                }
            }
        }
        let oracle = dense_solve(gram, rhs);
        for (got, want) in fit.coefficients().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-10 * (1.0 + want.abs()), "{got} vs {want}");
        }
        // Components agree with the oracle coefficients too.
        let n = frame.len() as f64;
        let raw = |x: f64| oracle[1] * x + oracle[2] * (x - 0.5f64).max(0.0);
        let c: f64 = sample
            .indices()
            .iter()
            .map(|&i| raw(frame.column(0)[i]) / sample.design().first_order(i))
            .sum::<f64>()
            / n;
        for x in [0.1, 0.5, 0.77] {
            assert!((fit.component_at(0, x) - (raw(x) - c)).abs() < 1e-10);
        }
    }

    #[test]
    fn reproduces_linear_response() {
        let x1: Vec<f64> = (0..40).map(|i| ((i * 7) % 40) as f64 / 39.0).collect();
        let x2: Vec<f64> = (0..40).map(|i| ((i * 11) % 40) as f64 / 39.0).collect();
        let y: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| -1.0 + 2.0 * a + 0.5 * b).collect();
        let frame = PopulationFrame::new(vec![x1, x2], Some(y.clone()), vec!["a".into(), "b".into()]).unwrap();
        let design = make_srs(40, 20).unwrap();
        let sample = crate::design::draw_srs_seeded(&design, &frame, 5).unwrap();
        let spec = knots_for(&frame, &sample, 3).unwrap();
        let fit = fit_pilot(&sample, &frame, &spec).unwrap();
        for (&i, &yi) in sample.indices().iter().zip(sample.responses()) {
            let p = [spec.rescale(0, frame.column(0)[i]), spec.rescale(1, frame.column(1)[i])];
            let fitted = fit.coefficients()[0]
                + (0..2).map(|a| fit.component_at(a, p[a]) + fit.centering()[a]).sum::<f64>();
            assert!((fitted - yi).abs() < 1e-10);
        }
    }

    #[test]
    fn census_equals_unweighted_least_squares() {
        let (frame, _, spec) = toy();
        let y = frame.responses().unwrap().to_vec();
        let census: Arc<dyn SamplingDesign> = Arc::new(SimpleRandomSampling::census(8).unwrap());
        let s = SampleData::new((0..8).collect(), y.clone(), census).unwrap();
        let fit = fit_pilot(&s, &frame, &spec).unwrap();
        let mut gram = vec![vec![0.0; 3]; 3];
        let mut rhs = vec![0.0; 3];
        for i in 0..8 {
            let row = spec.basis_row(&[frame.column(0)[i]]);
            for r in 0..3 {
                rhs[r] += row[r] * y[i];
                for c in 0..3 {
                    gram[r][c] += row[r] * row[c];
                }
            }
        }
        let oracle = dense_solve(gram, rhs);
        for (got, want) in fit.coefficients().iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn components_are_centered() {
        // Centering divides by N, so the weighted mean vanishes when the
        // design weights sum to N, as they do under SRS.
        let (frame, _, spec) = toy();
        let design: Arc<dyn SamplingDesign> = Arc::new(make_srs(8, 5).unwrap());
        let rows = vec![0, 2, 3, 5, 6];
        let sample = SampleData::new(rows.clone(), rows.iter().map(|&i| frame.responses().unwrap()[i]).collect(), design).unwrap();
        let fit = fit_pilot(&sample, &frame, &spec).unwrap();
        let mean: f64 = sample
            .indices()
            .iter()
            .map(|&i| fit.component_at(0, spec.rescale(0, frame.column(0)[i])) / sample.design().first_order(i))
            .sum::<f64>()
            / frame.len() as f64;
        assert!(mean.abs() < 1e-8);
        // Piecewise linear: two points on the same side of every knot differ linearly.
        let (a, b, c) = (fit.component_at(0, 0.1), fit.component_at(0, 0.2), fit.component_at(0, 0.3));
        assert!(((b - a) - (c - b)).abs() < 1e-12);
    }

    #[test]
    fn pseudo_responses_single_covariate() {
        let (frame, sample, spec) = toy();
        let fit = fit_pilot(&sample, &frame, &spec).unwrap();
        let p = pseudo_responses(&fit, &sample, 0).unwrap();
        let mean = fit.ht_total() / frame.len() as f64;
        for (pv, y) in p.iter().zip(sample.responses()) {
            assert_eq!(*pv, y - mean);
        }
    }

    #[test]
    fn pseudo_response_shift() {
        let (frame, sample, spec) = toy();
        let shift = 3.5;
        let fit = fit_pilot(&sample, &frame, &spec).unwrap();
        let shifted = sample.with_responses(sample.responses().iter().map(|y| y + shift).collect()).unwrap();
        let fit2 = fit_pilot(&shifted, &frame, &spec).unwrap();
        let weight_sum: f64 = sample.design_weights().iter().sum();
        let expected = shift * (1.0 - weight_sum / frame.len() as f64);
        let p1 = pseudo_responses(&fit, &sample, 0).unwrap();
        let p2 = pseudo_responses(&fit2, &shifted, 0).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            assert!((b - a - expected).abs() < 1e-10);
        }
    }
}
