//! Sampling designs and sample draws.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;

/// First- and second-order inclusion probabilities of a fixed design.
///
/// Unit indices are 0-based population rows. Implementations must satisfy
/// `second_order(i, i) == first_order(i)` and symmetry in `(i, j)`.
pub trait SamplingDesign: Send + Sync + fmt::Debug {
    fn population_size(&self) -> usize;

    /// Expected (for fixed-size designs, exact) sample size.
    fn sample_size(&self) -> usize;

    fn first_order(&self, i: usize) -> f64;

    fn second_order(&self, i: usize, j: usize) -> f64;

    /// `pi_ij - pi_i * pi_j`.
    fn delta(&self, i: usize, j: usize) -> f64 {
        self.second_order(i, j) - self.first_order(i) * self.first_order(j)
    }

    /// Sampling fraction when the design is simple random sampling without
    /// replacement; enables the closed-form variance shortcuts.
    fn srs_fraction(&self) -> Option<f64> {
        None
    }
}

/// Simple random sampling without replacement of `n` units out of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimpleRandomSampling {
    population_size: usize,
    sample_size: usize,
}

impl SimpleRandomSampling {
    /// A census (`n == N`): every unit is taken with probability one.
    pub fn census(population_size: usize) -> Result<Self> {
        if population_size == 0 {
            return Err(SbllError::InvalidDesign("population size must be positive".into()));
        }
        Ok(Self { population_size, sample_size: population_size })
    }

    pub fn fraction(&self) -> f64 {
        self.sample_size as f64 / self.population_size as f64
    }

    pub fn is_census(&self) -> bool {
        self.sample_size == self.population_size
    }
}

impl SamplingDesign for SimpleRandomSampling {
    fn population_size(&self) -> usize {
        self.population_size
    }

    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn first_order(&self, _i: usize) -> f64 {
        self.fraction()
    }

    fn second_order(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.fraction();
        }
        let n = self.sample_size as f64;
        let big_n = self.population_size as f64;
        n * (n - 1.0) / (big_n * (big_n - 1.0))
    }

    fn srs_fraction(&self) -> Option<f64> {
        Some(self.fraction())
    }
}

/// SRS design with `0 < n < N`.
pub fn make_srs(population_size: usize, sample_size: usize) -> Result<SimpleRandomSampling> {
    if sample_size == 0 || sample_size >= population_size {
        return Err(SbllError::InvalidDesign(format!(
            "SRS requires 0 < n < N, got n = {sample_size}, N = {population_size}"
        )));
    }
    Ok(SimpleRandomSampling { population_size, sample_size })
}

/// `pi_ij - pi_i pi_j` for any design.
pub fn delta(design: &dyn SamplingDesign, i: usize, j: usize) -> f64 {
    design.delta(i, j)
}

/// A drawn sample: population rows, their responses and the design that
/// produced them.
#[derive(Debug, Clone)]
pub struct SampleData {
    indices: Vec<usize>,
    responses: Vec<f64>,
    design: Arc<dyn SamplingDesign>,
}

impl SampleData {
    pub fn new(indices: Vec<usize>, responses: Vec<f64>, design: Arc<dyn SamplingDesign>) -> Result<Self> {
        if indices.len() != responses.len() {
            return Err(SbllError::InvalidInput(format!(
                "{} indices but {} responses",
                indices.len(),
                responses.len()
            )));
        }
        if indices.is_empty() {
            return Err(SbllError::InvalidInput("sample is empty".into()));
        }
        let big_n = design.population_size();
        let mut seen = vec![false; big_n];
        for &i in &indices {
            if i >= big_n {
                return Err(SbllError::InvalidInput(format!("index {i} outside population of size {big_n}")));
            }
            if seen[i] {
                return Err(SbllError::InvalidInput(format!("duplicate sampled index {i}")));
            }
            seen[i] = true;
        }
        for &i in &indices {
            let pi = design.first_order(i);
            if !(pi > 0.0 && pi <= 1.0) {
                return Err(SbllError::InvalidDesign(format!("inclusion probability {pi} of unit {i} not in (0, 1]")));
            }
        }
        Ok(Self { indices, responses, design })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn design(&self) -> &dyn SamplingDesign {
        self.design.as_ref()
    }

    pub fn design_arc(&self) -> Arc<dyn SamplingDesign> {
        Arc::clone(&self.design)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn population_size(&self) -> usize {
        self.design.population_size()
    }

    /// `pi_i` aligned with `indices()`.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| self.design.first_order(i)).collect()
    }

    /// Design weights `1 / pi_i` aligned with `indices()`.
    pub fn design_weights(&self) -> Vec<f64> {
        self.indices.iter().map(|&i| 1.0 / self.design.first_order(i)).collect()
    }

    /// Same units and design, different responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        Self::new(self.indices.clone(), responses, Arc::clone(&self.design))
    }

    /// Membership indicator over the population.
    pub fn membership(&self) -> Vec<bool> {
        let mut m = vec![false; self.population_size()];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

/// Draws an SRS sample with a partial Fisher-Yates shuffle. Returned
/// indices are sorted ascending.
pub fn draw_srs<R: Rng + ?Sized>(design: &SimpleRandomSampling, frame: &PopulationFrame, rng: &mut R) -> Result<SampleData> {
    let y = frame.responses().ok_or(SbllError::MissingResponse)?;
    if frame.len() != design.population_size {
        return Err(SbllError::InvalidInput(format!(
            "frame has {} rows but the design covers {}",
            frame.len(),
            design.population_size
        )));
    }
    let big_n = design.population_size;
    let n = design.sample_size;
    let mut perm: Vec<usize> = (0..big_n).collect();
    for k in 0..n {
        let j = rng.random_range(k..big_n);
        perm.swap(k, j);
    }
    let mut indices = perm[..n].to_vec();
    indices.sort_unstable();
    let responses = indices.iter().map(|&i| y[i]).collect();
    SampleData::new(indices, responses, Arc::new(*design))
}

/// [`draw_srs`] with a fresh ChaCha8 stream seeded from `seed`.
pub fn draw_srs_seeded(design: &SimpleRandomSampling, frame: &PopulationFrame, seed: u64) -> Result<SampleData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_srs(design, frame, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(n: usize) -> PopulationFrame {
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        PopulationFrame::new(vec![x.clone()], Some(x), vec!["x1".into()]).unwrap()
    }

    #[test]
    fn srs_probabilities() {
        let d = make_srs(1000, 100).unwrap();
        assert_eq!(d.first_order(3), 0.1);
        assert!((d.second_order(1, 2) - 9900.0 / 999000.0).abs() < 1e-15);
        assert_eq!(d.second_order(4, 4), 0.1);
        assert!((d.delta(0, 0) - 0.09).abs() < 1e-15);
        assert!((d.delta(0, 1) - (9900.0 / 999000.0 - 0.01)).abs() < 1e-15);
        assert!((d.delta(0, 1) + 9.009009009e-5).abs() < 1e-12);
        assert_eq!(d.delta(2, 7), d.delta(7, 2));
        let total: f64 = (0..1000).map(|i| d.first_order(i)).sum();
        assert!((total - 100.0).abs() < 1e-9);
    }

    #[test]
    fn srs_two_units() {
        let d = make_srs(2, 1).unwrap();
        assert_eq!(d.second_order(0, 1), 0.0);
        assert!((d.delta(0, 1) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn invalid_srs() {
        assert!(matches!(make_srs(10, 0), Err(SbllError::InvalidDesign(_))));
        assert!(matches!(make_srs(10, 10), Err(SbllError::InvalidDesign(_))));
        assert!(matches!(make_srs(10, 11), Err(SbllError::InvalidDesign(_))));
    }

    #[test]
    fn pairwise_dependence_negative() {
        let d = make_srs(50, 7).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!(d.delta(i, j) < 0.0);
                }
            }
        }
    }

    #[test]
    fn draws_are_deterministic() {
        let f = frame(100);
        let d = make_srs(100, 10).unwrap();
        let a = draw_srs_seeded(&d, &f, 42).unwrap();
        let b = draw_srs_seeded(&d, &f, 42).unwrap();
        assert_eq!(a.indices(), b.indices());
        let c = draw_srs_seeded(&d, &f, 43).unwrap();
        assert_ne!(a.indices(), c.indices());
        assert_eq!(a.responses(), &a.indices().iter().map(|&i| i as f64).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn census_draw_takes_everything() {
        let f = frame(1000);
        let d = SimpleRandomSampling::census(1000).unwrap();
        let s = draw_srs_seeded(&d, &f, 1).unwrap();
        assert_eq!(s.indices(), &(0..1000).collect::<Vec<_>>()[..]);
        assert_eq!(d.second_order(3, 9), 1.0);
    }

    #[test]
    fn draw_is_uniform() {
        let f = frame(10);
        let d = make_srs(10, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 10];
        let reps = 10_000;
        for _ in 0..reps {
            let s = draw_srs(&d, &f, &mut rng).unwrap();
            assert_eq!(s.len(), 3);
            for &i in s.indices() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / reps as f64;
            assert!((freq - 0.3).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn missing_response_is_an_error() {
        let f = PopulationFrame::new(vec![vec![0.0, 1.0, 2.0]], None, vec!["x1".into()]).unwrap();
        let d = make_srs(3, 1).unwrap();
        assert!(matches!(draw_srs_seeded(&d, &f, 0), Err(SbllError::MissingResponse)));
    }

    #[test]
    fn sample_rejects_duplicates() {
        let d: Arc<dyn SamplingDesign> = Arc::new(make_srs(10, 2).unwrap());
        assert!(SampleData::new(vec![1, 1], vec![0.0, 0.0], d.clone()).is_err());
        assert!(SampleData::new(vec![1, 11], vec![0.0, 0.0], d).is_err());
    }
}
