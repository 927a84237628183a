//! The weighted fitting units shared by the sample-based and the
//! population-based (oracle) pipelines. The oracle is the special case of
//! every population row with unit weight.

use crate::design::SampleData;

#[derive(Debug, Clone)]
pub(crate) struct Units<'a> {
    pub rows: &'a [usize],
    pub y: &'a [f64],
    /// Design weights `1 / pi_i`.
    pub inv_pi: Vec<f64>,
    pub population_size: usize,
}

impl<'a> Units<'a> {
    pub fn from_sample(sample: &'a SampleData) -> Self {
        Self {
            rows: sample.indices(),
            y: sample.responses(),
            inv_pi: sample.design_weights(),
            population_size: sample.population_size(),
        }
    }

    pub fn census(rows: &'a [usize], y: &'a [f64]) -> Self {
        Self { rows, y, inv_pi: vec![1.0; rows.len()], population_size: rows.len() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Horvitz-Thompson total of the fitting responses.
    pub fn ht_total(&self) -> f64 {
        self.y.iter().zip(&self.inv_pi).map(|(y, w)| y * w).sum()
    }
}
