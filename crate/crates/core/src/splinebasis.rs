//! Knot selection and the piecewise-linear truncated power basis.
//!
//! The basis for a point `x` in `[0, 1]^d` is laid out as
//!
//! ```text
//! [1; x_1, (x_1 - k_11)+, ..., (x_1 - k_J1)+; ...; x_d, (x_d - k_1d)+, ..., (x_d - k_Jd)+]
//! ```
//!
//! so covariate `a` (0-based) owns one contiguous block of columns after the
//! intercept. Covariates are rescaled to `[0, 1]` with the population range
//! before any basis or kernel evaluation.

use std::ops::Range;

use crate::design::SampleData;
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;

/// Number of interior knots per covariate:
/// `min(floor(c n^(1/4) ln n) + 1, floor((n/2 - 1)/d - 1))`, clamped at 0.
pub fn knot_count(n: usize, d: usize, c: f64) -> usize {
    let nf = n as f64;
    let growth = (c * nf.powf(0.25) * nf.ln()).floor() + 1.0;
    let capacity = ((nf / 2.0 - 1.0) / d.max(1) as f64 - 1.0).floor();
    let j = growth.min(capacity);
    if j.is_finite() && j > 0.0 {
        j as usize
    } else {
        0
    }
}

/// Knots, covariate ranges and the nominal interior knot count `J`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpec {
    knots: Vec<Vec<f64>>,
    ranges: Vec<(f64, f64)>,
    interior_knot_count: usize,
}

impl SplineSpec {
    /// Knots must be strictly increasing and strictly inside `(0, 1)`.
    pub fn new(knots: Vec<Vec<f64>>, ranges: Vec<(f64, f64)>, interior_knot_count: usize) -> Result<Self> {
        if knots.len() != ranges.len() {
            return Err(SbllError::InvalidInput("one knot sequence per covariate required".into()));
        }
        for (a, ks) in knots.iter().enumerate() {
            if ks.iter().any(|&k| !(k > 0.0 && k < 1.0)) {
                return Err(SbllError::InvalidInput(format!("knots of covariate {a} must lie in (0, 1)")));
            }
            if ks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SbllError::InvalidInput(format!("knots of covariate {a} must be strictly increasing")));
            }
        }
        Ok(Self { knots, ranges, interior_knot_count })
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    /// Nominal `J` from the knot rule (actual per-covariate counts may be
    /// smaller after duplicate collapsing).
    pub fn interior_knot_count(&self) -> usize {
        self.interior_knot_count
    }

    pub fn knots(&self, alpha: usize) -> &[f64] {
        &self.knots[alpha]
    }

    pub fn range(&self, alpha: usize) -> (f64, f64) {
        self.ranges[alpha]
    }

    /// Basis dimension `G_d`.
    pub fn basis_dim(&self) -> usize {
        1 + self.knots.iter().map(|k| 1 + k.len()).sum::<usize>()
    }

    /// Columns of covariate `alpha`: its linear term followed by its hinges.
    pub fn block(&self, alpha: usize) -> Range<usize> {
        let start = 1 + self.knots[..alpha].iter().map(|k| 1 + k.len()).sum::<usize>();
        start..start + 1 + self.knots[alpha].len()
    }

    pub fn rescale(&self, alpha: usize, x: f64) -> f64 {
        let (lo, hi) = self.ranges[alpha];
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    /// Rescaled copy of every covariate column of `frame`.
    pub fn rescale_frame(&self, frame: &PopulationFrame) -> Result<Vec<Vec<f64>>> {
        if frame.dim() != self.dim() {
            return Err(SbllError::InvalidInput(format!(
                "spline spec has {} covariates, frame has {}",
                self.dim(),
                frame.dim()
            )));
        }
        Ok((0..self.dim())
            .map(|a| frame.column(a).iter().map(|&x| self.rescale(a, x)).collect())
            .collect())
    }

    /// The hinge part of covariate `alpha`'s block, written into `out`
    /// (length `1 + knots.len()`).
    pub(crate) fn fill_block(&self, alpha: usize, x: f64, out: &mut [f64]) {
        out[0] = x;
        for (slot, &k) in out[1..].iter_mut().zip(&self.knots[alpha]) {
            *slot = (x - k).max(0.0);
        }
    }

    /// Basis row `Gamma(x)` at a rescaled point.
    pub fn basis_row(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "point dimension mismatch");
        let mut row = vec![0.0; self.basis_dim()];
        row[0] = 1.0;
        for (a, &xa) in x.iter().enumerate() {
            let block = self.block(a);
            self.fill_block(a, xa, &mut row[block]);
        }
        row
    }
}

/// Knots at the `j/(J+1)` empirical quantiles of the sampled (rescaled)
/// covariate values.
pub fn knots_for(frame: &PopulationFrame, sample: &SampleData, j: usize) -> Result<SplineSpec> {
    knots_for_rows(frame, sample.indices(), j)
}

pub(crate) fn knots_for_rows(frame: &PopulationFrame, rows: &[usize], j: usize) -> Result<SplineSpec> {
    if rows.is_empty() {
        return Err(SbllError::InvalidInput("cannot place knots without sampled units".into()));
    }
    let ranges: Vec<(f64, f64)> = frame
        .columns()
        .iter()
        .map(|c| {
            let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    let knots = (0..frame.dim())
        .map(|a| {
            let (lo, hi) = ranges[a];
            let scale = |x: f64| if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
            let mut values: Vec<f64> = rows.iter().map(|&i| scale(frame.column(a)[i])).collect();
            values.sort_by(f64::total_cmp);
            quantile_knots(&values, j)
        })
        .collect();
    SplineSpec::new(knots, ranges, j)
}

/// Quantile knots from sorted values. Knots that would coincide with an
/// earlier knot or fall outside the open range of the data are moved to the
/// next midpoint between neighbouring distinct values, or dropped.
fn quantile_knots(sorted: &[f64], j: usize) -> Vec<f64> {
    let mut distinct = sorted.to_vec();
    distinct.dedup();
    if distinct.len() < 2 || j == 0 {
        return Vec::new();
    }
    let (min, max) = (distinct[0], distinct[distinct.len() - 1]);
    let mids: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut knots: Vec<f64> = Vec::with_capacity(j);
    for step in 1..=j {
        let q = type7_quantile(sorted, step as f64 / (j + 1) as f64);
        let floor = knots.last().copied().unwrap_or(f64::NEG_INFINITY);
        let admissible = |k: f64| k > floor && k > min && k < max && k > 0.0 && k < 1.0;
        let knot = if admissible(q) { Some(q) } else { mids.iter().copied().find(|&m| admissible(m)) };
        if let Some(k) = knot {
            knots.push(k);
        }
    }
    knots
}

fn type7_quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
