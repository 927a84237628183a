//! Stage two: design-weighted local linear smoothing of the
//! pseudo-responses, the fitted surface over the population, the
//! difference-estimator total, g-weights and the variance estimators.

use std::fmt;

use rayon::prelude::*;

use crate::design::SampleData;
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;
use crate::pilot::{self, PilotFit};
use crate::splinebasis::{knot_count, knots_for, SplineSpec};
use crate::units::Units;

/// Population rows handled per parallel work item.
const CHUNK: usize = 128;

/// `det(X'WX)` below this fraction of `S0 * S2` is treated as singular.
const SINGULAR_RATIO: f64 = 1e-12;

/// Bandwidth growth past the second nearest distinct value when a window
/// has to be widened.
const EXPANSION_MARGIN: f64 = 1.25;

/// Quartic (biweight) kernel `15/16 (1 - u^2)^2` on `[-1, 1]`.
pub fn quartic(u: f64) -> f64 {
    if u.abs() < 1.0 {
        let t = 1.0 - u * u;
        0.9375 * t * t
    } else {
        0.0
    }
}

/// Quartic kernel with one bandwidth per covariate (rescaled units).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(SbllError::InvalidInput("bandwidths must be positive and finite".into()));
        }
        Ok(Self { bandwidths })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn bandwidth(&self, alpha: usize) -> f64 {
        self.bandwidths[alpha]
    }
}

/// Rule-of-thumb bandwidth `scale * sigma * n^(-1/5)` for covariate `alpha`
/// on the `[0, 1]` rescaled axis, where `sigma` is the design-weighted
/// standard deviation of the sampled values. The result is widened so every
/// sampled point sees at least one other distinct value; a covariate with a
/// single sampled value gets a bandwidth spanning the whole axis.
pub fn rot_bandwidth(sample: &SampleData, frame: &PopulationFrame, alpha: usize, scale: f64) -> Result<f64> {
    if alpha >= frame.dim() {
        return Err(SbllError::InvalidInput(format!("covariate {alpha} out of range")));
    }
    let column = frame.column(alpha);
    let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let xs: Vec<f64> = sample
        .indices()
        .iter()
        .map(|&i| if hi > lo { (column[i] - lo) / (hi - lo) } else { 0.0 })
        .collect();
    Ok(scaled_bandwidth(&xs, &sample.design_weights(), scale, xs.len()))
}

/// Bandwidth used when a covariate takes a single value: wide enough to
/// cover the whole rescaled axis from any point.
const FULL_RANGE: f64 = 2.0;

/// Constant of the local linear rule of thumb for the quartic kernel.
const QUARTIC_ROT_CONSTANT: f64 = 2.78;

fn distinct_sorted(xs: &[f64]) -> Vec<f64> {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    sorted
}

/// Widens `h` so that every sampled point has a distinct neighbour in its
/// window, and caps it at the full range.
fn clamp_bandwidth(h: f64, distinct: &[f64]) -> f64 {
    // Largest gap between a distinct value and its nearest distinct neighbour.
    let widest = (0..distinct.len())
        .map(|k| {
            let left = if k > 0 { distinct[k] - distinct[k - 1] } else { f64::INFINITY };
            let right = if k + 1 < distinct.len() { distinct[k + 1] - distinct[k] } else { f64::INFINITY };
            left.min(right)
        })
        .fold(0.0, f64::max);
    let h = if h.is_finite() { h } else { FULL_RANGE };
    h.max(widest * EXPANSION_MARGIN).min(FULL_RANGE)
}

fn weighted_moments(xs: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = xs.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = xs.iter().zip(weights).map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>() / total;
    (mean, var)
}

/// `scale * sigma * n^(-1/5)` with `sigma` the weighted spread of `xs`.
pub(crate) fn scaled_bandwidth(xs: &[f64], weights: &[f64], scale: f64, n: usize) -> f64 {
    let distinct = distinct_sorted(xs);
    if distinct.len() < 2 {
        return FULL_RANGE;
    }
    let (_, var) = weighted_moments(xs, weights);
    clamp_bandwidth(scale * var.sqrt() * (n as f64).powf(-0.2), &distinct)
}

/// Local linear rule of thumb
/// `2.78 [sigma^2 |range| / (n mean(m''^2))]^(1/5)` where `m''` and
/// `sigma^2` come from a design-weighted global quartic fit of `ys` on `xs`.
pub(crate) fn plugin_bandwidth(xs: &[f64], ys: &[f64], weights: &[f64], n: usize) -> f64 {
    let distinct = distinct_sorted(xs);
    if distinct.len() < 2 {
        return FULL_RANGE;
    }
    if distinct.len() < 6 {
        return scaled_bandwidth(xs, weights, 2.5, n);
    }
    let (center, _) = weighted_moments(xs, weights);
    let design = nalgebra::DMatrix::from_fn(xs.len(), 5, |k, c| (xs[k] - center).powi(c as i32));
    let beta = crate::linalg::Projector::new(&design, weights).apply(ys);
    let total: f64 = weights.iter().sum();
    let mut rss = 0.0;
    let mut curvature = 0.0;
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let t = x - center;
        let fit = beta[0] + t * (beta[1] + t * (beta[2] + t * (beta[3] + t * beta[4])));
        let second = 2.0 * beta[2] + 6.0 * beta[3] * t + 12.0 * beta[4] * t * t;
        rss += weights[k] * (y - fit).powi(2);
        curvature += weights[k] * second * second;
    }
    let dof = xs.len() as f64 / (xs.len() as f64 - 5.0).max(1.0);
    let sigma2 = rss / total * dof;
    let curvature = curvature / total;
    let range = distinct[distinct.len() - 1] - distinct[0];
    let h = QUARTIC_ROT_CONSTANT * (sigma2 * range / (n as f64 * curvature)).powf(0.2);
    clamp_bandwidth(h, &distinct)
}

/// How stage-two bandwidths are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// Local linear rule of thumb from a global quartic pilot fit of each
    /// covariate's pseudo-responses.
    PlugIn,
    /// `scale * sigma_x * n^(-1/5)`, using only the covariate spread.
    Scaled(f64),
}

impl BandwidthRule {
    fn validate(self) -> Result<()> {
        match self {
            BandwidthRule::Scaled(s) if !(s > 0.0 && s.is_finite()) => {
                Err(SbllError::Config("bandwidth scale must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Bandwidth for sampled coordinates `xs`, responses `ys` and design
    /// weights, at the rate of a sample of size `n`.
    pub fn bandwidth(self, xs: &[f64], ys: &[f64], weights: &[f64], n: usize) -> f64 {
        match self {
            BandwidthRule::PlugIn => plugin_bandwidth(xs, ys, weights, n),
            BandwidthRule::Scaled(scale) => scaled_bandwidth(xs, weights, scale, n),
        }
    }
}

/// Where the stage-two bandwidths come from.
#[derive(Debug, Clone, Copy)]
pub(crate) enum KernelSource<'a> {
    Given(&'a KernelSpec),
    /// Chosen from the pseudo-responses at the rate of a sample of size `n`.
    Rule(BandwidthRule, usize),
}

/// Which rung of the fallback ladder produced a local fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Rung {
    Linear,
    /// Local linear after widening the window.
    Expanded,
    /// Weighted local mean (singular local design).
    Constant,
}

/// Design-weighted local linear smoother for one covariate. Produces the
/// weight vector `l` with `m(x0) = l' y` so the fit stays linear in the
/// responses.
#[derive(Debug, Clone)]
pub(crate) struct LocalLinear {
    /// Sorted sample coordinates.
    xs: Vec<f64>,
    /// Position in the sample of each sorted coordinate.
    order: Vec<usize>,
    /// Design weights aligned with `xs`.
    weights: Vec<f64>,
    /// Distinct coordinates, ascending.
    distinct: Vec<f64>,
    h: f64,
}

impl LocalLinear {
    pub fn new(xs: &[f64], inv_pi: &[f64], h: f64) -> Self {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&k| xs[k]).collect();
        let mut distinct = sorted.clone();
        distinct.dedup();
        Self { weights: order.iter().map(|&k| inv_pi[k]).collect(), xs: sorted, order, distinct, h }
    }

    /// Weights `(sample position, l_k)` of the local fit at `x0`, written into
    /// `out` (cleared first).
    pub fn weights_at(&self, x0: f64, out: &mut Vec<(usize, f64)>) -> Rung {
        out.clear();
        let mut h = self.h;
        let mut rung = Rung::Linear;
        if self.distinct.len() < 2 {
            return self.local_constant(x0, f64::INFINITY, out);
        }
        let (lo, hi) = self.window(x0, h);
        if hi == lo || self.xs[lo] == self.xs[hi - 1] {
            h = h.max(EXPANSION_MARGIN * self.second_nearest_distance(x0));
            rung = Rung::Expanded;
        }
        let (lo, hi) = self.window(x0, h);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for t in lo..hi {
            let dx = self.xs[t] - x0;
            let w = self.weights[t] * quartic(dx / h);
            s0 += w;
            s1 += w * dx;
            s2 += w * dx * dx;
        }
        let det = s0 * s2 - s1 * s1;
        if !(det > SINGULAR_RATIO * s0 * s2) {
            return self.local_constant(x0, h, out);
        }
        for t in lo..hi {
            let dx = self.xs[t] - x0;
            let w = self.weights[t] * quartic(dx / h);
            if w > 0.0 {
                out.push((self.order[t], w * (s2 - s1 * dx) / det));
            }
        }
        rung
    }

    fn local_constant(&self, x0: f64, h: f64, out: &mut Vec<(usize, f64)>) -> Rung {
        let (lo, hi) = if h.is_finite() { self.window(x0, h) } else { (0, self.xs.len()) };
        let kernel = |t: usize| if h.is_finite() { quartic((self.xs[t] - x0) / h) } else { 1.0 };
        let s0: f64 = (lo..hi).map(|t| self.weights[t] * kernel(t)).sum();
        for t in lo..hi {
            let w = self.weights[t] * kernel(t);
            if w > 0.0 {
                out.push((self.order[t], w / s0));
            }
        }
        Rung::Constant
    }

    /// Index range of sorted points strictly inside `(x0 - h, x0 + h)`.
    fn window(&self, x0: f64, h: f64) -> (usize, usize) {
        let lo = self.xs.partition_point(|&x| x <= x0 - h);
        let hi = self.xs.partition_point(|&x| x < x0 + h);
        (lo, hi.max(lo))
    }

    /// Distance from `x0` to the second closest distinct sample value.
    fn second_nearest_distance(&self, x0: f64) -> f64 {
        let v = &self.distinct;
        let mut right = v.partition_point(|&x| x < x0);
        let mut left = right;
        let mut found = 0;
        let mut dist = 0.0;
        while found < 2 {
            let dl = if left > 0 { x0 - v[left - 1] } else { f64::INFINITY };
            let dr = if right < v.len() { v[right] - x0 } else { f64::INFINITY };
            if dl <= dr {
                dist = dl;
                left -= 1;
            } else {
                dist = dr;
                right += 1;
            }
            found += 1;
        }
        dist
    }
}

/// Weighted local linear intercept at `x0`: minimizes
/// `sum_i w_i {y_i - a0 - a1 (x_i - x0)}^2 K_h(x_i - x0)` with `w_i = 1/pi_i`.
///
/// Windows with fewer than two distinct points are widened to reach the two
/// nearest distinct values; a singular local design falls back to the
/// kernel-weighted mean.
pub fn local_linear_at(xs: &[f64], ys: &[f64], pi: &[f64], h: f64, x0: f64) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() != pi.len() || xs.is_empty() {
        return Err(SbllError::InvalidInput("xs, ys and pi must be non-empty and of equal length".into()));
    }
    if !(h > 0.0) {
        return Err(SbllError::InvalidInput("bandwidth must be positive".into()));
    }
    if pi.iter().any(|&p| !(p > 0.0)) {
        return Err(SbllError::InvalidDesign("inclusion probabilities must be positive".into()));
    }
    let inv: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    let smoother = LocalLinear::new(xs, &inv, h);
    let mut w = Vec::new();
    smoother.weights_at(x0, &mut w);
    Ok(w.iter().map(|&(k, l)| l * ys[k]).sum())
}

/// Counts of fallback events across all local fits of an SBLL run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub expanded_windows: usize,
    pub local_constant_fits: usize,
    pub rank_deficient_pilot: bool,
}

impl Diagnostics {
    fn record(&mut self, rung: Rung) {
        match rung {
            Rung::Linear => {}
            Rung::Expanded => self.expanded_windows += 1,
            Rung::Constant => self.local_constant_fits += 1,
        }
    }

    fn merge(&mut self, other: &Diagnostics) {
        self.expanded_windows += other.expanded_windows;
        self.local_constant_fits += other.local_constant_fits;
    }
}

/// A fitted SBLL surface over the whole population.
#[derive(Debug, Clone)]
pub struct SbllFit {
    pilot: PilotFit,
    kernel: KernelSpec,
    fitted: Vec<f64>,
    component_fits: Vec<Vec<f64>>,
    g_weights: Vec<f64>,
    diagnostics: Diagnostics,
}

impl SbllFit {
    pub fn pilot(&self) -> &PilotFit {
        &self.pilot
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// `m*_i` for every population unit.
    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    /// `m*_a(x_ia)` indexed `[alpha][i]`.
    pub fn component_fits(&self) -> &[Vec<f64>] {
        &self.component_fits
    }

    /// g-weights aligned with the sample indices.
    pub fn g_weights(&self) -> &[f64] {
        &self.g_weights
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diagnostics
    }

    /// `y_i - m*_i` over the sample.
    pub fn residuals(&self, sample: &SampleData) -> Vec<f64> {
        sample.indices().iter().zip(sample.responses()).map(|(&i, &y)| y - self.fitted[i]).collect()
    }
}

/// Runs both stages on a sample and predicts at every population unit.
pub fn sbll_fit(sample: &SampleData, frame: &PopulationFrame, spec: &SplineSpec, kernel: &KernelSpec) -> Result<SbllFit> {
    check_inputs(sample, frame, spec, kernel)?;
    let scaled = spec.rescale_frame(frame)?;
    let units = Units::from_sample(sample);
    let coef = difference_coefficients(sample);
    Ok(fit_units(&units, &scaled, spec, KernelSource::Given(kernel), Some(&coef)))
}

/// Like [`sbll_fit`] with bandwidths chosen by `rule` after the pilot stage.
pub fn sbll_fit_with_rule(sample: &SampleData, frame: &PopulationFrame, spec: &SplineSpec, rule: BandwidthRule) -> Result<SbllFit> {
    rule.validate()?;
    let placeholder = KernelSpec { bandwidths: vec![1.0; spec.dim()] };
    check_inputs(sample, frame, spec, &placeholder)?;
    let scaled = spec.rescale_frame(frame)?;
    let units = Units::from_sample(sample);
    let coef = difference_coefficients(sample);
    Ok(fit_units(&units, &scaled, spec, KernelSource::Rule(rule, sample.len()), Some(&coef)))
}

/// `c_j = 1 - I_j / pi_j` over the population.
pub(crate) fn difference_coefficients(sample: &SampleData) -> Vec<f64> {
    let mut coef = vec![1.0; sample.population_size()];
    for &i in sample.indices() {
        coef[i] = 1.0 - 1.0 / sample.design().first_order(i);
    }
    coef
}

pub(crate) fn check_inputs(sample: &SampleData, frame: &PopulationFrame, spec: &SplineSpec, kernel: &KernelSpec) -> Result<()> {
    if frame.len() != sample.population_size() {
        return Err(SbllError::InvalidInput(format!(
            "frame has {} rows but the design covers {}",
            frame.len(),
            sample.population_size()
        )));
    }
    if kernel.bandwidths.len() != spec.dim() || frame.dim() != spec.dim() {
        return Err(SbllError::InvalidInput("frame, spline spec and kernel disagree on the number of covariates".into()));
    }
    if sample.len() < spec.basis_dim() {
        return Err(SbllError::BasisTooLarge { n: sample.len(), basis_dim: spec.basis_dim() });
    }
    Ok(())
}

/// Shared pipeline for sample-based and population-based fits. When
/// `difference_coef` is given, the g-weights are accumulated alongside the
/// predictions; otherwise they are all one.
pub(crate) fn fit_units(
    units: &Units<'_>,
    scaled: &[Vec<f64>],
    spec: &SplineSpec,
    kernel: KernelSource<'_>,
    difference_coef: Option<&[f64]>,
) -> SbllFit {
    let pilot = pilot::fit_units(units, scaled, spec);
    let d = spec.dim();
    let n = units.len();
    let big_n = units.population_size;
    let mean = pilot.ht_total() / big_n as f64;

    let pseudo: Vec<Vec<f64>> = (0..d).map(|a| pilot::pseudo_from_parts(&pilot, units.y, a)).collect();
    let coords: Vec<Vec<f64>> = (0..d).map(|a| units.rows.iter().map(|&i| scaled[a][i]).collect()).collect();
    let kernel = match kernel {
        KernelSource::Given(k) => k.clone(),
        KernelSource::Rule(rule, rate_n) => KernelSpec {
            bandwidths: (0..d).map(|a| rule.bandwidth(&coords[a], &pseudo[a], &units.inv_pi, rate_n)).collect(),
        },
    };
    let smoothers: Vec<LocalLinear> =
        (0..d).map(|a| LocalLinear::new(&coords[a], &units.inv_pi, kernel.bandwidth(a))).collect();

    struct Chunk {
        components: Vec<Vec<f64>>,
        accum: Vec<Vec<f64>>,
        diagnostics: Diagnostics,
    }

    let chunks: Vec<Chunk> = (0..big_n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let rows = c * CHUNK..((c + 1) * CHUNK).min(big_n);
            let mut components = vec![Vec::with_capacity(rows.len()); d];
            let mut accum = if difference_coef.is_some() { vec![vec![0.0; n]; d] } else { Vec::new() };
            let mut diagnostics = Diagnostics::default();
            let mut w = Vec::new();
            for j in rows {
                for a in 0..d {
                    let rung = smoothers[a].weights_at(scaled[a][j], &mut w);
                    diagnostics.record(rung);
                    components[a].push(w.iter().map(|&(k, l)| l * pseudo[a][k]).sum());
                    if let Some(cj) = difference_coef.map(|c| c[j]) {
                        if cj != 0.0 {
                            for &(k, l) in &w {
                                accum[a][k] += cj * l;
                            }
                        }
                    }
                }
            }
            Chunk { components, accum, diagnostics }
        })
        .collect();

    let mut component_fits = vec![Vec::with_capacity(big_n); d];
    let mut accum = vec![vec![0.0; n]; d];
    let mut diagnostics = Diagnostics { rank_deficient_pilot: pilot.rank_deficient(), ..Default::default() };
    for chunk in &chunks {
        diagnostics.merge(&chunk.diagnostics);
        for a in 0..d {
            component_fits[a].extend_from_slice(&chunk.components[a]);
            if difference_coef.is_some() {
                for (t, v) in accum[a].iter_mut().zip(&chunk.accum[a]) {
                    *t += v;
                }
            }
        }
    }
    let fitted: Vec<f64> = (0..big_n).map(|j| mean + (0..d).map(|a| component_fits[a][j]).sum::<f64>()).collect();

    let g_weights = match difference_coef {
        Some(coef) => {
            let pi: Vec<f64> = units.inv_pi.iter().map(|w| 1.0 / w).collect();
            let w = population_weight_vector(&pilot, &units.inv_pi, coef.iter().sum(), &accum);
            w.iter().zip(&pi).map(|(wi, p)| 1.0 + p * wi).collect()
        }
        None => vec![1.0; n],
    };

    SbllFit { pilot, kernel, fitted, component_fits, g_weights, diagnostics }
}

/// `sum_j c_j rho_sj` where `rho_sj` maps the sample responses to `m*_j`,
/// assembled from the accumulated local weights `L_a = sum_j c_j l_ja`.
///
/// With `v = 1/pi`, `rho_sj = v/N + sum_a [l_ja - (1'l_ja) v/N - sum_{b != a} Psi*_b' l_ja]`
/// and `Psi*_b' z = P' D_b Gamma_s' (z - (1'z/N) v)`.
fn population_weight_vector(pilot: &PilotFit, inv_pi: &[f64], coef_sum: f64, accum: &[Vec<f64>]) -> Vec<f64> {
    let big_n = pilot.population_size() as f64;
    let spec = pilot.spec();
    let mut w: Vec<f64> = inv_pi.iter().map(|v| coef_sum * v / big_n).collect();
    for (a, l) in accum.iter().enumerate() {
        let mass: f64 = l.iter().sum();
        let z: Vec<f64> = l.iter().zip(inv_pi).map(|(lk, v)| lk - mass / big_n * v).collect();
        let mut q: Vec<f64> = pilot.basis.tr_mul(&nalgebra::DVector::from_column_slice(&z)).iter().copied().collect();
        q[0] = 0.0;
        for c in spec.block(a) {
            q[c] = 0.0;
        }
        let back = pilot.projector.apply_transpose(&q);
        for ((wk, zk), bk) in w.iter_mut().zip(&z).zip(&back) {
            *wk += zk - bk;
        }
    }
    w
}

/// Difference estimator `sum_U m*_i + sum_s (y_i - m*_i)/pi_i`.
pub fn sbll_total(fit: &SbllFit, sample: &SampleData) -> f64 {
    difference_total(sample, &fit.fitted)
}

pub(crate) fn difference_total(sample: &SampleData, fitted: &[f64]) -> f64 {
    let design = sample.design();
    let surface: f64 = fitted.iter().sum();
    let correction: f64 = sample
        .indices()
        .iter()
        .zip(sample.responses())
        .map(|(&i, &y)| (y - fitted[i]) / design.first_order(i))
        .sum();
    surface + correction
}

/// The g-weights of a fit; `sum_s g_i y_i / pi_i` equals the SBLL total.
pub fn g_weights(fit: &SbllFit) -> &[f64] {
    &fit.g_weights
}

/// `N^-2 sum_{i,j in s} (Delta_ij / pi_ij) (e_i / pi_i) (e_j / pi_j)`, the
/// variance estimator of the mean-scaled total for residuals `e`.
pub fn residual_variance(sample: &SampleData, residuals: &[f64]) -> Result<f64> {
    double_sum(sample, residuals)
}

/// g-weighted residual variance. Under SRS this is the simplified form
/// `(1 - f) / (n (n - 1)) sum_s g_i^2 e_i^2`; other designs use the full
/// double sum of [`g_variance_double_sum`].
pub fn g_residual_variance(sample: &SampleData, g: &[f64], residuals: &[f64]) -> Result<f64> {
    match sample.design().srs_fraction() {
        Some(f) => {
            let n = sample.len() as f64;
            if sample.len() < 2 {
                return Ok(0.0);
            }
            let ss: f64 = g.iter().zip(residuals).map(|(g, e)| (g * e).powi(2)).sum();
            Ok((1.0 - f) / (n * (n - 1.0)) * ss)
        }
        None => g_variance_double_sum(sample, g, residuals),
    }
}

/// The g-weighted double sum for any design.
pub fn g_variance_double_sum(sample: &SampleData, g: &[f64], residuals: &[f64]) -> Result<f64> {
    let scaled: Vec<f64> = g.iter().zip(residuals).map(|(g, e)| g * e).collect();
    double_sum(sample, &scaled)
}

fn double_sum(sample: &SampleData, e: &[f64]) -> Result<f64> {
    let design = sample.design();
    let idx = sample.indices();
    let big_n = design.population_size() as f64;
    let u: Vec<f64> = idx.iter().zip(e).map(|(&i, e)| e / design.first_order(i)).collect();
    let mut total = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            let pij = design.second_order(i, j);
            if !(pij > 0.0) {
                return Err(SbllError::InvalidDesign(format!(
                    "joint inclusion probability of units {i} and {j} is zero"
                )));
            }
            total += design.delta(i, j) / pij * u[a] * u[b];
        }
    }
    Ok(total / (big_n * big_n))
}

/// `V_hat` for an SBLL fit (mean-scaled; multiply by `N^2` for the total).
pub fn variance_ht(fit: &SbllFit, sample: &SampleData) -> Result<f64> {
    residual_variance(sample, &fit.residuals(sample))
}

/// `V_hat_g` for an SBLL fit.
pub fn variance_g(fit: &SbllFit, sample: &SampleData) -> Result<f64> {
    g_residual_variance(sample, &fit.g_weights, &fit.residuals(sample))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ht,
    Lreg,
    Ls,
    Sbll,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ht, Method::Lreg, Method::Ls, Method::Sbll];

    pub fn label(self) -> &'static str {
        match self {
            Method::Ht => "HT",
            Method::Lreg => "LREG",
            Method::Ls => "LS",
            Method::Sbll => "SBLL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ht" => Some(Method::Ht),
            "lreg" | "greg" => Some(Method::Lreg),
            "ls" => Some(Method::Ls),
            "sbll" => Some(Method::Sbll),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Point estimate and variance estimates for one estimator on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub total: f64,
    /// `V_hat` on the mean scale.
    pub variance_ht: f64,
    /// `V_hat_g` on the mean scale.
    pub variance_g: f64,
    pub ht_total: f64,
    pub n: usize,
    pub population_size: usize,
}

impl EstimateReport {
    /// Standard error of the total from `V_hat`.
    pub fn se_total(&self) -> f64 {
        self.population_size as f64 * self.variance_ht.max(0.0).sqrt()
    }

    /// Standard error of the total from `V_hat_g`.
    pub fn se_total_g(&self) -> f64 {
        self.population_size as f64 * self.variance_g.max(0.0).sqrt()
    }
}

/// Builds a report from a fitted surface and its g-weights.
pub(crate) fn report(method: Method, sample: &SampleData, fitted: &[f64], g: &[f64]) -> Result<EstimateReport> {
    let residuals: Vec<f64> = sample.indices().iter().zip(sample.responses()).map(|(&i, &y)| y - fitted[i]).collect();
    let total = difference_total(sample, fitted);
    if !total.is_finite() {
        return Err(SbllError::Numerical(format!("{method} total is not finite")));
    }
    Ok(EstimateReport {
        method,
        total,
        variance_ht: residual_variance(sample, &residuals)?,
        variance_g: g_residual_variance(sample, g, &residuals)?,
        ht_total: pilot::ht_total(sample)?,
        n: sample.len(),
        population_size: sample.population_size(),
    })
}

/// Tuning constants of the automatic pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbllConfig {
    /// Constant `c` of the knot rule.
    pub knot_constant: f64,
    pub bandwidth: BandwidthRule,
}

impl Default for SbllConfig {
    fn default() -> Self {
        Self { knot_constant: 1.0, bandwidth: BandwidthRule::PlugIn }
    }
}

impl SbllConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.knot_constant > 0.0 && self.knot_constant.is_finite()) {
            return Err(SbllError::Config("knot constant must be positive".into()));
        }
        self.bandwidth.validate()
    }

    /// Knot count from the knot rule and knots at sample quantiles.
    pub fn spline_spec(&self, sample: &SampleData, frame: &PopulationFrame) -> Result<SplineSpec> {
        self.spline_spec_with_knots(sample, frame, knot_count(sample.len(), frame.dim(), self.knot_constant))
    }

    pub fn spline_spec_with_knots(&self, sample: &SampleData, frame: &PopulationFrame, knots: usize) -> Result<SplineSpec> {
        self.validate()?;
        let spec = knots_for(frame, sample, knots)?;
        if sample.len() < spec.basis_dim() {
            return Err(SbllError::BasisTooLarge { n: sample.len(), basis_dim: spec.basis_dim() });
        }
        Ok(spec)
    }
}

/// Tunes, fits and reports the SBLL estimator in one call.
pub fn estimate_sbll(sample: &SampleData, frame: &PopulationFrame, config: &SbllConfig) -> Result<(SbllFit, EstimateReport)> {
    let spec = config.spline_spec(sample, frame)?;
    let fit = sbll_fit_with_rule(sample, frame, &spec, config.bandwidth)?;
    let report = report(Method::Sbll, sample, &fit.fitted, &fit.g_weights)?;
    Ok((fit, report))
}
