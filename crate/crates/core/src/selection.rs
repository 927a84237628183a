//! BIC-driven choice of auxiliary variables with forward and backward
//! search.

use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::design::SampleData;
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;
use crate::pilot::ht_total;
use crate::sbll::{g_residual_variance, sbll_fit_with_rule, variance_g, SbllConfig};
use crate::splinebasis::knot_count;

/// Floor applied to `V_hat_g` before taking logs.
pub const VARIANCE_FLOOR: f64 = 1e-300;

/// How the knot count entering both the subset fit and its penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnotMode {
    /// Knot rule evaluated once with the number of candidates as the
    /// dimension, shared by every subset.
    #[default]
    Candidates,
    /// Knot rule evaluated with the subset size as the dimension.
    PerSubset,
    /// The same knot count for every subset.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SelectionConfig {
    pub sbll: SbllConfig,
    pub knot_mode: KnotMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Forward,
    Backward,
}

impl SearchMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "forward" => Some(Self::Forward),
            "backward" => Some(Self::Backward),
            _ => None,
        }
    }
}

impl fmt::Display for SearchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Forward => "forward",
            Self::Backward => "backward",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Chosen covariate indices, ascending.
    pub chosen: Vec<usize>,
    /// Visited subsets (ascending indices) with their BIC, in visiting order.
    pub path: Vec<(Vec<usize>, f64)>,
    pub method: SearchMethod,
    pub d_max: usize,
}

impl SelectionResult {
    pub fn chosen_bic(&self) -> f64 {
        self.path.iter().find(|(s, _)| *s == self.chosen).map(|(_, b)| *b).unwrap_or(f64::INFINITY)
    }
}

/// `J_r = 1 + |r| (J + 1)`.
pub fn penalty_dimension(subset_size: usize, knots: usize) -> usize {
    1 + subset_size * (knots + 1)
}

/// Largest subset size the search visits:
/// `min(|candidates|, floor(n / (2 (J + 1))))` with `J` the knot count for
/// the full candidate set.
pub fn d_max(n: usize, candidates: usize, knot_constant: f64) -> usize {
    if candidates == 0 {
        return 0;
    }
    let j = knot_count(n, candidates, knot_constant);
    candidates.min(n / (2 * (j + 1)))
}

/// Evaluates subset BICs for one sample, caching repeated subsets.
pub struct BicEvaluator<'a> {
    sample: &'a SampleData,
    frame: &'a PopulationFrame,
    config: SelectionConfig,
    candidates: usize,
    cache: Mutex<HashMap<Vec<usize>, f64>>,
}

impl<'a> BicEvaluator<'a> {
    /// Evaluator over all covariates of `frame`.
    pub fn new(sample: &'a SampleData, frame: &'a PopulationFrame, config: SelectionConfig) -> Self {
        Self::with_candidates(sample, frame, config, frame.dim())
    }

    /// Evaluator whose shared knot count is set by `candidates` covariates.
    pub fn with_candidates(sample: &'a SampleData, frame: &'a PopulationFrame, config: SelectionConfig, candidates: usize) -> Self {
        Self { sample, frame, config, candidates: candidates.max(1), cache: Mutex::new(HashMap::new()) }
    }

    fn knots_for_size(&self, size: usize) -> usize {
        match self.config.knot_mode {
            KnotMode::Candidates => knot_count(self.sample.len(), self.candidates, self.config.sbll.knot_constant),
            KnotMode::PerSubset => knot_count(self.sample.len(), size, self.config.sbll.knot_constant),
            KnotMode::Fixed(j) => j,
        }
    }

    /// BIC of `subset` (ascending indices). Subsets too large for the sample
    /// score `+inf`.
    pub fn bic(&self, subset: &[usize]) -> Result<f64> {
        if let Some(&v) = self.cache.lock().expect("cache lock").get(subset) {
            return Ok(v);
        }
        let v = self.compute(subset)?;
        self.cache.lock().expect("cache lock").insert(subset.to_vec(), v);
        Ok(v)
    }

    fn compute(&self, subset: &[usize]) -> Result<f64> {
        let sample = self.sample;
        let n = sample.len() as f64;
        let (variance, j_r) = if subset.is_empty() {
            let mean = ht_total(sample)? / sample.population_size() as f64;
            let e: Vec<f64> = sample.responses().iter().map(|y| y - mean).collect();
            (g_residual_variance(sample, &vec![1.0; e.len()], &e)?, 1)
        } else {
            let frame = self.frame.select(subset)?;
            let j = self.knots_for_size(subset.len());
            let spec = match self.config.sbll.spline_spec_with_knots(sample, &frame, j) {
                Err(SbllError::BasisTooLarge { .. }) => return Ok(f64::INFINITY),
                other => other?,
            };
            let fit = sbll_fit_with_rule(sample, &frame, &spec, self.config.sbll.bandwidth)?;
            (variance_g(&fit, sample)?, penalty_dimension(subset.len(), j))
        };
        if sample.design().srs_fraction().is_none() && !(variance > 0.0) {
            return Ok(f64::INFINITY);
        }
        Ok(variance.max(VARIANCE_FLOOR).ln() + j_r as f64 * n.ln() / n)
    }
}

/// Sample BIC `ln V_hat_g + J_r ln(n) / n` of the SBLL fit on covariates
/// `subset`. With a shared knot count every covariate of `frame` counts as
/// a candidate.
pub fn bic_for_subset(sample: &SampleData, frame: &PopulationFrame, subset: &[usize], config: &SelectionConfig) -> Result<f64> {
    let sorted = validate(frame, subset)?;
    BicEvaluator::new(sample, frame, *config).compute(&sorted)
}

fn validate(frame: &PopulationFrame, set: &[usize]) -> Result<Vec<usize>> {
    let mut v = set.to_vec();
    v.sort_unstable();
    if v.windows(2).any(|w| w[0] == w[1]) {
        return Err(SbllError::InvalidInput("duplicate covariate index".into()));
    }
    if let Some(&bad) = v.iter().find(|&&a| a >= frame.dim()) {
        return Err(SbllError::InvalidInput(format!("covariate {bad} out of range (d = {})", frame.dim())));
    }
    Ok(v)
}

/// `(bic, size, subset)` ordering: lower BIC, then smaller, then lexicographic.
fn better(a: (&[usize], f64), b: (&[usize], f64)) -> bool {
    a.1.total_cmp(&b.1).then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(b.0)).is_lt()
}

fn best_of(path: &[(Vec<usize>, f64)]) -> Vec<usize> {
    let mut best = &path[0];
    for entry in &path[1..] {
        if better((&entry.0, entry.1), (&best.0, best.1)) {
            best = entry;
        }
    }
    best.0.clone()
}

/// Scores each one-step neighbour in parallel and returns the best.
fn best_step(eval: &BicEvaluator<'_>, options: Vec<Vec<usize>>) -> Result<(Vec<usize>, f64)> {
    let scored: Vec<(Vec<usize>, f64)> = options
        .into_par_iter()
        .map(|s| eval.bic(&s).map(|b| (s, b)))
        .collect::<Result<_>>()?;
    let mut best = scored[0].clone();
    for entry in &scored[1..] {
        if better((&entry.0, entry.1), (&best.0, best.1)) {
            best = entry.clone();
        }
    }
    Ok(best)
}

fn forward_path(eval: &BicEvaluator<'_>, candidates: &[usize], limit: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let mut current: Vec<usize> = Vec::new();
    let mut path = vec![(current.clone(), eval.bic(&current)?)];
    while current.len() < limit {
        let options: Vec<Vec<usize>> = candidates
            .iter()
            .filter(|c| !current.contains(c))
            .map(|&c| {
                let mut s = current.clone();
                s.push(c);
                s.sort_unstable();
                s
            })
            .collect();
        let (next, bic) = best_step(eval, options)?;
        path.push((next.clone(), bic));
        current = next;
    }
    Ok(path)
}

/// Grows the model one covariate at a time from the empty set up to
/// `d_max` covariates and returns the subset with the smallest BIC seen.
pub fn forward_select(sample: &SampleData, frame: &PopulationFrame, candidates: &[usize], config: &SelectionConfig) -> Result<SelectionResult> {
    let candidates = validate(frame, candidates)?;
    let limit = d_max(sample.len(), candidates.len(), config.sbll.knot_constant);
    let eval = BicEvaluator::with_candidates(sample, frame, *config, candidates.len());
    let path = forward_path(&eval, &candidates, limit)?;
    Ok(SelectionResult { chosen: best_of(&path), path, method: SearchMethod::Forward, d_max: limit })
}

/// Starts from all candidates (or, when there are more than `d_max`, from
/// the largest forward-search model) and removes one covariate at a time
/// down to the empty set.
pub fn backward_select(sample: &SampleData, frame: &PopulationFrame, candidates: &[usize], config: &SelectionConfig) -> Result<SelectionResult> {
    let candidates = validate(frame, candidates)?;
    let limit = d_max(sample.len(), candidates.len(), config.sbll.knot_constant);
    let eval = BicEvaluator::with_candidates(sample, frame, *config, candidates.len());
    let mut current = if candidates.len() <= limit {
        candidates.clone()
    } else {
        forward_path(&eval, &candidates, limit)?.pop().map(|(s, _)| s).unwrap_or_default()
    };
    let mut path = vec![(current.clone(), eval.bic(&current)?)];
    while !current.is_empty() {
        let options: Vec<Vec<usize>> = (0..current.len())
            .map(|k| {
                let mut s = current.clone();
                s.remove(k);
                s
            })
            .collect();
        let (next, bic) = best_step(&eval, options)?;
        path.push((next.clone(), bic));
        current = next;
    }
    Ok(SelectionResult { chosen: best_of(&path), path, method: SearchMethod::Backward, d_max: limit })
}

pub fn select(
    sample: &SampleData,
    frame: &PopulationFrame,
    candidates: &[usize],
    method: SearchMethod,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    match method {
        SearchMethod::Forward => forward_select(sample, frame, candidates, config),
        SearchMethod::Backward => backward_select(sample, frame, candidates, config),
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::design::{draw_srs_seeded, make_srs};

    /// Five uniform covariates; only the second enters the response.
    fn one_active(seed: u64) -> PopulationFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 600;
        let cols: Vec<Vec<f64>> = (0..5).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
        let y = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * cols[1][i]).sin() + 0.2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let names = (1..=5).map(|k| format!("x{k}")).collect();
        PopulationFrame::new(cols, Some(y), names).unwrap()
    }

    #[test]
    fn penalty_arithmetic() {
        assert_eq!(penalty_dimension(2, 10), 23);
        assert_eq!(penalty_dimension(0, 10), 1);
        assert_eq!(d_max(200, 10, 1.0), 10);
        assert_eq!(d_max(50, 10, 1.0), 10);
        assert_eq!(d_max(200, 0, 1.0), 0);
    }

    #[test]
    fn shared_knot_count_follows_the_candidate_set() {
        let frame = one_active(3);
        let sample = draw_srs_seeded(&make_srs(600, 120).unwrap(), &frame, 1).unwrap();
        let j = knot_count(120, 5, 1.0);
        assert_ne!(j, knot_count(120, 1, 1.0));
        let shared = BicEvaluator::with_candidates(&sample, &frame, SelectionConfig::default(), 5).bic(&[1]).unwrap();
        let fixed = SelectionConfig { knot_mode: KnotMode::Fixed(j), ..Default::default() };
        assert_eq!(shared, bic_for_subset(&sample, &frame, &[1], &fixed).unwrap());
        let per_subset = SelectionConfig { knot_mode: KnotMode::PerSubset, ..Default::default() };
        assert_ne!(shared, bic_for_subset(&sample, &frame, &[1], &per_subset).unwrap());
    }

    #[test]
    fn single_active_variable_is_found() {
        let frame = one_active(5);
        let design = make_srs(600, 120).unwrap();
        let mut hits = 0;
        for seed in 0..10 {
            let sample = draw_srs_seeded(&design, &frame, seed).unwrap();
            let r = forward_select(&sample, &frame, &[0, 1, 2, 3, 4], &SelectionConfig::default()).unwrap();
            assert!(r.chosen.len() <= r.d_max);
            hits += usize::from(r.chosen == vec![1]);
        }
        assert!(hits >= 8, "hits = {hits}");
    }

    #[test]
    fn path_entries_are_reproducible() {
        let frame = one_active(6);
        let design = make_srs(600, 80).unwrap();
        let sample = draw_srs_seeded(&design, &frame, 1).unwrap();
        let config = SelectionConfig::default();
        for method in [SearchMethod::Forward, SearchMethod::Backward] {
            let r = select(&sample, &frame, &[0, 1, 2, 3, 4], method, &config).unwrap();
            for (subset, b) in &r.path {
                assert_eq!(bic_for_subset(&sample, &frame, subset, &config).unwrap(), *b);
            }
            let min = r.path.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            assert_eq!(r.chosen_bic(), min);
            assert_eq!(select(&sample, &frame, &[0, 1, 2, 3, 4], method, &config).unwrap(), r);
        }
    }

    #[test]
    fn backward_starts_from_all_candidates() {
        let frame = one_active(7);
        let design = make_srs(600, 100).unwrap();
        let sample = draw_srs_seeded(&design, &frame, 2).unwrap();
        let r = backward_select(&sample, &frame, &[4, 1, 2], &SelectionConfig::default()).unwrap();
        assert_eq!(r.path[0].0, vec![1, 2, 4]);
        assert!(r.path.last().unwrap().0.is_empty());
    }

    #[test]
    fn empty_candidates_give_empty_model() {
        let frame = one_active(8);
        let design = make_srs(600, 60).unwrap();
        let sample = draw_srs_seeded(&design, &frame, 3).unwrap();
        let r = forward_select(&sample, &frame, &[], &SelectionConfig::default()).unwrap();
        assert!(r.chosen.is_empty());
        assert_eq!(r.path.len(), 1);
    }

    #[test]
    fn exact_fit_is_floored() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 13) % 200) as f64 / 199.0).collect();
        let y = x.iter().map(|v| 1.0 + 3.0 * v).collect();
        let frame = PopulationFrame::new(vec![x], Some(y), vec!["x".into()]).unwrap();
        let sample = draw_srs_seeded(&make_srs(200, 50).unwrap(), &frame, 1).unwrap();
        let b = bic_for_subset(&sample, &frame, &[0], &SelectionConfig::default()).unwrap();
        assert!(b.is_finite() && b < -40.0, "{b}");
    }
}
