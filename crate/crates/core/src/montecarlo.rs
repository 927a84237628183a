//! Simulation study: the four additive test populations, a replication
//! runner over repeated SRS samples from one fixed population, selection
//! experiments, and CSV / text summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ht_report, lreg_total, ls_total};
use crate::design::{draw_srs, make_srs, SampleData, SimpleRandomSampling};
use crate::error::{Result, SbllError};
use crate::frame::PopulationFrame;
use crate::sbll::{estimate_sbll, EstimateReport, Method, SbllConfig};
use crate::selection::{select, SearchMethod, SelectionConfig};

/// Number of uniform covariates generated for every model.
pub const D_TOTAL: usize = 10;

/// The four test models. Covariate numbers are 1-based as in `x1..x10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Model {
    M1,
    M2,
    M3,
    M4,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::M1, Model::M2, Model::M3, Model::M4];

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Model::M1),
            2 => Ok(Model::M2),
            3 => Ok(Model::M3),
            4 => Ok(Model::M4),
            _ => Err(SbllError::Config(format!("unknown model {id}; expected 1-4"))),
        }
    }

    pub fn id(self) -> u32 {
        match self {
            Model::M1 => 1,
            Model::M2 => 2,
            Model::M3 => 3,
            Model::M4 => 4,
        }
    }

    /// 0-based indices of the covariates that enter the mean function.
    pub fn active(self) -> &'static [usize] {
        match self {
            Model::M1 => &[2, 5],
            Model::M2 => &[1, 9],
            Model::M3 => &[1, 4, 7],
            Model::M4 => &[0, 1, 2, 3, 4],
        }
    }

    /// Mean function; `x` holds all ten covariates.
    pub fn mean(self, x: &[f64]) -> f64 {
        use std::f64::consts::PI;
        match self {
            Model::M1 => -1.0 + 2.0 * x[2] + 4.0 * x[5],
            Model::M2 => 5.5 - 6.0 * x[1] + 8.0 * (x[1] - 0.5).powi(2) - 3.0 * x[9] + 32.0 * (x[9] - 0.5).powi(3),
            Model::M3 => 8.0 * (x[1] - 0.5).powi(2) + (2.0 * x[4] - 1.0).exp() + (2.0 * PI * (x[7] - 0.5)).sin(),
            Model::M4 => 2.0 + x[..5].iter().map(|v| (2.0 * PI * (v - 0.5)).sin()).sum::<f64>(),
        }
    }

    /// Noise standard deviation at `x`.
    pub fn noise_sd(self, x: &[f64], sigma0: f64) -> f64 {
        match self {
            Model::M4 => 0.5 * sigma0 * x[..5].iter().sum::<f64>().sqrt(),
            _ => sigma0,
        }
    }
}

/// SplitMix64 finalizer, used to derive stream ids from cell coordinates.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for the given coordinates under a master seed.
pub fn stream_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let stream = parts.iter().fold(0x5bd1_e995_u64, |acc, &p| mix(acc ^ mix(p)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One population of `population_size` units with `d_total` iid `U(0, 1)`
/// covariates named `x1..` and the model's response.
pub fn gen_population(model: Model, population_size: usize, sigma0: f64, d_total: usize, seed: u64) -> Result<PopulationFrame> {
    let needed = model.active().iter().max().map_or(0, |m| m + 1);
    if d_total < needed {
        return Err(SbllError::Config(format!("model {} needs at least {needed} covariates", model.id())));
    }
    if population_size < 2 {
        return Err(SbllError::Config("population needs at least two units".into()));
    }
    if !(sigma0 >= 0.0 && sigma0.is_finite()) {
        return Err(SbllError::Config("sigma0 must be non-negative".into()));
    }
    let mut rng = stream_rng(seed, &[1, u64::from(model.id()), sigma0.to_bits()]);
    let mut columns = vec![Vec::with_capacity(population_size); d_total];
    let mut y = Vec::with_capacity(population_size);
    let mut x = vec![0.0; d_total];
    for _ in 0..population_size {
        for (a, v) in x.iter_mut().enumerate() {
            *v = rng.random::<f64>();
            columns[a].push(*v);
        }
        let eps: f64 = rng.sample(StandardNormal);
        y.push(model.mean(&x) + model.noise_sd(&x, sigma0) * eps);
    }
    let names = (1..=d_total).map(|k| format!("x{k}")).collect();
    PopulationFrame::new(columns, Some(y), names)
}

/// Which covariates the estimators use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Covariates {
    /// The model's active covariates.
    Active,
    /// Every generated covariate.
    All,
    /// Explicit 0-based indices.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: Model,
    pub population_size: usize,
    pub sample_size: usize,
    pub sigma0: f64,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    pub sbll: SbllConfig,
    pub d_total: usize,
    pub covariates: Covariates,
    /// Record wall-clock time of SBLL fits. Off by default so that outputs
    /// are byte-identical across runs.
    pub time_fits: bool,
}

impl SimConfig {
    pub fn new(model: Model, sample_size: usize, sigma0: f64, reps: usize, seed: u64) -> Self {
        Self {
            model,
            population_size: 1000,
            sample_size,
            sigma0,
            reps,
            seed,
            estimators: Method::ALL.to_vec(),
            sbll: SbllConfig::default(),
            d_total: D_TOTAL,
            covariates: Covariates::Active,
            time_fits: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(SbllError::Config("reps must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(SbllError::Config("no estimators requested".into()));
        }
        if self.sample_size == 0 || self.sample_size >= self.population_size {
            return Err(SbllError::Config(format!(
                "sample size {} must be in 1..{}",
                self.sample_size, self.population_size
            )));
        }
        self.sbll.validate()
    }

    pub fn population(&self) -> Result<PopulationFrame> {
        gen_population(self.model, self.population_size, self.sigma0, self.d_total, self.seed)
    }

    pub fn covariate_indices(&self) -> Vec<usize> {
        match &self.covariates {
            Covariates::Active => self.model.active().to_vec(),
            Covariates::All => (0..self.d_total).collect(),
            Covariates::Explicit(v) => v.clone(),
        }
    }

    fn sample_rng(&self, rep: usize) -> ChaCha8Rng {
        stream_rng(
            self.seed,
            &[2, u64::from(self.model.id()), self.sigma0.to_bits(), self.sample_size as u64, rep as u64],
        )
    }
}

/// One replication's estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub total: f64,
    /// `V_hat` on the mean scale.
    pub variance: f64,
    pub variance_g: f64,
}

impl From<&EstimateReport> for Draw {
    fn from(r: &EstimateReport) -> Self {
        Self { total: r.total, variance: r.variance_ht, variance_g: r.variance_g }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub method: Method,
    pub bias: f64,
    /// Monte Carlo standard deviation of the estimates (divisor `reps - 1`).
    pub se: f64,
    /// `sqrt(mean(N^2 V_hat))`.
    pub est_se: f64,
    /// `mean((t_hat - t)^2)`.
    pub mse: f64,
    pub mse_ratio_vs_sbll: Option<f64>,
    pub mean_fit_seconds: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub model: Model,
    pub sigma0: f64,
    pub sample_size: usize,
    pub population_size: usize,
    pub true_total: f64,
    /// Replications in which every estimator succeeded.
    pub reps_used: usize,
    pub summaries: Vec<EstimatorSummary>,
    /// Per-estimator draws over the replications used, in replication order.
    pub draws: BTreeMap<Method, Vec<Draw>>,
}

impl CellResult {
    pub fn summary(&self, method: Method) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// `MSE(method) / MSE(SBLL)`.
    pub fn ratio(&self, method: Method) -> Option<f64> {
        self.summary(method).and_then(|s| s.mse_ratio_vs_sbll)
    }
}

type RepOutcome = Vec<std::result::Result<(Draw, f64), SbllError>>;

fn run_rep(config: &SimConfig, frame: &PopulationFrame, design: &SimpleRandomSampling, rep: usize) -> Result<RepOutcome> {
    let mut rng = config.sample_rng(rep);
    let sample = draw_srs(design, frame, &mut rng)?;
    Ok(config.estimators.iter().map(|&m| estimate(m, &sample, frame, &config.sbll, config.time_fits)).collect())
}

fn estimate(method: Method, sample: &SampleData, frame: &PopulationFrame, sbll: &SbllConfig, timed: bool) -> Result<(Draw, f64)> {
    let start = timed.then(Instant::now);
    let report = match method {
        Method::Ht => ht_report(sample)?,
        Method::Lreg => lreg_total(sample, frame)?,
        Method::Ls => {
            let spec = sbll.spline_spec(sample, frame)?;
            ls_total(sample, frame, &spec)?
        }
        Method::Sbll => estimate_sbll(sample, frame, sbll)?.1,
    };
    let secs = start.map_or(0.0, |t| t.elapsed().as_secs_f64());
    Ok((Draw::from(&report), secs))
}

/// Runs `reps` SRS replications from the cell's fixed population and
/// summarizes each requested estimator.
pub fn run_cell(config: &SimConfig) -> Result<CellResult> {
    config.validate()?;
    let population = config.population()?;
    let frame = population.select(&config.covariate_indices())?;
    let design = make_srs(config.population_size, config.sample_size)?;
    let truth = population.response_total().ok_or(SbllError::MissingResponse)?;

    let outcomes: Vec<RepOutcome> =
        (0..config.reps).into_par_iter().map(|rep| run_rep(config, &frame, &design, rep)).collect::<Result<_>>()?;

    let mut failures = vec![0; config.estimators.len()];
    let mut draws: BTreeMap<Method, Vec<Draw>> = config.estimators.iter().map(|&m| (m, Vec::new())).collect();
    let mut seconds = vec![0.0; config.estimators.len()];
    let mut reps_used = 0;
    for outcome in &outcomes {
        for (k, r) in outcome.iter().enumerate() {
            if r.is_err() {
                failures[k] += 1;
            }
        }
        if outcome.iter().all(|r| r.is_ok()) {
            reps_used += 1;
            for (k, r) in outcome.iter().enumerate() {
                let (draw, secs) = r.as_ref().expect("checked");
                draws.get_mut(&config.estimators[k]).expect("method present").push(*draw);
                seconds[k] += secs;
            }
        }
    }

    let big_n = config.population_size as f64;
    let mut summaries: Vec<EstimatorSummary> = config
        .estimators
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let d = &draws[&m];
            let reps = d.len() as f64;
            let mean = d.iter().map(|x| x.total).sum::<f64>() / reps;
            let var = if d.len() > 1 { d.iter().map(|x| (x.total - mean).powi(2)).sum::<f64>() / (reps - 1.0) } else { 0.0 };
            let mse = d.iter().map(|x| (x.total - truth).powi(2)).sum::<f64>() / reps;
            let est_var = d.iter().map(|x| big_n * big_n * x.variance).sum::<f64>() / reps;
            EstimatorSummary {
                method: m,
                bias: mean - truth,
                se: var.sqrt(),
                est_se: est_var.max(0.0).sqrt(),
                mse,
                mse_ratio_vs_sbll: None,
                mean_fit_seconds: (config.time_fits && m == Method::Sbll && reps > 0.0).then(|| seconds[k] / reps),
                failures: failures[k],
            }
        })
        .collect();
    if let Some(sbll_mse) = summaries.iter().find(|s| s.method == Method::Sbll).map(|s| s.mse) {
        for s in &mut summaries {
            s.mse_ratio_vs_sbll = Some(if s.method == Method::Sbll { 1.0 } else { s.mse / sbll_mse });
        }
    }
    Ok(CellResult {
        model: config.model,
        sigma0: config.sigma0,
        sample_size: config.sample_size,
        population_size: config.population_size,
        true_total: truth,
        reps_used,
        summaries,
        draws,
    })
}

/// Correct / underfit / overfit counts of a selection experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSummary {
    pub model: Model,
    pub sigma0: f64,
    pub sample_size: usize,
    pub method: SearchMethod,
    pub correct: usize,
    pub underfit: usize,
    pub overfit: usize,
    /// MSE of SBLL on the selected covariates over MSE of SBLL on the true
    /// covariates, over the same samples.
    pub mse_ratio_vs_true: f64,
    pub failures: usize,
    pub chosen: Vec<Vec<usize>>,
}

/// Selection over all generated covariates on `reps` samples, scoring the
/// chosen set against the model's active set.
pub fn run_selection_experiment(config: &SimConfig, method: SearchMethod, selection: &SelectionConfig) -> Result<SelectionSummary> {
    config.validate()?;
    let frame = config.population()?;
    let design = make_srs(config.population_size, config.sample_size)?;
    let truth = frame.response_total().ok_or(SbllError::MissingResponse)?;
    let candidates: Vec<usize> = (0..config.d_total).collect();
    let active = config.model.active();
    let true_frame = frame.select(active)?;

    type Outcome = std::result::Result<(Vec<usize>, f64, f64), SbllError>;
    let outcomes: Vec<Outcome> = (0..config.reps)
        .into_par_iter()
        .map(|rep| -> Result<Outcome> {
            let mut rng = config.sample_rng(rep);
            let sample = draw_srs(&design, &frame, &mut rng)?;
            Ok((|| {
                let result = select(&sample, &frame, &candidates, method, selection)?;
                let chosen_total = if result.chosen.is_empty() {
                    ht_report(&sample)?.total
                } else {
                    estimate_sbll(&sample, &frame.select(&result.chosen)?, &config.sbll)?.1.total
                };
                let true_total = estimate_sbll(&sample, &true_frame, &config.sbll)?.1.total;
                Ok((result.chosen, chosen_total, true_total))
            })())
        })
        .collect::<Result<_>>()?;

    let (mut correct, mut underfit, mut overfit, mut failures) = (0, 0, 0, 0);
    let (mut se_chosen, mut se_true) = (0.0, 0.0);
    let mut chosen_sets = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok((chosen, tc, tt)) => {
                if chosen == active {
                    correct += 1;
                } else if active.iter().all(|a| chosen.contains(a)) {
                    overfit += 1;
                } else {
                    underfit += 1;
                }
                se_chosen += (tc - truth).powi(2);
                se_true += (tt - truth).powi(2);
                chosen_sets.push(chosen);
            }
            Err(_) => failures += 1,
        }
    }
    Ok(SelectionSummary {
        model: config.model,
        sigma0: config.sigma0,
        sample_size: config.sample_size,
        method,
        correct,
        underfit,
        overfit,
        mse_ratio_vs_true: se_chosen / se_true,
        failures,
        chosen: chosen_sets,
    })
}

/// One CSV record of a cell summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub model: u32,
    pub sigma0: f64,
    pub n: usize,
    pub estimator: String,
    pub bias: f64,
    pub se: f64,
    pub est_se: f64,
    pub mse: f64,
    pub mse_ratio_vs_sbll: Option<f64>,
    pub mean_fit_seconds: Option<f64>,
    pub failures: usize,
}

pub fn csv_rows(results: &[CellResult]) -> Vec<CsvRow> {
    results
        .iter()
        .flat_map(|cell| {
            cell.summaries.iter().map(move |s| CsvRow {
                model: cell.model.id(),
                sigma0: cell.sigma0,
                n: cell.sample_size,
                estimator: s.method.label().to_string(),
                bias: s.bias,
                se: s.se,
                est_se: s.est_se,
                mse: s.mse,
                mse_ratio_vs_sbll: s.mse_ratio_vs_sbll,
                mean_fit_seconds: s.mean_fit_seconds,
                failures: s.failures,
            })
        })
        .collect()
}

/// Writes one row per (model, sigma0, n, estimator).
pub fn write_csv<W: io::Write>(results: &[CellResult], out: W) -> Result<()> {
    if results.is_empty() {
        return Err(SbllError::InvalidInput("no results to summarize".into()));
    }
    let mut writer = csv::Writer::from_writer(out);
    for row in csv_rows(results) {
        writer.serialize(row).map_err(|e| SbllError::InvalidInput(format!("csv write failed: {e}")))?;
    }
    writer.flush().map_err(|e| SbllError::InvalidInput(format!("csv write failed: {e}")))?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| SbllError::InvalidInput(format!("csv parse failed: {e}"))))
        .collect()
}

/// Aligned text table: MSE ratios against SBLL and bias / SE / Est.SE per
/// estimator.
pub fn format_table(results: &[CellResult]) -> Result<String> {
    if results.is_empty() {
        return Err(SbllError::InvalidInput("no results to summarize".into()));
    }
    let mut out = String::new();
    writeln!(out, "{:>5} {:>6} {:>5} {:>9} {:>10} {:>10} {:>10} {:>12} {:>9}", "model", "sigma0", "n", "estimator", "bias", "se", "est_se", "mse", "ratio").ok();
    for row in csv_rows(results) {
        let ratio = row.mse_ratio_vs_sbll.map_or_else(|| "-".to_string(), |r| format!("{r:.3}"));
        writeln!(
            out,
            "{:>5} {:>6} {:>5} {:>9} {:>10.4} {:>10.4} {:>10.4} {:>12.4} {:>9}",
            row.model, row.sigma0, row.n, row.estimator, row.bias, row.se, row.est_se, row.mse, ratio
        )
        .ok();
    }
    Ok(out)
}

pub fn format_selection_table(results: &[SelectionSummary]) -> Result<String> {
    if results.is_empty() {
        return Err(SbllError::InvalidInput("no results to summarize".into()));
    }
    let mut out = String::new();
    writeln!(out, "{:>5} {:>6} {:>5} {:>9} {:>4} {:>4} {:>4} {:>10}", "model", "sigma0", "n", "method", "C", "U", "O", "mse_ratio").ok();
    for r in results {
        writeln!(
            out,
            "{:>5} {:>6} {:>5} {:>9} {:>4} {:>4} {:>4} {:>10.4}",
            r.model.id(),
            r.sigma0,
            r.sample_size,
            r.method,
            r.correct,
            r.underfit,
            r.overfit,
            r.mse_ratio_vs_true
        )
        .ok();
    }
    Ok(out)
}

/// Smooth additive population with `d` uniform covariates of decreasing
/// influence, used for timing runs.
pub fn uniform_population(population_size: usize, d: usize, seed: u64) -> Result<PopulationFrame> {
    use std::f64::consts::PI;
    let mut rng = stream_rng(seed, &[3, population_size as u64, d as u64]);
    let columns: Vec<Vec<f64>> = (0..d).map(|_| (0..population_size).map(|_| rng.random::<f64>()).collect()).collect();
    let y: Vec<f64> = (0..population_size)
        .map(|i| {
            columns.iter().enumerate().map(|(a, c)| (2.0 * PI * (c[i] + a as f64 / d as f64)).sin() / (1.0 + a as f64)).sum::<f64>()
                + 0.1 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let names = (1..=d).map(|k| format!("x{k}")).collect();
    PopulationFrame::new(columns, Some(y), names)
}
