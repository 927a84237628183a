use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sbll_core::baselines::{ht_fit, lreg_fit, ls_fit};
use sbll_core::montecarlo::{
    format_selection_table, format_table, run_cell, run_selection_experiment, uniform_population, write_csv, Covariates, Model,
    SelectionSummary, SimConfig,
};
use sbll_core::sbll::Method;
use sbll_core::selection::{select as run_select, KnotMode, SearchMethod, SelectionConfig};
use sbll_core::{draw_srs_seeded, estimate_sbll, ht_total, make_srs, BandwidthRule, EstimateReport, PopulationFrame, SampleData, SbllConfig};

use crate::error::CliError;
use crate::input::{read_population, read_sample, Sample};
use crate::manifest::RunManifest;
use crate::Tuning;

impl Tuning {
    fn config(&self) -> Result<SbllConfig, CliError> {
        let config = SbllConfig {
            knot_constant: self.knot_constant,
            bandwidth: self.bandwidth_scale.map_or(BandwidthRule::PlugIn, BandwidthRule::Scaled),
        };
        config.validate()?;
        Ok(config)
    }

    fn record(&self, manifest: &mut RunManifest) {
        manifest.set("knot_constant", self.knot_constant);
        match self.bandwidth_scale {
            Some(s) => manifest.set("bandwidth", format!("scaled:{s}")),
            None => manifest.set("bandwidth", "plugin"),
        }
    }
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn print_report(report: &EstimateReport) {
    println!("estimator  {}", report.method);
    println!("total      {:.6}", report.total);
    println!("se         {:.6}", report.se_total());
    println!("se_g       {:.6}", report.se_total_g());
    println!("ht_total   {:.6}", report.ht_total);
    println!("n          {}", report.n);
    println!("N          {}", report.population_size);
}

/// Per-unit g-weights of `method` on the sample, with the report.
fn fit_method(method: Method, sample: &SampleData, frame: &PopulationFrame, config: &SbllConfig) -> Result<(EstimateReport, Vec<f64>), CliError> {
    let (report, g) = match method {
        Method::Ht => {
            let fit = ht_fit(sample);
            (fit.report(sample)?, fit.g_weights)
        }
        Method::Lreg => {
            let fit = lreg_fit(sample, frame)?;
            (fit.report(sample)?, fit.g_weights)
        }
        Method::Ls => {
            let spec = config.spline_spec(sample, frame)?;
            let fit = ls_fit(sample, frame, &spec)?;
            (fit.report(sample)?, fit.g_weights)
        }
        Method::Sbll => {
            let (fit, report) = estimate_sbll(sample, frame, config)?;
            let d = fit.diagnostics();
            if d.expanded_windows + d.local_constant_fits > 0 || d.rank_deficient_pilot {
                eprintln!(
                    "sbll: note: {} widened windows, {} local constant fits, rank-deficient pilot: {}",
                    d.expanded_windows, d.local_constant_fits, d.rank_deficient_pilot
                );
            }
            (report, fit.g_weights().to_vec())
        }
    };
    if !report.total.is_finite() {
        return Err(CliError::Numerical(format!("{method} produced a non-finite total")));
    }
    Ok((report, g))
}

fn write_weights(path: &Path, sample: &Sample, g: &[f64]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    writer.write_record(["id", "pi", "g_weight", "design_weight", "final_weight"]).map_err(|e| write_err(path, e))?;
    for ((id, pi), g) in sample.ids.iter().zip(sample.data.inclusion_probabilities()).zip(g) {
        writer
            .write_record([id.clone(), pi.to_string(), g.to_string(), (1.0 / pi).to_string(), (g / pi).to_string()])
            .map_err(|e| write_err(path, e))?;
    }
    writer.flush().map_err(|e| write_err(path, e))
}

pub struct EstimateArgs {
    pub population: PathBuf,
    pub sample: PathBuf,
    pub vars: Option<Vec<String>>,
    pub estimator: String,
    pub weights_out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub seed: u64,
    pub tuning: Tuning,
    pub threads: usize,
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let method = Method::parse(&args.estimator)
        .ok_or_else(|| CliError::Config(format!("unknown estimator '{}'; expected ht, lreg, ls or sbll", args.estimator)))?;
    let config = args.tuning.config()?;
    let population = read_population(&args.population, args.vars.as_deref())?;
    let sample = read_sample(&args.sample, &population)?;
    let (report, g) = fit_method(method, &sample.data, &population.frame, &config)?;
    print_report(&report);
    if let Some(path) = &args.weights_out {
        write_weights(path, &sample, &g)?;
    }
    if let Some(path) = &args.manifest {
        let mut m = RunManifest::new("estimate");
        m.set("estimator", method);
        m.set("vars", population.frame.names().join(","));
        m.set("design", "srs");
        args.tuning.record(&mut m);
        m.set("seed", args.seed);
        m.set("threads", args.threads);
        m.add_input("population", &args.population)?;
        m.add_input("sample", &args.sample)?;
        if let Some(w) = &args.weights_out {
            m.set("weights_out", w.display());
        }
        m.set("total", report.total);
        m.set("elapsed_seconds", start.elapsed().as_secs_f64());
        m.write(path)?;
    }
    Ok(())
}

pub struct SelectArgs {
    pub population: PathBuf,
    pub sample: PathBuf,
    pub method: String,
    pub candidates: Option<Vec<String>>,
    pub per_subset_knots: bool,
    pub manifest: Option<PathBuf>,
    pub seed: u64,
    pub tuning: Tuning,
    pub threads: usize,
}

fn parse_method(s: &str) -> Result<SearchMethod, CliError> {
    SearchMethod::parse(s).ok_or_else(|| CliError::Config(format!("unknown search method '{s}'; expected forward or backward")))
}

fn selection_config(sbll: SbllConfig, per_subset_knots: bool) -> SelectionConfig {
    let knot_mode = if per_subset_knots { KnotMode::PerSubset } else { KnotMode::Candidates };
    SelectionConfig { sbll, knot_mode }
}

fn subset_label(frame: &PopulationFrame, subset: &[usize]) -> String {
    if subset.is_empty() {
        return "(none)".into();
    }
    subset.iter().map(|&a| frame.names()[a].as_str()).collect::<Vec<_>>().join(",")
}

pub fn select(args: SelectArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let method = parse_method(&args.method)?;
    let sbll = args.tuning.config()?;
    let population = read_population(&args.population, args.candidates.as_deref())?;
    let sample = read_sample(&args.sample, &population)?;
    let frame = &population.frame;
    let candidates: Vec<usize> = (0..frame.dim()).collect();
    let selection = selection_config(sbll, args.per_subset_knots);
    let result = run_select(&sample.data, frame, &candidates, method, &selection)?;

    println!("method     {method}");
    println!("d_max      {}", result.d_max);
    println!("chosen     {}", subset_label(frame, &result.chosen));
    println!();
    println!("{:>4}  {:>14}  subset", "step", "bic");
    for (k, (subset, bic)) in result.path.iter().enumerate() {
        println!("{k:>4}  {bic:>14.6}  {}", subset_label(frame, subset));
    }
    println!();
    let report = if result.chosen.is_empty() {
        fit_method(Method::Ht, &sample.data, frame, &sbll)?.0
    } else {
        fit_method(Method::Sbll, &sample.data, &frame.select(&result.chosen)?, &sbll)?.0
    };
    print_report(&report);

    if let Some(path) = &args.manifest {
        let mut m = RunManifest::new("select");
        m.set("method", method);
        m.set("candidates", frame.names().join(","));
        m.set("per_subset_knots", args.per_subset_knots);
        args.tuning.record(&mut m);
        m.set("seed", args.seed);
        m.set("threads", args.threads);
        m.add_input("population", &args.population)?;
        m.add_input("sample", &args.sample)?;
        m.set("chosen", subset_label(frame, &result.chosen));
        m.set("total", report.total);
        m.set("elapsed_seconds", start.elapsed().as_secs_f64());
        m.write(path)?;
    }
    Ok(())
}

pub struct SimulateArgs {
    pub models: Vec<u32>,
    pub sizes: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub population_size: usize,
    pub estimators: Vec<String>,
    pub covariates: String,
    pub experiment: String,
    pub methods: Vec<String>,
    pub per_subset_knots: bool,
    pub time_fits: bool,
    pub out_dir: PathBuf,
    pub tuning: Tuning,
    pub threads: usize,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn write_selection_csv(path: &Path, results: &[SelectionSummary]) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| write_err(path, e))?;
    writer
        .write_record(["model", "sigma0", "n", "method", "correct", "underfit", "overfit", "mse_ratio_vs_true", "failures"])
        .map_err(|e| write_err(path, e))?;
    for r in results {
        writer
            .write_record([
                r.model.id().to_string(),
                r.sigma0.to_string(),
                r.sample_size.to_string(),
                r.method.to_string(),
                r.correct.to_string(),
                r.underfit.to_string(),
                r.overfit.to_string(),
                r.mse_ratio_vs_true.to_string(),
                r.failures.to_string(),
            ])
            .map_err(|e| write_err(path, e))?;
    }
    writer.flush().map_err(|e| write_err(path, e))
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let start = Instant::now();
    let models = args.models.iter().map(|&id| Model::from_id(id)).collect::<Result<Vec<_>, _>>()?;
    let sbll = args.tuning.config()?;
    let estimators = args
        .estimators
        .iter()
        .map(|s| Method::parse(s).ok_or_else(|| CliError::Config(format!("unknown estimator '{s}'"))))
        .collect::<Result<Vec<_>, _>>()?;
    let covariates = match args.covariates.as_str() {
        "active" => Covariates::Active,
        "all" => Covariates::All,
        other => return Err(CliError::Config(format!("unknown covariate set '{other}'; expected active or all"))),
    };
    if args.sizes.is_empty() || args.sigmas.is_empty() || models.is_empty() {
        return Err(CliError::Config("need at least one model, sample size and noise level".into()));
    }
    let cell = |model: Model, n: usize, sigma0: f64| -> Result<SimConfig, CliError> {
        if !(sigma0 >= 0.0 && sigma0.is_finite()) {
            return Err(CliError::Config(format!("sigma0 must be non-negative, got {sigma0}")));
        }
        let mut c = SimConfig::new(model, n, sigma0, args.reps, args.seed);
        c.population_size = args.population_size;
        c.estimators = estimators.clone();
        c.sbll = sbll;
        c.covariates = covariates.clone();
        c.time_fits = args.time_fits;
        c.validate()?;
        Ok(c)
    };
    fs::create_dir_all(&args.out_dir).map_err(|e| write_err(&args.out_dir, e))?;
    let mut manifest = RunManifest::new("simulate");
    manifest.set("experiment", &args.experiment);
    manifest.set("models", join(&args.models));
    manifest.set("n", join(&args.sizes));
    manifest.set("sigma0", join(&args.sigmas));
    manifest.set("reps", args.reps);
    manifest.set("seed", args.seed);
    manifest.set("population_size", args.population_size);
    args.tuning.record(&mut manifest);
    manifest.set("threads", args.threads);

    let output = match args.experiment.as_str() {
        "estimation" => {
            manifest.set("estimators", join(&estimators));
            manifest.set("covariates", &args.covariates);
            manifest.set("time_fits", args.time_fits);
            let mut results = Vec::new();
            for &model in &models {
                for &sigma0 in &args.sigmas {
                    for &n in &args.sizes {
                        results.push(run_cell(&cell(model, n, sigma0)?)?);
                    }
                }
            }
            let path = args.out_dir.join("cells.csv");
            let file = fs::File::create(&path).map_err(|e| write_err(&path, e))?;
            write_csv(&results, std::io::BufWriter::new(file))?;
            print!("{}", format_table(&results)?);
            path
        }
        "selection" => {
            let methods = args.methods.iter().map(|s| parse_method(s)).collect::<Result<Vec<_>, _>>()?;
            manifest.set("methods", join(&methods));
            manifest.set("per_subset_knots", args.per_subset_knots);
            let mut results = Vec::new();
            for &model in &models {
                for &sigma0 in &args.sigmas {
                    for &n in &args.sizes {
                        let config = cell(model, n, sigma0)?;
                        for &method in &methods {
                            results.push(run_selection_experiment(&config, method, &selection_config(sbll, args.per_subset_knots))?);
                        }
                    }
                }
            }
            let path = args.out_dir.join("selection.csv");
            write_selection_csv(&path, &results)?;
            print!("{}", format_selection_table(&results)?);
            path
        }
        other => return Err(CliError::Config(format!("unknown experiment '{other}'; expected estimation or selection"))),
    };
    manifest.add_input("output", &output)?;
    manifest.set("elapsed_seconds", start.elapsed().as_secs_f64());
    manifest.write(&args.out_dir.join("manifest.txt"))?;
    std::io::stdout().flush()?;
    Ok(())
}

pub fn bench(d: usize, n: usize, population_size: usize, fits: usize, seed: u64, tuning: &Tuning) -> Result<(), CliError> {
    if d == 0 || fits == 0 {
        return Err(CliError::Config("--d and --fits must be positive".into()));
    }
    let config = tuning.config()?;
    let frame = uniform_population(population_size, d, seed)?;
    let design = make_srs(population_size, n)?;
    let mut times = Vec::with_capacity(fits);
    let mut checksum = 0.0;
    for k in 0..fits {
        let sample = draw_srs_seeded(&design, &frame, seed.wrapping_add(k as u64))?;
        let t0 = Instant::now();
        let (_, report) = estimate_sbll(&sample, &frame, &config)?;
        times.push(t0.elapsed().as_secs_f64());
        checksum += report.total - ht_total(&sample)?;
    }
    times.sort_by(f64::total_cmp);
    let mean = times.iter().sum::<f64>() / fits as f64;
    println!("d          {d}");
    println!("n          {n}");
    println!("N          {population_size}");
    println!("fits       {fits}");
    println!("median_s   {:.6}", times[fits / 2]);
    println!("mean_s     {mean:.6}");
    println!("max_s      {:.6}", times[fits - 1]);
    println!("checksum   {checksum:.6}");
    Ok(())
}
