use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sbll_core::montecarlo::{gen_population, Model};
use sbll_core::{draw_srs_seeded, make_srs, PopulationFrame};
use tempfile::TempDir;

fn sbll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sbll")).args(args).output().expect("binary runs")
}

fn stdout_value(out: &Output, key: &str) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .find_map(|l| l.strip_prefix(key).filter(|rest| rest.starts_with(' ')).map(|rest| rest.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no '{key}' in output:\n{text}"))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes the frame's covariates and a sample of `n` responses; returns the
/// two paths.
fn write_inputs(dir: &Path, frame: &PopulationFrame, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let pop = dir.join("population.csv");
    let mut w = csv::Writer::from_path(&pop).unwrap();
    let mut header = vec!["id".to_string()];
    header.extend(frame.names().iter().cloned());
    w.write_record(&header).unwrap();
    for i in 0..frame.len() {
        let mut row = vec![format!("u{i}")];
        row.extend((0..frame.dim()).map(|a| frame.column(a)[i].to_string()));
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();

    let sample_path = dir.join("sample.csv");
    let mut w = csv::Writer::from_path(&sample_path).unwrap();
    w.write_record(["id", "y"]).unwrap();
    let y = frame.responses().unwrap();
    let indices: Vec<usize> = if n == frame.len() {
        (0..n).collect()
    } else {
        draw_srs_seeded(&make_srs(frame.len(), n).unwrap(), frame, seed).unwrap().indices().to_vec()
    };
    for i in indices {
        w.write_record([format!("u{i}"), y[i].to_string()]).unwrap();
    }
    w.flush().unwrap();
    (pop, sample_path)
}

fn model_population(model: Model, size: usize) -> PopulationFrame {
    gen_population(model, size, 0.1, 10, 11).unwrap()
}

#[test]
fn weights_file_is_calibrated_and_consistent() {
    let dir = TempDir::new().unwrap();
    let frame = model_population(Model::M1, 500).select(&[2, 5]).unwrap();
    let (pop, sample) = write_inputs(dir.path(), &frame, 80, 3);
    let weights = dir.path().join("w.csv");
    let manifest = dir.path().join("run.manifest");
    let out = sbll(&[
        "estimate",
        path_str(&pop),
        path_str(&sample),
        "--weights-out",
        path_str(&weights),
        "--manifest",
        path_str(&manifest),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let total = stdout_value(&out, "total");

    let lookup: std::collections::HashMap<String, usize> = (0..frame.len()).map(|i| (format!("u{i}"), i)).collect();
    let sample_y: std::collections::HashMap<String, f64> = csv::Reader::from_path(&sample)
        .unwrap()
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].parse().unwrap())
        })
        .collect();
    let mut x_totals = [0.0; 2];
    let mut y_total = 0.0;
    let mut count = 0.0;
    for record in csv::Reader::from_path(&weights).unwrap().records() {
        let r = record.unwrap();
        let pi: f64 = r[1].parse().unwrap();
        let g: f64 = r[2].parse().unwrap();
        let design: f64 = r[3].parse().unwrap();
        let fin: f64 = r[4].parse().unwrap();
        assert!((fin - g / pi).abs() <= 1e-12 * fin.abs().max(1.0));
        assert!((design - 1.0 / pi).abs() <= 1e-12 * design);
        let i = lookup[&r[0]];
        for (a, t) in x_totals.iter_mut().enumerate() {
            *t += fin * frame.column(a)[i];
        }
        y_total += fin * sample_y[&r[0]];
        count += fin;
    }
    for (a, t) in x_totals.iter().enumerate() {
        assert!(((t - frame.column_total(a)) / frame.column_total(a)).abs() < 1e-8);
    }
    assert!((count - 500.0).abs() < 1e-7);
    assert!(((y_total - total) / total).abs() < 1e-6);

    let text = fs::read_to_string(&manifest).unwrap();
    let pop_digest = text.lines().find_map(|l| l.strip_prefix("population.sha256=")).unwrap();
    assert_eq!(pop_digest.len(), 64);
    assert!(text.contains("command=estimate\n"));
    assert!(text.contains("bandwidth=plugin\n"));
}

#[test]
fn census_returns_the_column_sum() {
    let dir = TempDir::new().unwrap();
    let frame = model_population(Model::M3, 60).select(&[1, 4, 7]).unwrap();
    let (pop, sample) = write_inputs(dir.path(), &frame, 60, 0);
    let truth = frame.response_total().unwrap();
    for est in ["ht", "lreg", "ls", "sbll"] {
        let out = sbll(&["estimate", path_str(&pop), path_str(&sample), "--estimator", est]);
        assert!(out.status.success(), "{est}: {}", String::from_utf8_lossy(&out.stderr));
        assert!((stdout_value(&out, "total") - truth).abs() < 1e-4 * truth.abs().max(1.0), "{est}");
    }
}

#[test]
fn ht_ignores_covariates() {
    let dir = TempDir::new().unwrap();
    let frame = model_population(Model::M1, 300);
    let (pop, sample) = write_inputs(dir.path(), &frame, 40, 9);
    let a = sbll(&["estimate", path_str(&pop), path_str(&sample), "--estimator", "ht", "--vars", "x1"]);
    let b = sbll(&["estimate", path_str(&pop), path_str(&sample), "--estimator", "ht", "--vars", "x4,x9"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn input_errors_name_the_location() {
    let dir = TempDir::new().unwrap();
    let pop = dir.path().join("p.csv");
    fs::write(&pop, "id,x1\na,0.1\nb,0.2\nc,oops\n").unwrap();
    let sample = dir.path().join("s.csv");
    fs::write(&sample, "id,y\na,1\n").unwrap();
    let out = sbll(&["estimate", path_str(&pop), path_str(&sample)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":4:") && err.contains("x1") && err.contains("oops"), "{err}");

    fs::write(&pop, "id,x1\na,0.1\nb,0.2\nc,0.3\n").unwrap();
    fs::write(&sample, "id,y\na,1\nzz,2\n").unwrap();
    let out = sbll(&["estimate", path_str(&pop), path_str(&sample)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":3:") && err.contains("'zz'"), "{err}");
}

#[test]
fn too_many_covariates_is_a_configuration_error() {
    let dir = TempDir::new().unwrap();
    let frame = model_population(Model::M4, 200);
    let (pop, sample) = write_inputs(dir.path(), &frame, 10, 1);
    let out = sbll(&["estimate", path_str(&pop), path_str(&sample)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--vars"));
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str, threads: &str| {
        let out_dir = dir.path().join(name);
        let out = sbll(&[
            "--threads",
            threads,
            "simulate",
            "--model",
            "1",
            "--n",
            "100",
            "--sigma0",
            "0.1",
            "--reps",
            "20",
            "--seed",
            "5",
            "--out-dir",
            path_str(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(out_dir.join("cells.csv")).unwrap(), fs::read_to_string(out_dir.join("manifest.txt")).unwrap())
    };
    let (a, manifest) = run("a", "1");
    let (b, _) = run("b", "1");
    let (c, _) = run("c", "2");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 5);
    for est in ["HT", "LREG", "LS", "SBLL"] {
        assert!(text.lines().any(|l| l.split(',').nth(3) == Some(est)), "{est} missing:\n{text}");
    }
    assert!(manifest.contains("seed=5\n") && manifest.contains("output.sha256="));
}

#[test]
fn invalid_model_exits_with_configuration_code() {
    let dir = TempDir::new().unwrap();
    let out = sbll(&["simulate", "--model", "7", "--reps", "2", "--out-dir", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn select_single_candidate_compares_against_empty_model() {
    let dir = TempDir::new().unwrap();
    let frame = model_population(Model::M1, 400);
    let (pop, sample) = write_inputs(dir.path(), &frame, 100, 2);
    let out = sbll(&["select", path_str(&pop), path_str(&sample), "--candidates", "x3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let steps: Vec<&str> = text.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).collect();
    assert_eq!(steps.len(), 2, "{text}");
    assert!(steps[0].ends_with("(none)") && steps[1].ends_with("x3"));
}

#[test]
fn select_recovers_model_one_covariates() {
    let dir = TempDir::new().unwrap();
    let frame = model_population(Model::M1, 1000);
    let (pop, sample) = write_inputs(dir.path(), &frame, 200, 8);
    for method in ["forward", "backward"] {
        let out = sbll(&["select", path_str(&pop), path_str(&sample), "--method", method]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.lines().any(|l| l == "chosen     x3,x6"), "{method}:\n{text}");
        let again = sbll(&["select", path_str(&pop), path_str(&sample), "--method", method]);
        assert_eq!(out.stdout, again.stdout);
    }
}
