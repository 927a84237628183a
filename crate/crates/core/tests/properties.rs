use proptest::prelude::*;
use sbll_core::{draw_srs_seeded, make_srs, sbll_fit, sbll_fit_with_rule, sbll_total, BandwidthRule, PopulationFrame, SbllConfig};

fn population(size: usize, d: usize, freq: f64, seed: u64) -> PopulationFrame {
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..size).map(|i| ((i as u64 * (2 * a as u64 + 7) + seed) % size as u64) as f64 / size as f64).collect())
        .collect();
    let y = (0..size).map(|i| cols.iter().enumerate().map(|(a, c)| (freq * c[i] + a as f64).sin()).sum::<f64>() + 0.01 * (i % 7) as f64).collect();
    let names = (1..=d).map(|k| format!("x{k}")).collect();
    PopulationFrame::new(cols, Some(y), names).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn g_weights_calibrate_covariates(d in 1usize..=3, n in 30usize..120, freq in 0.5f64..8.0, seed in 0u64..1000) {
        let frame = population(400, d, freq, seed);
        let sample = draw_srs_seeded(&make_srs(400, n).unwrap(), &frame, seed).unwrap();
        let spec = SbllConfig::default().spline_spec(&sample, &frame).unwrap();
        let fit = sbll_fit_with_rule(&sample, &frame, &spec, BandwidthRule::PlugIn).unwrap();
        let pi = sample.inclusion_probabilities();
        for a in 0..d {
            let est: f64 = sample.indices().iter().zip(fit.g_weights()).zip(&pi).map(|((&i, g), p)| g * frame.column(a)[i] / p).sum();
            prop_assert!(((est - frame.column_total(a)) / frame.column_total(a)).abs() < 1e-8);
        }
        let est: f64 = fit.g_weights().iter().zip(&pi).map(|(g, p)| g / p).sum();
        prop_assert!((est - 400.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_bandwidth_estimator_is_linear_in_y(n in 30usize..100, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let frame = population(300, 2, 4.0, seed);
        let sample = draw_srs_seeded(&make_srs(300, n).unwrap(), &frame, seed).unwrap();
        let spec = SbllConfig::default().spline_spec(&sample, &frame).unwrap();
        let kernel = sbll_fit_with_rule(&sample, &frame, &spec, BandwidthRule::PlugIn).unwrap().kernel().clone();
        let y1 = sample.responses().to_vec();
        let y2: Vec<f64> = sample.indices().iter().map(|&i| frame.column(0)[i].powi(2) - frame.column(1)[i]).collect();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        let total = |y: Vec<f64>| {
            let s = sample.with_responses(y).unwrap();
            sbll_total(&sbll_fit(&s, &frame, &spec, &kernel).unwrap(), &s)
        };
        let t1 = total(y1);
        let t2 = total(y2);
        let t = total(mix);
        prop_assert!((t - (a * t1 + b * t2)).abs() < 1e-8 * (1.0 + t.abs() + t1.abs() + t2.abs()));
    }
}
