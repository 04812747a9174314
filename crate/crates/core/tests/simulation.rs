use orbitcal_core::simulation::{
    evaluate_errors, mix_seed, reference_intervals, run_trials, sample_scenario, simulate_tracks, summarize,
};
use orbitcal_core::{run_montecarlo, run_pipeline, MonteCarloConfig, PipelineOptions, ScenarioDistribution};

#[test]
fn slant_is_uniform_outside_the_excluded_band() {
    let d = ScenarioDistribution::default();
    let bins = 20;
    let mut counts = vec![0usize; bins];
    let n = 10_000;
    for k in 0..n {
        let s = sample_scenario(&d, mix_seed(11, k, 1)).unwrap().parameters.slant;
        assert!(s.abs() >= 0.2 && s.abs() <= 5.0);
        // fold both signs onto 20 bins of equal width
        let m = ((s.abs() - 0.2) / 4.8 * (bins / 2) as f64).min((bins / 2 - 1) as f64) as usize;
        counts[if s < 0.0 { m } else { bins / 2 + m }] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 19 degrees of freedom
    assert!(chi2 < 36.19, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn noise_has_the_requested_spread() {
    let d = ScenarioDistribution::default();
    let mut diffs = Vec::new();
    let mut k = 0;
    while diffs.len() < 100_000 {
        let sc = sample_scenario(&d, mix_seed(5, k, 1)).unwrap();
        let clean = simulate_tracks(&sc, 120, 0.0, 0).unwrap();
        let noisy = simulate_tracks(&sc, 120, 0.5, mix_seed(5, k, 2)).unwrap();
        for (c, n) in clean.iter().zip(&noisy) {
            diffs.extend(c.h.iter().zip(&n.h).map(|(a, b)| b - a));
            diffs.extend(c.v.iter().zip(&n.v).map(|(a, b)| b - a));
        }
        k += 1;
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sd = (diffs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    assert!((sd - 0.5).abs() < 0.01, "sd = {sd}");
    assert!(mean.abs() < 0.01);
}

#[test]
fn noiseless_trials_are_recovered() {
    let d = ScenarioDistribution { noise_sigma: 0.0, ..ScenarioDistribution::default() };
    for k in 0..20 {
        let sc = sample_scenario(&d, mix_seed(3, k, 1)).unwrap();
        let tracks = simulate_tracks(&sc, 120, 0.0, 0).unwrap();
        let out = run_pipeline(&tracks, &PipelineOptions::default()).unwrap();
        assert!(!out.resolution.tilt_degenerate);
        let e = evaluate_errors(&sc.geometry, &out.geometry, 1.0).unwrap();
        assert!(e.max_abs() < 1e-5, "trial {k}: {e:?}");
    }
}

#[test]
fn noiseless_campaign_has_negligible_intervals() {
    let mut cfg = MonteCarloConfig { n_trials: 100, seed: 9, ..MonteCarloConfig::default() };
    cfg.distribution.noise_sigma = 0.0;
    let report = run_montecarlo(&cfg).unwrap();
    assert_eq!(report.n_failed, 0);
    for (i, r) in report.intervals.iter().zip(reference_intervals(4)) {
        assert!(i.half_width < 1e-4 * r, "{i:?}");
    }
}

#[test]
fn zero_slant_is_flagged() {
    let d = ScenarioDistribution { noise_sigma: 0.0, ..ScenarioDistribution::default() }.zero_slant();
    for k in 0..20 {
        let sc = sample_scenario(&d, mix_seed(4, k, 1)).unwrap();
        assert!(sc.parameters.slant.abs() < 0.2);
        let tracks = simulate_tracks(&sc, 120, 0.0, 0).unwrap();
        let out = run_pipeline(&tracks, &PipelineOptions::default()).unwrap();
        assert!(out.resolution.tilt_degenerate, "trial {k}, slant {}", sc.parameters.slant);
        assert!(out.result.warnings.iter().any(|w| w.contains("tilt not determinable")));
        // slant and shifts do not depend on the tilt choice
        let e = evaluate_errors(&sc.geometry, &out.geometry, 1.0).unwrap();
        assert!(e.slant.abs() < 1e-8 && e.h_shift.abs() < 1e-6 && e.v_shift.abs() < 1e-6, "{e:?}");
        assert!(e.rotation.abs() < 1e-3, "{e:?}");
    }
}

#[test]
fn campaigns_do_not_depend_on_thread_count() {
    let mut cfg = MonteCarloConfig { n_trials: 120, seed: 1, threads: Some(1), ..MonteCarloConfig::default() };
    let one = run_trials(&cfg).unwrap();
    cfg.threads = Some(3);
    let three = run_trials(&cfg).unwrap();
    assert_eq!(one, three);
    assert_eq!(summarize(&cfg, one), summarize(&cfg, three));
}
