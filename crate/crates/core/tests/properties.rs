use proptest::prelude::*;
use wss_core::adapt::{run_branch, Region};
use wss_core::multiscale::{calibrate_tau, calibrate_tau_with, w_stat, Calibration};
use wss_core::simulation::{
    make_dataset, mrise_study_with, Noise, Preset, StudyConfig, TestFunction,
};
use wss_core::variants::{
    chisq_cdf, chisq_quantile, clean_outliers, scale_fit, BandCache, ScaleRegionSpec,
};
use wss_core::*;

fn weights_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..6.0, n)
        .prop_map(|e| e.into_iter().map(|e| 10f64.powf(e)).collect())
}

fn data_strategy() -> impl Strategy<Value = Vec<f64>> {
    (5usize..60).prop_flat_map(|n| prop::collection::vec(-10.0f64..10.0, n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solver_is_deterministic((y, w) in (5usize..40).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), weights_strategy(n)))) {
        let s = Sample::equispaced(y).unwrap();
        let w = WeightVector::new(w).unwrap();
        let a = solve_weighted(&s, &w).unwrap();
        let b = solve_weighted(&s, &w).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn affine_trend_passes_through_the_smoother(
        (y, w) in (5usize..40).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), weights_strategy(n))),
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let s = Sample::equispaced(y.clone()).unwrap();
        let w = WeightVector::new(w).unwrap();
        let base = solve_weighted(&s, &w).unwrap();
        let shifted: Vec<f64> = y.iter().zip(s.t()).map(|(y, t)| y + a + b * t).collect();
        let moved = solve_weighted(&s.with_y(shifted).unwrap(), &w).unwrap();
        for ((g0, g1), t) in base.values.iter().zip(&moved.values).zip(s.t()) {
            prop_assert!((g1 - g0 - a - b * t).abs() < 1e-7 * (1.0 + a.abs() + b.abs()));
        }
        let scale = base.second_derivs.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
        for (c0, c1) in base.second_derivs.iter().zip(&moved.second_derivs) {
            prop_assert!((c1 - c0).abs() < 1e-6 * scale);
        }
    }

    #[test]
    fn w_is_translation_invariant(y in data_strategy(), c in -100.0f64..100.0) {
        let n = y.len();
        let g: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let yc: Vec<f64> = y.iter().map(|v| v + c).collect();
        let gc: Vec<f64> = g.iter().map(|v| v + c).collect();
        let iv = Interval::new(1, n);
        let a = w_stat(&y, &g, iv).unwrap();
        let b = w_stat(&yc, &gc, iv).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + c.abs()) * n as f64);
    }

    #[test]
    fn sigma_hat_is_scale_and_shift_equivariant(y in data_strategy(), a in -5.0f64..5.0, b in -50.0f64..50.0) {
        let s = sigma_hat(&y).unwrap();
        let z: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let sz = sigma_hat(&z).unwrap();
        prop_assert!((sz - a.abs() * s).abs() < 1e-9 * (1.0 + a.abs() * s + b.abs()));
    }

    #[test]
    fn cleaning_commutes_with_shifts(mut y in data_strategy(), c in -1000.0f64..1000.0, spikes in prop::collection::vec((0usize..60, 20.0f64..200.0), 0..4)) {
        let n = y.len();
        for (i, h) in spikes {
            y[i % n] += h;
        }
        // dyadic shift keeps the arithmetic exact
        let c = (c * 64.0).round() / 64.0;
        let s = Sample::equispaced(y.clone()).unwrap();
        let a = clean_outliers(&s, 1.0).unwrap();
        let b = clean_outliers(&s.with_y(y.iter().map(|v| v + c).collect()).unwrap(), 1.0).unwrap();
        prop_assert_eq!(&a.replaced, &b.replaced);
        for (u, v) in a.sample.y().iter().zip(b.sample.y()) {
            prop_assert!((v - u - c).abs() < 1e-9 * (1.0 + c.abs()));
        }
        let again = clean_outliers(&a.sample, 1.0).unwrap();
        prop_assert_eq!(again.sample, a.sample);
    }

    #[test]
    fn isolated_spikes_are_cleaned_in_one_pass(base in prop::collection::vec(-0.1f64..0.1, 30..80), at in prop::collection::vec(0usize..80, 1..6)) {
        let n = base.len();
        let mut y = base.clone();
        let mut used: Vec<usize> = Vec::new();
        for i in at {
            let i = i % n;
            // keep spikes at least three apart: at most two per window of five
            if used.iter().all(|&j| i.abs_diff(j) >= 3) {
                used.push(i);
                y[i] += 50.0;
            }
        }
        let s = Sample::equispaced(y).unwrap();
        let once = wss_core::variants::clean_outliers_once(&s, 0.1).unwrap();
        let twice = wss_core::variants::clean_outliers_once(&once.sample, 0.1).unwrap();
        prop_assert_eq!(&twice.sample, &once.sample);
        for &i in &used {
            prop_assert!(once.replaced[i]);
        }
    }

    #[test]
    fn chisq_round_trip(g in 1e-9f64..(1.0 - 1e-9), k in 1usize..5000) {
        let q = chisq_quantile(g, k).unwrap();
        prop_assert!((chisq_cdf(q, k as f64) - g).abs() < 1e-6);
    }
}

fn noisy(n: usize, seed: u64) -> Sample {
    let f = TestFunction::Custom {
        name: "mix".into(),
        f: std::sync::Arc::new(|t: f64| {
            (8.0 * t).sin() + 2.0 * (-(t - 0.6f64).powi(2) / 0.002).exp()
        }),
    };
    make_dataset(&f, n, 0.2, Noise::Gaussian, seed).unwrap()
}

#[test]
fn weights_never_decrease_along_either_branch() {
    let config = AdaptConfig::default();
    for seed in 0..10 {
        let s = noisy(200, seed);
        let region = Region::for_sample(&s, &config).unwrap();
        for branch in [Branch::Local, Branch::Global] {
            let mut prev: Option<Vec<f64>> = None;
            let mut ok = true;
            run_branch(&s, &config, &region, branch, |step| {
                let w = step.weights.as_slice().to_vec();
                if let Some(p) = &prev {
                    ok &= w.iter().zip(p).all(|(a, b)| a >= b);
                }
                prev = Some(w);
            })
            .unwrap();
            assert!(ok, "seed {seed}, {branch:?}");
        }
    }
}

#[test]
fn global_branch_roughness_is_monotone() {
    let config = AdaptConfig::default();
    for seed in 0..50 {
        let s = noisy(128 + 4 * seed as usize, seed);
        let r = fit_global(&s, &config).unwrap();
        assert!(
            r.trace
                .windows(2)
                .all(|w| w[1].roughness >= w[0].roughness * (1.0 - 1e-12)),
            "seed {seed}"
        );
    }
}

#[test]
fn passing_fits_satisfy_the_region_recomputed() {
    let config = AdaptConfig::default();
    for seed in 0..10 {
        let s = noisy(300, seed);
        let r = fit(&s, &config).unwrap();
        assert!(r.pass && !r.truncated);
        let fam = dyadic_family(300).unwrap();
        let max = fam
            .intervals()
            .iter()
            .map(|iv| w_stat(s.y(), &r.final_fit.values, *iv).unwrap().abs())
            .fold(0.0, f64::max);
        assert!(max <= r.sigma_used * (r.tau_used * 300f64.ln()).sqrt());
        assert_eq!(
            r.threshold_used,
            r.sigma_used * (r.tau_used * 300f64.ln()).sqrt()
        );
    }
}

#[test]
fn affine_equivariance_with_fixed_sigma() {
    for seed in 0..10 {
        let s = noisy(150, seed);
        let sigma = sigma_hat(s.y()).unwrap();
        let config = AdaptConfig {
            sigma_mode: SigmaMode::Fixed(sigma),
            ..AdaptConfig::default()
        };
        let base = fit(&s, &config).unwrap();
        let (a, b) = (0.75, -1.5);
        let moved_y: Vec<f64> = s
            .y()
            .iter()
            .zip(s.t())
            .map(|(y, t)| y + a + b * t)
            .collect();
        let moved = fit(&s.with_y(moved_y).unwrap(), &config).unwrap();
        assert_eq!(base.iterations, moved.iterations, "seed {seed}");
        assert_eq!(base.chosen_branch, moved.chosen_branch);
        for ((g0, g1), t) in base
            .final_fit
            .values
            .iter()
            .zip(&moved.final_fit.values)
            .zip(s.t())
        {
            assert!((g1 - g0 - a - b * t).abs() < 1e-6, "seed {seed}");
        }
    }
}

#[test]
fn sequential_and_parallel_agree_bitwise() {
    let s = noisy(256, 3);
    let c = AdaptConfig::default();
    let a = wss_core::adapt::fit_with(&s, &c, Execution::Sequential).unwrap();
    let b = wss_core::adapt::fit_with(&s, &c, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert_eq!(fit(&s, &c).unwrap(), a);

    let fam = dyadic_family(200).unwrap();
    let cal = Calibration {
        alpha: 0.95,
        replicates: 1000,
        seed: 9,
    };
    let t1 = calibrate_tau_with(&fam, cal, Execution::Sequential).unwrap();
    let t2 = calibrate_tau_with(&fam, cal, Execution::Parallel).unwrap();
    assert_eq!(t1.to_bits(), t2.to_bits());
    assert_eq!(calibrate_tau(&fam, cal).unwrap().to_bits(), t1.to_bits());

    let mut study = StudyConfig::from_preset(Preset::RupcarHi, 3, 4);
    study.n_grid = vec![100, 200];
    let s1 = mrise_study_with(&study, Execution::Sequential).unwrap();
    let s2 = mrise_study_with(&study, Execution::Parallel).unwrap();
    assert_eq!(s1.to_csv(), s2.to_csv());
}

#[test]
fn calibration_is_monotone_in_alpha() {
    let fam = dyadic_family(100).unwrap();
    let mut last = 0.0;
    for alpha in [0.5, 0.8, 0.9, 0.95, 0.99] {
        let t = calibrate_tau(
            &fam,
            Calibration {
                alpha,
                replicates: 2000,
                seed: 1,
            },
        )
        .unwrap();
        assert!(t > last, "alpha {alpha}");
        last = t;
    }
}

#[test]
fn penalty_has_affine_null_space() {
    for n in [5, 16, 50] {
        let s = Sample::equispaced(vec![0.0; n]).unwrap();
        let ev = build_penalty(&s).eigenvalues().unwrap();
        let max = ev[n - 1];
        assert!(ev[0].abs() < 1e-9 * max && ev[1].abs() < 1e-9 * max);
        assert!(ev[2] > 1e-6 * max);
    }
}

#[test]
fn scale_pass_is_confirmed_by_recomputation() {
    let n = 256;
    let f = TestFunction::Custom {
        name: "zero".into(),
        f: std::sync::Arc::new(|_| 0.0),
    };
    let spec = ScaleRegionSpec::default_for(n).unwrap();
    let config = AdaptConfig {
        max_iterations: wss_core::variants::SCALE_MAX_ITERATIONS,
        ..AdaptConfig::default()
    };
    let mut checked = 0;
    for seed in 0..5 {
        let z = make_dataset(&f, n, 1.0, Noise::Gaussian, seed).unwrap();
        let y: Vec<f64> = z
            .y()
            .iter()
            .zip(z.t())
            .map(|(v, t)| v * (0.5 + t))
            .collect();
        let s = Sample::equispaced(y.clone()).unwrap();
        let r = scale_fit(&s, &spec, &config).unwrap();
        if !r.pass {
            continue;
        }
        let sv = r.floored_values();
        checked += 1;
        let mut bands = BandCache::new(&spec);
        for iv in spec.family.intervals() {
            let v: f64 = iv.range().map(|i| y[i] * y[i] / (sv[i] * sv[i])).sum();
            let (lo, hi) = bands.get(iv.len()).unwrap();
            let floored = iv.range().all(|i| sv[i] <= r.floor);
            assert!(v <= hi * (1.0 + 1e-12), "seed {seed} {iv}");
            assert!(v >= lo * (1.0 - 1e-12) || floored, "seed {seed} {iv}");
        }
    }
    assert!(checked > 0, "no scale fit passed");
}
