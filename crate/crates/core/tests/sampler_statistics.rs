//! Statistical checks of the sampler against exact values. Seeds are fixed, so
//! every assertion is deterministic; tolerances are about 3 standard errors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use starlab_core::oracle::{enumerate_all, DEFAULT_CAP};
use starlab_core::sampler::{
    estimate_kernel, filter, sample_batch, sample_trajectory, signal, GroundTruthPaths, LoopConfig,
};
use starlab_core::verifiers::zero_slope;
use starlab_core::{
    make_symmetric, run_rl_star, star_update, ChainSpec, Error, EstimatorMode, ProblemSet,
    Projection, RunConfig, StepKernels, SymmetricKernel,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const TOY_DELTA1: f64 = 0.192_307_692_307_692_3;

fn sym(m: usize, n: usize, delta: f64) -> SymmetricKernel {
    make_symmetric(ChainSpec::new(m, n).unwrap(), delta).unwrap()
}

fn toy(seed: u64, k: usize, mode: EstimatorMode, projection: Projection) -> RunConfig {
    RunConfig {
        m: 2,
        n: 2,
        delta0: 0.1,
        k,
        t: 1,
        seed,
        estimator_mode: mode,
        projection,
        smoothing: 0.0,
    }
}

/// Upper-tail p-value of Pearson's statistic, pooling cells with expected count < 5.
fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut small_obs, mut small_exp) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total as f64;
        if e < 5.0 {
            small_obs += o as f64;
            small_exp += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if small_exp > 0.0 {
        cells.push((small_obs, small_exp));
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let dof = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

#[test]
fn path_frequencies_match_enumeration() {
    for (m, n, delta) in [
        (2, 2, 0.1),
        (2, 5, 0.3),
        (3, 3, 0.2),
        (3, 4, 0.5),
        (4, 2, 0.05),
        (4, 4, 0.6),
    ] {
        let k = sym(m, n, delta);
        let policy = StepKernels::from_symmetric(&k);
        let problems = ProblemSet::diagonal(m);
        let table = enumerate_all(&policy, &problems, DEFAULT_CAP).unwrap();
        let index: std::collections::HashMap<(usize, Vec<usize>), usize> = table
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.problem, r.path.clone()), i))
            .collect();
        let mut counts = vec![0u64; table.rows.len()];
        for t in sample_batch(&policy, &problems, 99, 0, 100_000, 0) {
            counts[index[&(t.problem, t.states)]] += 1;
        }
        let probs: Vec<f64> = table.rows.iter().map(|r| r.prob / m as f64).collect();
        let p = chi_square_p(&counts, &probs);
        assert!(p > 0.001, "M={m} N={n} delta={delta}: p = {p}");
    }
}

#[test]
fn long_uniform_chain_ends_uniformly() {
    let policy = StepKernels::from_symmetric(&sym(4, 1000, 0.0));
    let problems = ProblemSet::diagonal(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = vec![0u64; 4];
    for i in 0..20_000 {
        counts[*sample_trajectory(&policy, &problems, i % 4, &mut rng)
            .states
            .last()
            .unwrap()] += 1;
    }
    assert!(chi_square_p(&counts, &[0.25; 4]) > 0.001, "{counts:?}");
}

#[test]
fn first_path_frequency() {
    let policy = StepKernels::from_symmetric(&sym(2, 2, 0.1));
    let problems = ProblemSet::diagonal(2);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let hits = (0..100_000)
        .filter(|_| sample_trajectory(&policy, &problems, 0, &mut rng).states == [0, 0, 0])
        .count();
    assert!((hits as f64 / 1e5 - 0.36).abs() < 0.005);
}

#[test]
fn kept_fraction_estimates_reward() {
    for (m, n, delta, want) in [(2, 2, 0.1, 0.52), (4, 3, 0.0, 0.25)] {
        let policy = StepKernels::from_symmetric(&sym(m, n, delta));
        let problems = ProblemSet::diagonal(m);
        let d = filter(
            sample_batch(&policy, &problems, 1, 0, 100_000, 0),
            &problems,
            1,
        );
        assert!(
            (d.kept_fraction() - want).abs() < 0.005,
            "{}",
            d.kept_fraction()
        );
    }
}

#[test]
fn fitted_signal_tracks_update() {
    for projection in [Projection::RawDense, Projection::ProjectSymmetric] {
        let trace = run_rl_star(&toy(42, 100_000, EstimatorMode::Pooled, projection), 0).unwrap();
        assert!(
            (trace.rows[1].delta - TOY_DELTA1).abs() < 0.005,
            "{projection:?}"
        );
    }
    let trace = run_rl_star(
        &toy(42, 100_000, EstimatorMode::SinglePair, Projection::RawDense),
        0,
    )
    .unwrap();
    assert!((trace.rows[1].delta - TOY_DELTA1).abs() < 0.01);
}

#[test]
fn per_step_estimates_agree() {
    let k = sym(3, 3, 0.2);
    let want = star_update(&k, 3).to_dense();
    let policy = StepKernels::from_symmetric(&k);
    let problems = ProblemSet::diagonal(3);
    let d = filter(
        sample_batch(&policy, &problems, 8, 0, 200_000, 0),
        &problems,
        1,
    );
    let cfg = LoopConfig {
        k: 200_000,
        t: 1,
        seed: 8,
        estimator_mode: EstimatorMode::PerStep,
        projection: Projection::RawDense,
        smoothing: 0.0,
    };
    let est = estimate_kernel(&d, &cfg, &policy, &GroundTruthPaths::identity(3, 3)).unwrap();
    for step in est.kernels.steps() {
        assert!(step.max_abs_diff(&want).unwrap() < 0.01);
    }
}

#[test]
fn tracks_exact_trace() {
    let cfg = RunConfig {
        t: 8,
        seed: 7,
        ..toy(7, 100_000, EstimatorMode::Pooled, Projection::RawDense)
    };
    let trace = run_rl_star(&cfg, 0).unwrap();
    let mut k = sym(2, 2, 0.1);
    for row in &trace.rows {
        assert!((row.delta - k.delta()).abs() < 0.01, "t={}", row.t);
        k = star_update(&k, 2);
    }
}

#[test]
fn estimates_are_unbiased() {
    let runs: Vec<_> = (0..100)
        .map(|s| {
            run_rl_star(
                &toy(
                    1000 + s,
                    10_000,
                    EstimatorMode::Pooled,
                    Projection::RawDense,
                ),
                1,
            )
            .unwrap()
        })
        .collect();
    let check = |xs: Vec<f64>, want: f64| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - want).abs() < 4.0 * se,
            "mean {mean} vs {want} (se {se})"
        );
    };
    check(runs.iter().map(|r| r.rows[0].reward).collect(), 0.52);
    check(runs.iter().map(|r| r.rows[1].delta).collect(), TOY_DELTA1);
}

#[test]
fn error_shrinks_with_sample_size() {
    let rmse = |k: usize| {
        let sq: f64 = (0..30)
            .map(|s| {
                let t = run_rl_star(
                    &toy(500 + s, k, EstimatorMode::Pooled, Projection::RawDense),
                    0,
                )
                .unwrap();
                (t.rows[1].delta - TOY_DELTA1).powi(2)
            })
            .sum();
        (sq / 30.0).sqrt()
    };
    let (small, large) = (rmse(1_000), rmse(100_000));
    // 100x the samples should cut the error about tenfold.
    assert!(small / large > 4.0, "{small} vs {large}");
}

#[test]
fn uniform_start_stays_near_zero() {
    let cfg = RunConfig {
        delta0: 0.0,
        t: 5,
        ..toy(3, 100_000, EstimatorMode::Pooled, Projection::RawDense)
    };
    let trace = run_rl_star(&cfg, 0).unwrap();
    assert_eq!(trace.rows[0].delta, 0.0);
    // Zero is an unstable fixed point, so earlier noise is amplified by the slope.
    let gain = zero_slope(2, 2).unwrap();
    let mut variance = 0.0;
    for row in &trace.rows[1..] {
        variance = gain * gain * variance + row.delta_hat_stderr.powi(2);
        assert!(
            row.delta.abs() < 4.0 * variance.sqrt(),
            "t={}: {}",
            row.t,
            row.delta
        );
    }
}

#[test]
fn hopeless_runs_report_empty_filter() {
    let policy = StepKernels::from_symmetric(&sym(50, 3, 0.0));
    let seed = (0..)
        .find(|&s| {
            filter(
                sample_batch(&policy, &ProblemSet::diagonal(50), s, 0, 1, 1),
                &ProblemSet::diagonal(50),
                1,
            )
            .kept_count
                == 0
        })
        .unwrap();
    let cfg = RunConfig {
        m: 50,
        n: 3,
        delta0: 0.0,
        k: 1,
        t: 2,
        seed,
        estimator_mode: EstimatorMode::Pooled,
        projection: Projection::RawDense,
        smoothing: 0.0,
    };
    match run_rl_star(&cfg, 1) {
        Err(e @ Error::EmptyFilter { .. }) => assert!(e.to_string().contains("kept_count=0")),
        other => panic!("expected an empty filter, got {other:?}"),
    }
}

#[test]
fn signal_of_estimate_is_near_update() {
    let k = sym(4, 3, 0.3);
    let policy = StepKernels::from_symmetric(&k);
    let problems = ProblemSet::diagonal(4);
    let d = filter(
        sample_batch(&policy, &problems, 2, 0, 100_000, 0),
        &problems,
        1,
    );
    let cfg = LoopConfig {
        k: 100_000,
        t: 1,
        seed: 2,
        estimator_mode: EstimatorMode::Pooled,
        projection: Projection::RawDense,
        smoothing: 0.0,
    };
    let truth = GroundTruthPaths::identity(4, 3);
    let est = estimate_kernel(&d, &cfg, &policy, &truth).unwrap();
    let s = signal(&est.kernels, &truth);
    assert!((s.delta - star_update(&k, 3).delta()).abs() < 4.0 * est.signal_stderr.max(1e-3));
}
