//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Expected values are computed here from closed forms or integer arithmetic,
//! independently of the library's recurrences.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use starlab_core::binadd::{ground_truth_trace, BinAddState};
use starlab_core::oracle::{
    enumerate_all, exact_reward_symmetric, success_mass_by_l, symmetric_pair_law, PairLawMode,
    DEFAULT_CAP,
};
use starlab_core::verifiers::zero_slope;
use starlab_core::{
    fit_symmetric, iterate, make_symmetric, reward, run_rl_star, star_update, ChainSpec,
    EstimatorMode, ProblemSet, Projection, RunConfig, StepKernels, StopRule, SymmetricKernel,
};

const MS: [usize; 3] = [2, 3, 4];
const NS: [usize; 4] = [2, 3, 4, 5];
const DELTAS: [f64; 9] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn sym(m: usize, n: usize, delta: f64) -> SymmetricKernel {
    make_symmetric(ChainSpec::new(m, n).unwrap(), delta).unwrap()
}

/// Grid points with `delta0` strictly inside `(0, 1 - 1/M)`.
fn open_grid() -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for m in MS {
        for n in NS {
            for d in DELTAS
                .into_iter()
                .filter(|&d| d > 0.0 && d < 1.0 - 1.0 / m as f64)
            {
                out.push((m, n, d));
            }
        }
    }
    out
}

fn two_state_recurrence() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 1..=9 {
        let d = 0.05 * i as f64;
        let want = d / (2.0 * (0.25 + d * d));
        worst = worst.max((star_update(&sym(2, 2, d), 2).delta() - want).abs());
    }
    let first = star_update(&sym(2, 2, 0.1), 2).delta();
    let ok = worst <= 1e-12 && (first - 0.192_307_692_3).abs() < 1e-10;
    outcome(
        ok,
        format!("max |diff| {worst:.2e} over 9 points, delta1(0.1) = {first:.10} (tol 1e-12)"),
    )
}

fn toy_reward() -> Outcome {
    let mut worst: f64 = 0.0;
    for i in 0..=10 {
        let d = 0.05 * i as f64;
        let k = sym(2, 2, d);
        let want = 2.0 * (0.25 + d * d);
        let oracle = exact_reward_symmetric(&k, DEFAULT_CAP).unwrap();
        worst = worst
            .max((reward(&k, 2) - want).abs())
            .max((oracle - want).abs());
    }
    let j = reward(&sym(2, 2, 0.1), 2);
    let inline = (1.0 + 2.0 * 0.01) / 2.0;
    let ok = worst <= 1e-12 && (j - inline).abs() > 5e-3;
    outcome(
        ok,
        format!("max |diff| {worst:.2e} vs 2(1/4+d^2) and enumeration; J(0.1) = {j} while (1+2d^2)/2 = {inline}"),
    )
}

fn update_vs_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for m in MS {
        for n in NS {
            for d in DELTAS.into_iter().filter(|&d| d < 1.0 - 1.0 / m as f64) {
                let k = sym(m, n, d);
                let law = symmetric_pair_law(&k, PairLawMode::Pooled, DEFAULT_CAP).unwrap();
                let fit = fit_symmetric(&law.kernel, n, 1e-10).unwrap();
                let next = star_update(&k, n);
                worst = worst
                    .max((fit.delta - next.delta()).abs())
                    .max(law.kernel.max_abs_diff(&next.to_dense()).unwrap());
                points += 1;
            }
        }
    }
    // Closed form for M = 3, N = 2, delta = 0.2: 0.92 / 2.36.
    let closed = star_update(&sym(3, 2, 0.2), 2).delta();
    let ok = worst <= 1e-10 && (closed - 0.92 / 2.36).abs() <= 1e-12;
    outcome(
        ok,
        format!(
            "{points} points, max deviation {worst:.2e} (tol 1e-10); M=3 N=2 delta1 = {closed:.8}"
        ),
    )
}

fn trace(m: usize, n: usize, d: f64, iters: usize) -> starlab_core::IterationTrace {
    iterate(
        &sym(m, n, d),
        n,
        StopRule {
            max_iters: iters,
            gap_tol: 1e-6,
        },
    )
    .unwrap()
}

fn reward_increases() -> Outcome {
    let mut violations = 0;
    let mut steps = 0;
    for (m, n, d) in open_grid() {
        let t = trace(m, n, d, 2000);
        for w in t.rows.windows(2) {
            steps += 1;
            if w[1].reward <= w[0].reward {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {steps} updates"),
    )
}

fn gap_converges() -> Outcome {
    let mut late = Vec::new();
    let mut non_monotone = 0;
    for (m, n, d) in open_grid() {
        let t = trace(m, n, d, 200);
        non_monotone += t.rows.windows(2).filter(|w| w[1].gap >= w[0].gap).count();
        if t.last().gap >= 1e-6 {
            let needed = trace(m, n, d, 100_000).rows.len() - 1;
            late.push(format!("M={m} N={n} d0={d} needs {needed}"));
        }
    }
    let toy = trace(2, 2, 0.1, 200).rows.len() - 1;
    let ok = late.is_empty() && non_monotone == 0 && toy <= 10;
    let mut detail = format!(
        "{} grid points, {non_monotone} non-decreasing steps, toy crossing at t={toy}",
        open_grid().len()
    );
    if !late.is_empty() {
        detail.push_str(&format!(
            "; not below 1e-6 within 200 iterations: {}",
            late.join(", ")
        ));
    }
    outcome(ok, detail)
}

fn path_probabilities() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut non_monotone = 0;
    let mut unfinished = Vec::new();
    for (m, n, d) in open_grid()
        .into_iter()
        .filter(|&(m, n, _)| m <= 4 && n <= 4)
    {
        let k = sym(m, n, d);
        let table = enumerate_all(
            &StepKernels::from_symmetric(&k),
            &ProblemSet::diagonal(m),
            DEFAULT_CAP,
        )
        .unwrap();
        let (a, b) = (k.alpha(), k.beta());
        for r in table.rows.iter().filter(|r| r.success) {
            let want = a.powi((n - r.l) as i32) * b.powi(r.l as i32) / m as f64;
            worst = worst.max((r.prob / m as f64 - want).abs());
        }
        let mut k = k;
        let mut prev = f64::INFINITY;
        let mut reached = false;
        for _ in 0..5000 {
            let buckets = success_mass_by_l(&k, DEFAULT_CAP).unwrap();
            let total: f64 = buckets.iter().map(|b| b.mass).sum();
            let wrong: f64 = buckets
                .iter()
                .filter(|b| b.l >= 2)
                .map(|b| b.mass)
                .sum::<f64>()
                / total;
            if wrong > prev {
                non_monotone += 1;
            }
            if wrong < 1e-8 {
                reached = true;
                break;
            }
            prev = wrong;
            k = star_update(&k, n);
        }
        if !reached {
            unfinished.push(format!("M={m} N={n} d0={d}"));
        }
    }
    let ok = worst <= 1e-12 && non_monotone == 0 && unfinished.is_empty();
    outcome(
        ok,
        format!(
            "max path deviation {worst:.2e} (tol 1e-12), {non_monotone} increases of l>=2 mass, {} traces above 1e-8",
            unfinished.len()
        ),
    )
}

fn uniform_fixed_point() -> Outcome {
    let mut moved = 0;
    for m in MS {
        for n in NS {
            let t = iterate(
                &sym(m, n, 0.0),
                n,
                StopRule {
                    max_iters: 50,
                    gap_tol: 0.0,
                },
            )
            .unwrap();
            let j = 1.0 / m as f64;
            moved += t
                .rows
                .iter()
                .filter(|r| r.delta != 0.0 || r.reward != j)
                .count();
            if t.rows.len() != 51 {
                moved += 1;
            }
        }
    }
    let cfg = RunConfig {
        m: 2,
        n: 2,
        delta0: 0.0,
        k: 100_000,
        t: 5,
        seed: 2024,
        estimator_mode: EstimatorMode::Pooled,
        projection: Projection::ProjectSymmetric,
        smoothing: 0.0,
    };
    let emp = run_rl_star(&cfg, 0).unwrap();
    let gain = zero_slope(2, 2).unwrap();
    let mut variance = 0.0;
    let mut worst: f64 = 0.0;
    for r in &emp.rows[1..] {
        variance = gain * gain * variance + r.delta_hat_stderr * r.delta_hat_stderr;
        worst = worst.max(r.delta.abs() / variance.sqrt());
    }
    outcome(
        moved == 0 && worst <= 4.0,
        format!("{moved} exact rows off the fixed point; sampled max |delta_hat| = {worst:.2} sigma (limit 4)"),
    )
}

fn monte_carlo_fidelity() -> Outcome {
    let want = 0.192_307_692_307_692_3;
    let mut passing = 0;
    for seed in 1..=100u64 {
        let cfg = RunConfig {
            m: 2,
            n: 2,
            delta0: 0.1,
            k: 100_000,
            t: 1,
            seed,
            estimator_mode: EstimatorMode::Pooled,
            projection: Projection::RawDense,
            smoothing: 0.0,
        };
        let t = run_rl_star(&cfg, 0).unwrap();
        if (t.rows[0].reward - 0.52).abs() <= 0.005 && (t.rows[1].delta - want).abs() <= 0.005 {
            passing += 1;
        }
    }
    outcome(
        passing >= 95,
        format!("{passing}/100 seeds within 0.005 of 0.52 and {want:.8} (need 95)"),
    )
}

fn starlab(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_starlab"))
        .args(args)
        .args(["--out-dir", dir.to_str().unwrap()])
        .env_remove("STARLAB_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 5] = [
        &["exact", "--m", "3", "--n", "4", "--delta0", "0.2"],
        &[
            "simulate", "--m", "3", "--n", "3", "--delta0", "0.15", "--k", "30000", "--t", "4",
            "--seed", "5",
        ],
        &[
            "verify",
            "--ms",
            "2,3",
            "--ns",
            "2,3",
            "--empirical-k",
            "20000",
            "--seed",
            "9",
        ],
        &["oracle", "--m", "3", "--n", "3", "--delta0", "0.25"],
        &[
            "binadd", "--bits", "2", "--k", "5000", "--t", "3", "--seed", "4",
        ],
    ];
    let mut mismatches = Vec::new();
    for args in commands {
        let name = args[0];
        let mut outputs = Vec::new();
        for (run, workers) in [("w1", "1"), ("w1b", "1"), ("w4", "4")] {
            let dir = tmp.path().join(format!("{name}-{run}"));
            let mut all = args.to_vec();
            all.extend(["--workers", workers]);
            if !starlab(&dir, &all) {
                mismatches.push(format!("{name} failed"));
            }
            outputs.push(csvs(&dir));
        }
        let manifest = tmp.path().join(format!("{name}-w1/manifest.json"));
        let replay = tmp.path().join(format!("{name}-replay"));
        if !starlab(
            &replay,
            &[
                name,
                "--config",
                manifest.to_str().unwrap(),
                "--workers",
                "3",
            ],
        ) {
            mismatches.push(format!("{name} replay failed"));
        }
        outputs.push(csvs(&replay));
        if outputs[0].is_empty() || outputs.iter().any(|o| *o != outputs[0]) {
            mismatches.push(name.to_string());
        }
    }
    let detail = if mismatches.is_empty() {
        "5 commands x (2 repeats, 4 workers, manifest replay): CSVs byte-identical".to_string()
    } else {
        format!("differences: {}", mismatches.join(", "))
    };
    outcome(mismatches.is_empty(), detail)
}

fn binary_addition() -> Outcome {
    let expected = [
        "x='101+110', z='', y=''",
        "x='10+11', z='0', y='1'",
        "x='1+1', z='0', y='11'",
        "x='', z='1', y='011'",
        "x='', z='', y='1011'",
    ];
    let trace: Vec<String> = ground_truth_trace(&BinAddState::parse_problem("101+110").unwrap())
        .unwrap()
        .iter()
        .map(ToString::to_string)
        .collect();
    let verbatim = trace == expected;
    let mut wrong = 0;
    let mut checked = 0;
    for bits in 1..=4usize {
        for a in 0..1u32 << bits {
            for b in 0..1u32 << bits {
                let t =
                    ground_truth_trace(&BinAddState::from_operands(a, b, bits).unwrap()).unwrap();
                let last = t.last().unwrap();
                checked += 1;
                if t.len() != bits + 2 || u32::from_str_radix(&last.y, 2).ok() != Some(a + b) {
                    wrong += 1;
                }
            }
        }
    }
    outcome(
        verbatim && wrong == 0,
        format!("worked trace verbatim: {verbatim}; {wrong} of {checked} sums wrong for b <= 4"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 10] = [
        ("two-state update recurrence", two_state_recurrence),
        ("toy reward", toy_reward),
        ("general update vs enumeration", update_vs_oracle),
        ("reward increases along exact traces", reward_increases),
        ("gap to ground truth converges", gap_converges),
        (
            "success path probabilities and wrong-step mass",
            path_probabilities,
        ),
        ("uniform start is a fixed point", uniform_fixed_point),
        ("Monte Carlo fidelity", monte_carlo_fidelity),
        ("determinism across runs and workers", determinism),
        ("binary addition", binary_addition),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
