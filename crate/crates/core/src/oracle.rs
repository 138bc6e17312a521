//! Brute-force trajectory enumeration.
//!
//! Every path is visited and its probability is the plain product of the
//! step-kernel entries. Nothing here reuses the closed-form recurrences, so
//! the results serve as an independent reference for the other modules.
//!
//! Tables are stored per start problem without the `1/M` problem-choice
//! factor; aggregates weight problems uniformly.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::exact_dynamics::star_update;
use crate::kernels::{fit_symmetric, DenseKernel, SymmetricKernel};
use crate::sampler::{ProblemSet, StepKernels};

/// Default limit on the aggregate number of enumerated paths.
pub const DEFAULT_CAP: u64 = 10_000_000;

fn paths_per_start(policy: &StepKernels) -> f64 {
    policy.steps().iter().map(|k| k.cols() as f64).product()
}

fn check_cap(policy: &StepKernels, starts: usize, cap: u64) -> Result<()> {
    let per_start = paths_per_start(policy);
    let total = per_start * starts as f64;
    if total > cap as f64 {
        let dims: Vec<String> = policy
            .steps()
            .iter()
            .map(|k| k.cols().to_string())
            .collect();
        return Err(Error::Cap {
            paths: total,
            detail: format!("{starts} starts x {} per start", dims.join("*")),
            cap,
        });
    }
    Ok(())
}

/// Calls `visit(path, prob)` for every path from `start`, in lexicographic order.
fn for_each_path(policy: &StepKernels, start: usize, mut visit: impl FnMut(&[usize], f64)) {
    let n = policy.n_steps();
    let mut path = vec![0usize; n + 1];
    path[0] = start;
    loop {
        let prob: f64 = (1..=n)
            .map(|s| policy.step(s).get(path[s - 1], path[s]))
            .product();
        visit(&path, prob);
        // odometer increment over steps N, N-1, ..., 1
        let mut s = n;
        loop {
            if s == 0 {
                return;
            }
            path[s] += 1;
            if path[s] < policy.states_at(s) {
                break;
            }
            path[s] = 0;
            s -= 1;
        }
    }
}

fn branch_changes(path: &[usize]) -> usize {
    path.windows(2).filter(|w| w[0] != w[1]).count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub problem: usize,
    /// State indices for steps `0..=N`.
    pub path: Vec<usize>,
    pub prob: f64,
    pub success: bool,
    /// Number of branch-changing transitions.
    pub l: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryTable {
    pub rows: Vec<TableRow>,
}

pub const TABLE_CSV_HEADER: &str = "start,path,prob,success,l";

impl TrajectoryTable {
    /// CSV with 1-based `start` and dash-joined 1-based `path`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TABLE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let path: Vec<String> = r.path.iter().map(|s| (s + 1).to_string()).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.problem + 1,
                path.join("-"),
                r.prob,
                r.success,
                r.l
            );
        }
        out
    }

    /// Total probability of the rows belonging to `problem`.
    pub fn mass(&self, problem: usize) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.problem == problem)
            .map(|r| r.prob)
            .sum()
    }
}

/// Enumerates every path for one problem.
pub fn enumerate(
    policy: &StepKernels,
    problems: &ProblemSet,
    problem: usize,
    cap: u64,
) -> Result<TrajectoryTable> {
    check_cap(policy, 1, cap)?;
    let answer = problems.answer(problem);
    let mut rows = Vec::new();
    for_each_path(policy, problems.start(problem), |path, prob| {
        rows.push(TableRow {
            problem,
            path: path.to_vec(),
            prob,
            success: *path.last().unwrap() == answer,
            l: branch_changes(path),
        })
    });
    Ok(TrajectoryTable { rows })
}

/// Enumerates every path for every problem.
pub fn enumerate_all(
    policy: &StepKernels,
    problems: &ProblemSet,
    cap: u64,
) -> Result<TrajectoryTable> {
    check_cap(policy, problems.len(), cap)?;
    let mut rows = Vec::new();
    for p in 0..problems.len() {
        rows.extend(enumerate(policy, problems, p, u64::MAX)?.rows);
    }
    Ok(TrajectoryTable { rows })
}

/// Table for the symmetric chain from branch `m` (0-based).
pub fn enumerate_symmetric(k: &SymmetricKernel, m: usize, cap: u64) -> Result<TrajectoryTable> {
    if m >= k.m() {
        return invalid(format!("start branch {m} out of range for M={}", k.m()));
    }
    enumerate(
        &StepKernels::from_symmetric(k),
        &ProblemSet::diagonal(k.m()),
        m,
        cap,
    )
}

/// Success probability averaged over uniformly drawn problems.
pub fn exact_reward(policy: &StepKernels, problems: &ProblemSet, cap: u64) -> Result<f64> {
    check_cap(policy, problems.len(), cap)?;
    let mut total = 0.0;
    for p in 0..problems.len() {
        let answer = problems.answer(p);
        for_each_path(policy, problems.start(p), |path, prob| {
            if *path.last().unwrap() == answer {
                total += prob;
            }
        });
    }
    Ok(total / problems.len() as f64)
}

pub fn exact_reward_symmetric(k: &SymmetricKernel, cap: u64) -> Result<f64> {
    exact_reward(
        &StepKernels::from_symmetric(k),
        &ProblemSet::diagonal(k.m()),
        cap,
    )
}

/// Success probability by pushing each problem's state distribution through
/// the step kernels. Exact like [`exact_reward`] but linear in the number of
/// states, for chains too large to enumerate.
pub fn propagated_accuracy(policy: &StepKernels, problems: &ProblemSet) -> f64 {
    let mut total = 0.0;
    for p in 0..problems.len() {
        let mut dist = vec![0.0; policy.states_at(0)];
        dist[problems.start(p)] = 1.0;
        for k in policy.steps() {
            let mut next = vec![0.0; k.cols()];
            for (r, &mass) in dist.iter().enumerate() {
                if mass > 0.0 {
                    for (c, &q) in k.row(r).iter().enumerate() {
                        next[c] += mass * q;
                    }
                }
            }
            dist = next;
        }
        total += dist[problems.answer(p)];
    }
    total / problems.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLawMode {
    /// Pairs `(s_{n-1}, s_n)` at one step `n` (1-based).
    AtStep(usize),
    /// Pair mass summed over all steps before normalizing.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairLaw {
    pub kernel: DenseKernel,
    /// Source rows with zero success-conditional mass, filled uniform.
    pub flagged_rows: Vec<usize>,
}

/// Law of `s_n` given `s_{n-1}` among successful trajectories, problems drawn
/// uniformly.
pub fn success_conditioned_pair_law(
    policy: &StepKernels,
    problems: &ProblemSet,
    mode: PairLawMode,
    cap: u64,
) -> Result<PairLaw> {
    check_cap(policy, problems.len(), cap)?;
    let n = policy.n_steps();
    let (rows, cols) = match mode {
        PairLawMode::AtStep(s) => {
            if s == 0 || s > n {
                return invalid(format!("step must satisfy 1 <= n <= {n} (got {s})"));
            }
            (policy.step(s).rows(), policy.step(s).cols())
        }
        PairLawMode::Pooled => {
            if !policy.is_homogeneous() {
                return invalid("pooled pair law needs every step to share one square shape");
            }
            (policy.step(1).rows(), policy.step(1).cols())
        }
    };
    let mut joint = vec![0.0; rows * cols];
    let weight = 1.0 / problems.len() as f64;
    for p in 0..problems.len() {
        let answer = problems.answer(p);
        for_each_path(policy, problems.start(p), |path, prob| {
            if *path.last().unwrap() != answer {
                return;
            }
            let w = weight * prob;
            match mode {
                PairLawMode::AtStep(s) => joint[path[s - 1] * cols + path[s]] += w,
                PairLawMode::Pooled => {
                    for pair in path.windows(2) {
                        joint[pair[0] * cols + pair[1]] += w;
                    }
                }
            }
        });
    }
    let mut flagged_rows = Vec::new();
    for r in 0..rows {
        let row = &mut joint[r * cols..(r + 1) * cols];
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            flagged_rows.push(r);
            row.iter_mut().for_each(|x| *x = 1.0 / cols as f64);
        }
    }
    Ok(PairLaw {
        kernel: DenseKernel::new(rows, cols, joint)?,
        flagged_rows,
    })
}

pub fn symmetric_pair_law(k: &SymmetricKernel, mode: PairLawMode, cap: u64) -> Result<PairLaw> {
    success_conditioned_pair_law(
        &StepKernels::from_symmetric(k),
        &ProblemSet::diagonal(k.m()),
        mode,
        cap,
    )
}

/// Comparison of the enumerated pooled pair law with the closed-form update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateEqualityReport {
    pub m: usize,
    pub n: usize,
    pub delta0: f64,
    /// `mean(diag) - 1/M` of the enumerated pair law.
    pub delta_oracle: f64,
    /// Closed-form updated signal.
    pub delta_exact: f64,
    /// Max entrywise difference between the pair law and the updated kernel.
    pub deviation: f64,
    /// Distance of the pair law from the symmetric family.
    pub symmetric_deviation: f64,
    pub flagged_rows: Vec<usize>,
    pub tol: f64,
    pub pass: bool,
}

pub fn verify_update_equality(
    k: &SymmetricKernel,
    tol: f64,
    cap: u64,
) -> Result<UpdateEqualityReport> {
    let n = k.n();
    let law = symmetric_pair_law(k, PairLawMode::Pooled, cap)?;
    let fit = fit_symmetric(&law.kernel, n, tol)?;
    let exact = star_update(k, n);
    let deviation = law
        .kernel
        .max_abs_diff(&exact.to_dense())
        .expect("both kernels are M x M");
    let pass = (fit.delta - exact.delta()).abs() <= tol && deviation <= tol && fit.symmetric;
    Ok(UpdateEqualityReport {
        m: k.m(),
        n,
        delta0: k.delta(),
        delta_oracle: fit.delta,
        delta_exact: exact.delta(),
        deviation,
        symmetric_deviation: fit.deviation,
        flagged_rows: law.flagged_rows,
        tol,
        pass,
    })
}

/// Success trajectories of the symmetric chain grouped by branch-change count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LBucket {
    pub l: usize,
    /// Number of successful paths with this `l`, summed over all problems.
    pub count: usize,
    /// Their total probability, problems weighted `1/M`.
    pub mass: f64,
}

pub fn success_mass_by_l(k: &SymmetricKernel, cap: u64) -> Result<Vec<LBucket>> {
    let table = enumerate_all(
        &StepKernels::from_symmetric(k),
        &ProblemSet::diagonal(k.m()),
        cap,
    )?;
    let mut buckets: Vec<LBucket> = (0..=k.n())
        .map(|l| LBucket {
            l,
            count: 0,
            mass: 0.0,
        })
        .collect();
    let weight = 1.0 / k.m() as f64;
    for r in table.rows.iter().filter(|r| r.success) {
        buckets[r.l].count += 1;
        buckets[r.l].mass += weight * r.prob;
    }
    Ok(buckets)
}

/// Probability that a successful trajectory contains a wrong intermediate
/// state (equivalently `l >= 2`).
pub fn incorrect_conditional_mass(k: &SymmetricKernel, cap: u64) -> Result<f64> {
    let buckets = success_mass_by_l(k, cap)?;
    let total: f64 = buckets.iter().map(|b| b.mass).sum();
    let wrong: f64 = buckets.iter().filter(|b| b.l >= 2).map(|b| b.mass).sum();
    Ok(wrong / total)
}
