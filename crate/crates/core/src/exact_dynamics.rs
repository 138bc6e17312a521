//! Closed-form RL-STaR dynamics on the symmetric kernel family.
//!
//! Starting from the correct state, the probability mass after `n` steps is
//! `A_n` on the correct branch and `B_n` on each of the `M-1` wrong branches.
//! The filtered-data re-estimate of the diagonal is
//! `alpha' = alpha·A_{N-1} / (alpha·A_{N-1} + (M-1)·beta·B_{N-1})`.
//!
//! The recurrence is propagated in mean/difference coordinates
//! (`A_n - B_n = (alpha - beta)·(A_{n-1} - B_{n-1})`), which keeps the uniform
//! fixed point exact in floating point: with `delta = 0` every quantity below
//! is bitwise `1/M` and the update returns exactly `0`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::kernels::{make_symmetric, ChainSpec, SymmetricKernel};
use crate::sampler::Trajectory;

/// Occupancy after `n` steps from a correct start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForwardVector {
    pub n: usize,
    /// Mass on the correct branch.
    pub a: f64,
    /// Mass on each incorrect branch.
    pub b: f64,
    /// `a - b`, carried through its own recurrence.
    pub diff: f64,
}

pub fn forward(k: &SymmetricKernel, n: usize) -> ForwardVector {
    let m = k.m() as f64;
    let contraction = k.alpha() - k.beta();
    let mut diff = 1.0;
    for _ in 0..n {
        diff *= contraction;
    }
    ForwardVector {
        n,
        a: 1.0 / m + (m - 1.0) / m * diff,
        b: (1.0 - diff) / m,
        diff,
    }
}

/// Probability that a rollout of `n` steps ends at the correct answer.
pub fn reward(k: &SymmetricKernel, n: usize) -> f64 {
    forward(k, n).a
}

/// Options for [`star_update_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateRule {
    /// With `N = 1` the filtered data holds only ground-truth pairs. By
    /// default the kernel is returned unchanged; with this flag it jumps
    /// straight to the ground-truth kernel.
    pub n1_jump: bool,
}

/// One exact RL-STaR iteration.
pub fn star_update(k: &SymmetricKernel, n: usize) -> SymmetricKernel {
    star_update_with(k, n, UpdateRule::default())
}

pub fn star_update_with(k: &SymmetricKernel, n: usize, rule: UpdateRule) -> SymmetricKernel {
    let spec = k.spec();
    if n <= 1 {
        return if rule.n1_jump && k.delta() > 0.0 {
            SymmetricKernel::from_update(spec, spec.max_delta())
        } else {
            *k
        };
    }
    if k.beta() == 0.0 {
        return *k;
    }
    let m = k.m() as f64;
    let (alpha, beta) = (k.alpha(), k.beta());
    let prev = forward(k, n - 1);
    let kept_correct = alpha * prev.a;
    let kept_total = kept_correct + (m - 1.0) * beta * prev.b;
    // delta' = alpha' - 1/M, expanded so that delta = 0 maps to exactly 0.
    let excess = alpha * prev.diff + (alpha - beta) * prev.b;
    let delta = (m - 1.0) * excess / (m * kept_total);
    SymmetricKernel::from_update(spec, delta)
}

/// Halting rule for [`iterate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_iters: usize,
    pub gap_tol: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_iters: 10_000,
            gap_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    GapTolerance,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub delta: f64,
    pub alpha: f64,
    pub reward: f64,
    pub gap: f64,
}

impl TraceRow {
    pub fn of(t: usize, k: &SymmetricKernel, n: usize) -> Self {
        TraceRow {
            t,
            delta: k.delta(),
            alpha: k.alpha(),
            reward: reward(k, n),
            gap: k.gap(),
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "t,delta,alpha,reward,gap";

/// Exact iteration record. Row `t = 0` holds the initial kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rows: Vec<TraceRow>,
    pub halt: HaltReason,
}

impl IterationTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows
            .last()
            .expect("trace always holds the initial row")
    }

    pub fn deltas(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.delta)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.t, r.delta, r.alpha, r.reward, r.gap
            );
        }
        out
    }
}

/// Applies [`star_update`] until `gap < gap_tol` or `max_iters` updates.
pub fn iterate(k0: &SymmetricKernel, n: usize, stop: StopRule) -> Result<IterationTrace> {
    iterate_with(k0, n, stop, UpdateRule::default())
}

pub fn iterate_with(
    k0: &SymmetricKernel,
    n: usize,
    stop: StopRule,
    rule: UpdateRule,
) -> Result<IterationTrace> {
    if stop.max_iters == 0 {
        return invalid("max_iters must be >= 1");
    }
    if n == 0 {
        return invalid("N must be >= 1");
    }
    if stop.gap_tol.is_nan() {
        return invalid("gap_tol must not be NaN");
    }
    let mut k = *k0;
    let mut rows = vec![TraceRow::of(0, &k, n)];
    let mut halt = HaltReason::MaxIters;
    if k.gap() < stop.gap_tol {
        halt = HaltReason::GapTolerance;
    } else {
        for t in 1..=stop.max_iters {
            k = star_update_with(&k, n, rule);
            rows.push(TraceRow::of(t, &k, n));
            if k.gap() < stop.gap_tol {
                halt = HaltReason::GapTolerance;
                break;
            }
        }
    }
    Ok(IterationTrace { rows, halt })
}

/// Probability `(1/M)·alpha^(N-l)·beta^l` of one specific successful
/// trajectory with `l` branch-changing transitions (problem choice included).
pub fn incorrect_step_probability(m: usize, n: usize, delta: f64, l: usize) -> Result<f64> {
    let k = make_symmetric(ChainSpec::new(m, n)?, delta)?;
    if l < 2 || l > n {
        return invalid(format!(
            "off-diagonal count l must satisfy 2 <= l <= N={n} (got {l})"
        ));
    }
    Ok(k.alpha().powi((n - l) as i32) * k.beta().powi(l as i32) / m as f64)
}

/// Transition bookkeeping for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OffDiagonalCount {
    /// Number of steps whose branch differs from the previous step's.
    pub l: usize,
    /// Number of intermediate states (steps `1..N-1`) off the problem's branch.
    pub k: usize,
}

pub fn count_off_diagonal(t: &Trajectory) -> Result<OffDiagonalCount> {
    let states = &t.states;
    if states.len() < 2 {
        return invalid(format!(
            "trajectory needs at least 2 states (got {})",
            states.len()
        ));
    }
    if states[0] != t.problem {
        return invalid(format!(
            "trajectory for problem {} starts at branch {}",
            t.problem, states[0]
        ));
    }
    let l = states.windows(2).filter(|w| w[0] != w[1]).count();
    let n = states.len() - 1;
    let k = states[1..n].iter().filter(|&&s| s != t.problem).count();
    Ok(OffDiagonalCount { l, k })
}
