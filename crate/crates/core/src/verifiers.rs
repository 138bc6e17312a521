//! Numerical verdicts for the convergence claims, one per claim and grid point.
//!
//! | id     | claim                                                           |
//! |--------|-----------------------------------------------------------------|
//! | `THM1` | `M = N = 2`: `delta' = delta / (2(1/4 + delta^2))`, `J = 2(1/4 + delta^2)` |
//! | `THM2` | the update stays in the symmetric family and `delta < delta' < 1 - 1/M` |
//! | `COR1` | `J(P_t)` strictly increases                                      |
//! | `COR2` | `‖P_t - I‖_∞` decreases to zero                                 |
//! | `COR3` | successful paths with `l` changes have probability `(1/M) alpha^(N-l) beta^l`, and their conditional mass vanishes |
//! | `COR4` | `delta_0 = 0` is a fixed point                                   |

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exact_dynamics::{
    count_off_diagonal, forward, incorrect_step_probability, iterate, reward, star_update,
    HaltReason, StopRule,
};
use crate::kernels::{infinity_gap, make_symmetric, ChainSpec, SymmetricKernel};
use crate::oracle::{
    enumerate_all, exact_reward_symmetric, incorrect_conditional_mass, verify_update_equality,
};
use crate::sampler::{
    run_rl_star, EstimatorMode, ProblemSet, Projection, RunConfig, StepKernels, Trajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Claim {
    #[serde(rename = "THM1")]
    Thm1,
    #[serde(rename = "THM2")]
    Thm2,
    #[serde(rename = "COR1")]
    Cor1,
    #[serde(rename = "COR2")]
    Cor2,
    #[serde(rename = "COR3")]
    Cor3,
    #[serde(rename = "COR4")]
    Cor4,
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Claim::Thm1 => "THM1",
            Claim::Thm2 => "THM2",
            Claim::Cor1 => "COR1",
            Claim::Cor2 => "COR2",
            Claim::Cor3 => "COR3",
            Claim::Cor4 => "COR4",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub m: usize,
    pub n: usize,
    pub delta0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub claim: Claim,
    pub point: GridPoint,
    pub pass: bool,
    /// Named numbers that were compared, for audit.
    pub witness: BTreeMap<String, f64>,
    pub tol: f64,
    /// Checks that failed, empty on pass.
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

fn fmt_witness(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e6) {
        format!("{v:.3e}")
    } else {
        format!("{}", (v * 1e10).round() / 1e10)
    }
}

impl Verdict {
    pub fn summary_line(&self) -> String {
        let status = if self.pass { "PASS" } else { "FAIL" };
        let witness: Vec<String> = self
            .witness
            .iter()
            .map(|(k, v)| format!("{k}={}", fmt_witness(*v)))
            .collect();
        let mut line = format!(
            "{status} {} M={} N={} delta0={} tol={:e} {}",
            self.claim,
            self.point.m,
            self.point.n,
            self.point.delta0,
            self.tol,
            witness.join(" ")
        );
        if !self.failures.is_empty() {
            line.push_str(&format!(" failed=[{}]", self.failures.join("; ")));
        }
        line
    }

    fn sort_key(&self) -> (Claim, usize, usize, u64) {
        (
            self.claim,
            self.point.m,
            self.point.n,
            self.point.delta0.to_bits(),
        )
    }
}

/// Accumulates checks for one verdict.
struct Checker {
    claim: Claim,
    point: GridPoint,
    tol: f64,
    witness: BTreeMap<String, f64>,
    failures: Vec<String>,
    note: Option<String>,
}

impl Checker {
    fn new(claim: Claim, m: usize, n: usize, delta0: f64, tol: f64) -> Self {
        Checker {
            claim,
            point: GridPoint { m, n, delta0 },
            tol,
            witness: BTreeMap::new(),
            failures: Vec::new(),
            note: None,
        }
    }

    fn witness(&mut self, name: &str, value: f64) {
        self.witness.insert(name.to_string(), value);
    }

    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn check_close(&mut self, name: &str, got: f64, want: f64) {
        let diff = (got - want).abs();
        let key = format!("{name}_diff");
        let prev = self.witness.get(&key).copied().unwrap_or(0.0);
        self.witness(&key, prev.max(diff));
        if diff.is_nan() || diff > self.tol {
            self.failures.push(format!(
                "{name}: |{got} - {want}| = {diff:e} > {:e}",
                self.tol
            ));
        }
    }

    fn finish(self) -> Verdict {
        Verdict {
            claim: self.claim,
            point: self.point,
            pass: self.failures.is_empty(),
            witness: self.witness,
            tol: self.tol,
            failures: self.failures,
            note: self.note,
        }
    }
}

fn kernel(m: usize, n: usize, delta0: f64) -> Result<SymmetricKernel> {
    make_symmetric(ChainSpec::new(m, n)?, delta0)
}

fn in_open_interval(m: usize, delta0: f64) -> bool {
    delta0 > 0.0 && delta0 < 1.0 - 1.0 / m as f64
}

fn toy_recurrence(delta: f64) -> f64 {
    delta / (2.0 * (0.25 + delta * delta))
}

fn toy_reward(delta: f64) -> f64 {
    2.0 * (0.25 + delta * delta)
}

pub fn verify_thm1(delta0: f64, tol: f64, cap: u64) -> Result<Verdict> {
    let mut c = Checker::new(Claim::Thm1, 2, 2, delta0, tol);
    if !(delta0 > 0.0 && delta0 < 0.5) {
        c.note = Some("delta0 outside (0, 1/2); fixed points are covered by COR1/COR4".into());
        c.check(false, "hypothesis 0 < delta0 < 1/2 not met");
        return Ok(c.finish());
    }
    let k0 = kernel(2, 2, delta0)?;
    let k1 = star_update(&k0, 2);
    let d1 = k1.delta();
    c.witness("delta1", d1);
    c.check_close("recurrence", d1, toy_recurrence(delta0));
    c.check(d1 > delta0, format!("delta1 = {d1} is not > delta0"));
    c.check(d1 < 0.5, format!("delta1 = {d1} is not < 1/2"));
    for (t, k) in [(0, k0), (1, k1)] {
        let oracle = exact_reward_symmetric(&k, cap)?;
        c.witness(&format!("J{t}"), oracle);
        c.check_close("oracle_reward", oracle, toy_reward(k.delta()));
        c.check_close("exact_reward", reward(&k, 2), toy_reward(k.delta()));
    }
    Ok(c.finish())
}

pub fn verify_thm2(m: usize, n: usize, delta0: f64, tol: f64, cap: u64) -> Result<Verdict> {
    let mut c = Checker::new(Claim::Thm2, m, n, delta0, tol);
    if n < 2 || !in_open_interval(m, delta0) {
        c.check(false, "hypothesis N >= 2 and 0 < delta0 < 1 - 1/M not met");
        return Ok(c.finish());
    }
    let k0 = kernel(m, n, delta0)?;
    let rep = verify_update_equality(&k0, tol, cap)?;
    c.witness("delta1", rep.delta_exact);
    c.witness("delta1_oracle", rep.delta_oracle);
    c.witness("symmetric_deviation", rep.symmetric_deviation);
    c.witness("kernel_deviation", rep.deviation);
    c.check(
        rep.symmetric_deviation <= tol,
        format!(
            "pair law leaves the symmetric family by {:e}",
            rep.symmetric_deviation
        ),
    );
    c.check_close("oracle_delta", rep.delta_oracle, rep.delta_exact);
    c.check(
        rep.deviation <= tol,
        format!(
            "pair law differs from the updated kernel by {:e}",
            rep.deviation
        ),
    );
    c.check(rep.delta_exact > delta0, "delta1 is not > delta0");
    c.check(
        rep.delta_exact < 1.0 - 1.0 / m as f64,
        "delta1 is not < 1 - 1/M",
    );
    Ok(c.finish())
}

pub fn verify_cor1(
    m: usize,
    n: usize,
    delta0: f64,
    t: usize,
    tol: f64,
    cap: u64,
) -> Result<Verdict> {
    let mut c = Checker::new(Claim::Cor1, m, n, delta0, tol);
    let k0 = kernel(m, n, delta0)?;
    let trace = iterate(
        &k0,
        n,
        StopRule {
            max_iters: t,
            gap_tol: 1e-8,
        },
    )?;
    let rewards: Vec<f64> = trace.rows.iter().map(|r| r.reward).collect();
    c.witness("J0", rewards[0]);
    c.witness("J_last", *rewards.last().unwrap());
    c.witness("iterations", (rewards.len() - 1) as f64);
    let open = in_open_interval(m, delta0);
    let mut min_step = f64::INFINITY;
    for (i, w) in rewards.windows(2).enumerate() {
        let inc = w[1] - w[0];
        min_step = min_step.min(inc);
        if open {
            c.check(
                inc > 0.0,
                format!("J did not increase at t={}: {} -> {}", i + 1, w[0], w[1]),
            );
        } else {
            c.check(inc == 0.0, format!("J moved at fixed point t={}", i + 1));
        }
    }
    if min_step.is_finite() {
        c.witness("min_increment", min_step);
    }
    if !open {
        c.note = Some("endpoint: reward must stay constant".into());
    }
    // exact rewards agree with enumeration along the trace
    for row in &trace.rows {
        let k = kernel(m, n, row.delta)?;
        c.check_close(
            "oracle_reward",
            exact_reward_symmetric(&k, cap)?,
            row.reward,
        );
    }
    Ok(c.finish())
}

pub fn verify_cor2(
    m: usize,
    n: usize,
    delta0: f64,
    gap_tol: f64,
    max_iters: usize,
) -> Result<Verdict> {
    let mut c = Checker::new(Claim::Cor2, m, n, delta0, gap_tol);
    let k0 = kernel(m, n, delta0)?;
    let trace = iterate(&k0, n, StopRule { max_iters, gap_tol })?;
    for (i, w) in trace.rows.windows(2).enumerate() {
        c.check(
            w[1].gap < w[0].gap,
            format!(
                "gap did not decrease at t={}: {} -> {}",
                i + 1,
                w[0].gap,
                w[1].gap
            ),
        );
    }
    for row in &trace.rows {
        let dense_gap = infinity_gap(&kernel(m, n, row.delta)?.to_dense())?;
        c.check(
            (dense_gap - row.gap).abs() <= 1e-12,
            format!("t={}: dense gap {dense_gap} != {}", row.t, row.gap),
        );
    }
    c.witness("gap0", trace.rows[0].gap);
    c.witness("gap_last", trace.last().gap);
    c.check(
        trace.halt == HaltReason::GapTolerance,
        format!(
            "gap {} did not fall below {gap_tol:e} within {max_iters} iterations",
            trace.last().gap
        ),
    );
    if trace.halt == HaltReason::GapTolerance {
        c.witness("first_crossing", trace.last().t as f64);
    }
    Ok(c.finish())
}

/// Threshold below which the conditional mass of wrong-step paths counts as vanished.
pub const COR3_MASS_TOL: f64 = 1e-8;

pub fn verify_cor3(
    m: usize,
    n: usize,
    delta0: f64,
    tol: f64,
    max_iters: usize,
    cap: u64,
) -> Result<Verdict> {
    let mut c = Checker::new(Claim::Cor3, m, n, delta0, tol);
    let k0 = kernel(m, n, delta0)?;

    // (a) per-path probabilities, problem choice included
    let table = enumerate_all(
        &StepKernels::from_symmetric(&k0),
        &ProblemSet::diagonal(m),
        cap,
    )?;
    let (alpha, beta) = (k0.alpha(), k0.beta());
    let mut bound_violations = 0usize;
    let mut success_paths = 0usize;
    for row in table.rows.iter().filter(|r| r.success) {
        success_paths += 1;
        let got = row.prob / m as f64;
        let want = if row.l >= 2 {
            incorrect_step_probability(m, n, delta0, row.l)?
        } else {
            alpha.powi((n - row.l) as i32) * beta.powi(row.l as i32) / m as f64
        };
        c.check_close("path_probability", got, want);
        let counts = count_off_diagonal(&Trajectory {
            problem: row.problem,
            states: row.path.clone(),
        })?;
        if counts.k > 0 && counts.l > (2 * counts.k).min(n) {
            bound_violations += 1;
        }
        c.check(
            counts.k > 0 || counts.l == 0,
            "successful path with k = 0 but l > 0",
        );
    }
    c.witness("success_paths", success_paths as f64);
    c.witness("l_bound_violations", bound_violations as f64);

    // (b) conditional mass of paths with wrong steps along the exact trace
    let mut k = k0;
    let mut masses = vec![incorrect_conditional_mass(&k, cap)?];
    c.witness("mass0", masses[0]);
    while *masses.last().unwrap() >= COR3_MASS_TOL && masses.len() <= max_iters {
        k = star_update(&k, n);
        masses.push(incorrect_conditional_mass(&k, cap)?);
    }
    for (i, w) in masses.windows(2).enumerate() {
        c.check(
            w[1] < w[0],
            format!(
                "wrong-step mass did not decrease at t={}: {} -> {}",
                i + 1,
                w[0],
                w[1]
            ),
        );
    }
    let last = *masses.last().unwrap();
    c.witness("mass_last", last);
    c.check(
        last < COR3_MASS_TOL,
        format!(
            "wrong-step mass {last:e} not below {COR3_MASS_TOL:e} within {max_iters} iterations"
        ),
    );
    c.witness("iterations", (masses.len() - 1) as f64);
    Ok(c.finish())
}

/// Empirical part of the COR4 check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCheck {
    pub k: usize,
    pub t: usize,
    pub seed: u64,
    /// Allowed |delta_hat| in units of its standard error, including the noise
    /// carried over from earlier iterations.
    pub sigmas: f64,
}

impl Default for EmpiricalCheck {
    fn default() -> Self {
        EmpiricalCheck {
            k: 100_000,
            t: 5,
            seed: 20_240_601,
            sigmas: 4.0,
        }
    }
}

/// Slope of the exact update at `delta = 0`.
pub fn zero_slope(m: usize, n: usize) -> Result<f64> {
    let h = 1e-7;
    Ok(star_update(&kernel(m, n, h)?, n).delta() / h)
}

pub fn verify_cor4(
    m: usize,
    n: usize,
    t: usize,
    empirical: Option<EmpiricalCheck>,
    workers: usize,
) -> Result<Verdict> {
    let mut c = Checker::new(Claim::Cor4, m, n, 0.0, 0.0);
    let k0 = kernel(m, n, 0.0)?;
    let uniform_reward = 1.0 / m as f64;
    c.check(
        forward(&k0, n).a == uniform_reward,
        "forward(P_u, N).A differs from 1/M",
    );
    let trace = iterate(
        &k0,
        n,
        StopRule {
            max_iters: t,
            gap_tol: 0.0,
        },
    )?;
    let moved = trace
        .rows
        .iter()
        .filter(|r| r.delta != 0.0 || r.reward != uniform_reward)
        .count();
    c.check(
        moved == 0,
        format!("{moved} rows left the uniform fixed point"),
    );
    c.witness("iterations", (trace.rows.len() - 1) as f64);
    c.witness("J", trace.last().reward);

    if let Some(e) = empirical {
        let cfg = RunConfig {
            m,
            n,
            delta0: 0.0,
            k: e.k,
            t: e.t,
            seed: e.seed,
            estimator_mode: EstimatorMode::Pooled,
            projection: Projection::ProjectSymmetric,
            smoothing: 0.0,
        };
        let emp = run_rl_star(&cfg, workers)?;
        // delta = 0 is an unstable fixed point: estimation noise from earlier
        // iterations is carried forward with the update's slope at 0.
        let gain = zero_slope(m, n)?;
        c.witness("slope_at_zero", gain);
        let mut variance = 0.0;
        let mut worst: f64 = 0.0;
        for row in emp.rows.iter().skip(1) {
            variance = gain * gain * variance + row.delta_hat_stderr * row.delta_hat_stderr;
            let z = row.delta.abs() / variance.sqrt();
            worst = worst.max(z);
            c.check(
                z <= e.sigmas,
                format!(
                    "t={}: delta_hat = {} is {z:.2} standard errors from 0",
                    row.t, row.delta
                ),
            );
        }
        c.witness("empirical_max_sigmas", worst);
        c.witness("empirical_K", e.k as f64);
    }
    Ok(c.finish())
}

/// Parameter grid for [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub ms: Vec<usize>,
    pub ns: Vec<usize>,
    /// Candidate `delta0` values; each is used only where `0 < delta0 < 1 - 1/M`,
    /// and `0` routes the point to COR4 alone.
    pub deltas: Vec<f64>,
    /// Equality tolerance for THM1, THM2, COR1 and COR3.
    pub tol: f64,
    pub gap_tol: f64,
    pub max_iters: usize,
    pub cor4_iters: usize,
    pub empirical: Option<EmpiricalCheck>,
    pub cap: u64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            ms: vec![2, 3, 4],
            ns: vec![2, 3, 4, 5],
            deltas: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            tol: 1e-10,
            gap_tol: 1e-6,
            max_iters: 2000,
            cor4_iters: 50,
            empirical: Some(EmpiricalCheck::default()),
            cap: crate::oracle::DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Job {
    Thm1(f64),
    Thm2(usize, usize, f64),
    Cor1(usize, usize, f64),
    Cor2(usize, usize, f64),
    Cor3(usize, usize, f64),
    Cor4(usize, usize),
}

impl Grid {
    fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for &m in &self.ms {
            for &n in &self.ns {
                if self.deltas.contains(&0.0) {
                    jobs.push(Job::Cor4(m, n));
                }
                for &d in self.deltas.iter().filter(|&&d| in_open_interval(m, d)) {
                    if m == 2 && n == 2 {
                        jobs.push(Job::Thm1(d));
                    }
                    if n >= 2 {
                        jobs.push(Job::Thm2(m, n, d));
                    }
                    jobs.push(Job::Cor1(m, n, d));
                    jobs.push(Job::Cor2(m, n, d));
                    jobs.push(Job::Cor3(m, n, d));
                }
            }
        }
        jobs
    }

    fn run(&self, job: Job, workers: usize) -> Result<Verdict> {
        match job {
            Job::Thm1(d) => verify_thm1(d, self.tol, self.cap),
            Job::Thm2(m, n, d) => verify_thm2(m, n, d, self.tol, self.cap),
            Job::Cor1(m, n, d) => verify_cor1(m, n, d, self.max_iters, self.tol, self.cap),
            Job::Cor2(m, n, d) => verify_cor2(m, n, d, self.gap_tol, self.max_iters),
            Job::Cor3(m, n, d) => verify_cor3(m, n, d, self.tol, self.max_iters, self.cap),
            Job::Cor4(m, n) => verify_cor4(m, n, self.cor4_iters, self.empirical, workers),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub verdicts: Vec<Verdict>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }

    pub fn summary(&self) -> String {
        let mut out: String = self
            .verdicts
            .iter()
            .map(|v| v.summary_line() + "\n")
            .collect();
        let passed = self.verdicts.iter().filter(|v| v.pass).count();
        out.push_str(&format!(
            "{passed}/{} verdicts passed\n",
            self.verdicts.len()
        ));
        out
    }
}

/// Verifies every claim on every applicable grid point. Points run
/// concurrently on `workers` threads (0 = rayon default); the report is
/// sorted by claim and grid key.
pub fn run_suite(grid: &Grid, workers: usize) -> Result<SuiteReport> {
    let jobs = grid.jobs();
    let run_all = || {
        jobs.par_iter()
            .map(|&job| grid.run(job, workers))
            .collect::<Result<Vec<_>>>()
    };
    let mut verdicts = if workers == 0 {
        run_all()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_or_else(|_| run_all(), |pool| pool.install(run_all))?
    };
    verdicts.sort_by_key(Verdict::sort_key);
    Ok(SuiteReport { verdicts })
}
