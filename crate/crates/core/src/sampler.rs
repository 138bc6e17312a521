//! Sampled RL-STaR: roll out the current policy, keep the trajectories that
//! reach their problem's answer, and re-estimate the transition tables from
//! the kept adjacent pairs.
//!
//! Randomness is split into independent ChaCha streams keyed by
//! `(seed, iteration, trajectory index)`, so the sampled multiset does not
//! depend on how rollouts are scheduled across worker threads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{fit_symmetric, make_symmetric, ChainSpec, DenseKernel, SymmetricKernel};

/// A rollout: `states[n]` is the state index at step `n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    /// Index of the problem this rollout answers (its start state).
    pub problem: usize,
    pub states: Vec<usize>,
}

impl Trajectory {
    pub fn final_state(&self) -> usize {
        *self
            .states
            .last()
            .expect("trajectory has at least the start state")
    }
}

/// Question/answer pairs: problem `p` starts at step-0 state `start(p)` and
/// is solved when the rollout ends at step-`N` state `answer(p)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSet {
    pairs: Vec<(usize, usize)>,
}

impl ProblemSet {
    /// One problem per branch, `(s_{0,m}, s_{N,m})`.
    pub fn diagonal(m: usize) -> Self {
        ProblemSet {
            pairs: (0..m).map(|i| (i, i)).collect(),
        }
    }

    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return invalid("problem set is empty");
        }
        Ok(ProblemSet { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn start(&self, p: usize) -> usize {
        self.pairs[p].0
    }

    pub fn answer(&self, p: usize) -> usize {
        self.pairs[p].1
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_solved(&self, t: &Trajectory) -> bool {
        t.final_state() == self.answer(t.problem)
    }
}

/// One transition table per step; step `n` (1-based) maps states at `n-1`
/// to states at `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepKernels {
    steps: Vec<DenseKernel>,
}

impl StepKernels {
    pub fn new(steps: Vec<DenseKernel>) -> Result<Self> {
        if steps.is_empty() {
            return invalid("a chain needs at least one step");
        }
        if let Some(i) = steps.windows(2).position(|w| w[0].cols() != w[1].rows()) {
            return invalid(format!(
                "step {} has {} destination states but step {} has {} sources",
                i + 1,
                steps[i].cols(),
                i + 2,
                steps[i + 1].rows()
            ));
        }
        Ok(StepKernels { steps })
    }

    pub fn repeated(kernel: DenseKernel, n: usize) -> Result<Self> {
        if !kernel.is_square() {
            return invalid("a repeated step kernel must be square");
        }
        StepKernels::new(vec![kernel; n])
    }

    pub fn from_symmetric(k: &SymmetricKernel) -> Self {
        StepKernels {
            steps: vec![k.to_dense(); k.n()],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// Kernel of step `n`, 1-based.
    pub fn step(&self, n: usize) -> &DenseKernel {
        &self.steps[n - 1]
    }

    pub fn steps(&self) -> &[DenseKernel] {
        &self.steps
    }

    /// Number of states at step `n` (0-based over `0..=N`).
    pub fn states_at(&self, n: usize) -> usize {
        if n == 0 {
            self.steps[0].rows()
        } else {
            self.steps[n - 1].cols()
        }
    }

    /// All steps share one square shape.
    pub fn is_homogeneous(&self) -> bool {
        let first = &self.steps[0];
        first.is_square()
            && self
                .steps
                .iter()
                .all(|s| s.rows() == first.rows() && s.cols() == first.cols())
    }
}

/// Ground-truth successor of every state at every step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthPaths {
    successors: Vec<Vec<usize>>,
}

impl GroundTruthPaths {
    /// Disjoint paths: branch `m` always continues to branch `m`.
    pub fn identity(m: usize, n: usize) -> Self {
        GroundTruthPaths {
            successors: vec![(0..m).collect(); n],
        }
    }

    pub fn new(successors: Vec<Vec<usize>>) -> Self {
        GroundTruthPaths { successors }
    }

    /// Successor of `state` at step `n - 1`, under step `n` (1-based).
    pub fn successor(&self, n: usize, state: usize) -> usize {
        self.successors[n - 1][state]
    }

    pub fn n_steps(&self) -> usize {
        self.successors.len()
    }

    fn check_against(&self, kernels: &StepKernels) -> Result<()> {
        if self.successors.len() != kernels.n_steps() {
            return invalid(format!(
                "ground truth has {} steps, kernels have {}",
                self.successors.len(),
                kernels.n_steps()
            ));
        }
        for (i, (succ, k)) in self.successors.iter().zip(kernels.steps()).enumerate() {
            if succ.len() != k.rows() || succ.iter().any(|&s| s >= k.cols()) {
                return invalid(format!(
                    "ground truth does not fit the shape of step {}",
                    i + 1
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
enum StreamPurpose {
    Rollout = 0,
    PairChoice = 1,
}

/// Independent stream for `(seed, iteration, index, purpose)`.
fn stream(seed: u64, iteration: usize, index: usize, purpose: StreamPurpose) -> ChaCha8Rng {
    debug_assert!(index < 1 << 32 && iteration < 1 << 30);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 34) | ((index as u64) << 2) | purpose as u64);
    rng
}

fn draw_index<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    // Row sums can fall short of 1 by rounding.
    last_positive
}

/// Rolls out `policy` from problem `problem`'s start state, consuming exactly
/// one draw per step.
pub fn sample_trajectory<R: Rng + ?Sized>(
    policy: &StepKernels,
    problems: &ProblemSet,
    problem: usize,
    rng: &mut R,
) -> Trajectory {
    let mut states = Vec::with_capacity(policy.n_steps() + 1);
    let mut current = problems.start(problem);
    states.push(current);
    for kernel in policy.steps() {
        current = draw_index(kernel.row(current), rng);
        states.push(current);
    }
    Trajectory { problem, states }
}

/// Trajectory `index` of iteration `iteration`: a uniform problem draw followed
/// by one rollout, all from the trajectory's own stream.
pub fn sample_indexed(
    policy: &StepKernels,
    problems: &ProblemSet,
    seed: u64,
    iteration: usize,
    index: usize,
) -> Trajectory {
    let mut rng = stream(seed, iteration, index, StreamPurpose::Rollout);
    let problem = rng.random_range(0..problems.len());
    sample_trajectory(policy, problems, problem, &mut rng)
}

/// Samples `k` trajectories for one iteration. Output order is the index
/// order regardless of `workers`.
pub fn sample_batch(
    policy: &StepKernels,
    problems: &ProblemSet,
    seed: u64,
    iteration: usize,
    k: usize,
    workers: usize,
) -> Vec<Trajectory> {
    let run = || {
        (0..k)
            .into_par_iter()
            .map(|i| sample_indexed(policy, problems, seed, iteration, i))
            .collect()
    };
    if workers == 1 {
        return (0..k)
            .map(|i| sample_indexed(policy, problems, seed, iteration, i))
            .collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// Success-only trajectories of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredDataset {
    pub iteration: usize,
    pub kept: Vec<Trajectory>,
    pub total_sampled: usize,
    pub kept_count: usize,
}

impl FilteredDataset {
    /// Empirical reward estimate `kept_count / total_sampled`.
    pub fn kept_fraction(&self) -> f64 {
        if self.total_sampled == 0 {
            0.0
        } else {
            self.kept_count as f64 / self.total_sampled as f64
        }
    }
}

pub fn filter(trajs: Vec<Trajectory>, problems: &ProblemSet, iteration: usize) -> FilteredDataset {
    let total_sampled = trajs.len();
    let kept: Vec<Trajectory> = trajs
        .into_iter()
        .filter(|t| problems.is_solved(t))
        .collect();
    FilteredDataset {
        iteration,
        kept_count: kept.len(),
        kept,
        total_sampled,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// All adjacent pairs of every kept trajectory feed one shared table.
    #[default]
    Pooled,
    /// One table per step.
    PerStep,
    /// One uniformly chosen pair per kept trajectory, into one shared table.
    SinglePair,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    #[default]
    RawDense,
    ProjectSymmetric,
}

/// Settings shared by every RL-STaR loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub k: usize,
    pub t: usize,
    pub seed: u64,
    pub estimator_mode: EstimatorMode,
    pub projection: Projection,
    pub smoothing: f64,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("K must be >= 1");
        }
        if self.k >= 1 << 32 {
            return invalid("K must be < 2^32");
        }
        if self.t == 0 {
            return invalid("T must be >= 1");
        }
        if self.t >= 1 << 29 {
            return invalid("T must be < 2^29");
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return invalid(format!(
                "smoothing must be finite and >= 0 (got {})",
                self.smoothing
            ));
        }
        Ok(())
    }
}

/// RL-STaR run on the symmetric toy chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub m: usize,
    pub n: usize,
    pub delta0: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    #[serde(default)]
    pub estimator_mode: EstimatorMode,
    #[serde(default)]
    pub projection: Projection,
    #[serde(default)]
    pub smoothing: f64,
}

impl RunConfig {
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            k: self.k,
            t: self.t,
            seed: self.seed,
            estimator_mode: self.estimator_mode,
            projection: self.projection,
            smoothing: self.smoothing,
        }
    }

    pub fn initial_kernel(&self) -> Result<SymmetricKernel> {
        make_symmetric(ChainSpec::new(self.m, self.n)?, self.delta0)
    }

    pub fn validate(&self) -> Result<()> {
        self.initial_kernel()?;
        self.loop_config().validate()
    }
}

/// A re-estimated table row that had no observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CarriedRow {
    /// 1-based step, or 0 for the shared pooled table.
    pub step: usize,
    pub row: usize,
}

/// Raw pair counts for one table.
#[derive(Debug, Clone, PartialEq)]
struct CountTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl CountTable {
    fn new(rows: usize, cols: usize) -> Self {
        CountTable {
            rows,
            cols,
            counts: vec![0; rows * cols],
        }
    }

    fn add(&mut self, from: usize, to: usize) {
        self.counts[from * self.cols + to] += 1;
    }

    fn row(&self, r: usize) -> &[u64] {
        &self.counts[r * self.cols..(r + 1) * self.cols]
    }
}

/// Output of [`estimate_kernel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub kernels: StepKernels,
    pub carried: Vec<CarriedRow>,
    /// Binomial standard error of the signal estimate (mean ground-truth
    /// successor mass), treating pairs as independent.
    pub signal_stderr: f64,
    /// Number of adjacent pairs that entered the tables.
    pub pairs: u64,
}

/// Maximum-likelihood re-estimation of the step tables from kept pairs.
///
/// Zero-count rows are carried over from `previous` (and reported) unless
/// `smoothing > 0`, in which case `smoothing` is added to every cell of every
/// row before normalizing.
pub fn estimate_kernel(
    d: &FilteredDataset,
    cfg: &LoopConfig,
    previous: &StepKernels,
    truth: &GroundTruthPaths,
) -> Result<Estimate> {
    if d.kept_count == 0 {
        return Err(Error::EmptyFilter {
            iteration: d.iteration,
            sampled: d.total_sampled,
        });
    }
    let n = previous.n_steps();
    let shared = cfg.estimator_mode != EstimatorMode::PerStep;
    if shared && !previous.is_homogeneous() {
        return invalid(format!(
            "{:?} estimation needs every step to share one square shape",
            cfg.estimator_mode
        ));
    }

    let mut tables: Vec<CountTable> = if shared {
        let s = previous.step(1);
        vec![CountTable::new(s.rows(), s.cols())]
    } else {
        previous
            .steps()
            .iter()
            .map(|s| CountTable::new(s.rows(), s.cols()))
            .collect()
    };
    let mut pairs = 0u64;
    for (i, t) in d.kept.iter().enumerate() {
        match cfg.estimator_mode {
            EstimatorMode::Pooled => {
                for w in t.states.windows(2) {
                    tables[0].add(w[0], w[1]);
                }
                pairs += n as u64;
            }
            EstimatorMode::PerStep => {
                for (step, w) in t.states.windows(2).enumerate() {
                    tables[step].add(w[0], w[1]);
                }
                pairs += n as u64;
            }
            EstimatorMode::SinglePair => {
                let mut rng = stream(cfg.seed, d.iteration, i, StreamPurpose::PairChoice);
                let step = rng.random_range(1..=n);
                tables[0].add(t.states[step - 1], t.states[step]);
                pairs += 1;
            }
        }
    }

    let mut carried = Vec::new();
    let mut variance = 0.0;
    let mut signal_rows = 0usize;
    let mut estimated = Vec::with_capacity(tables.len());
    for (ti, table) in tables.iter().enumerate() {
        let step = if shared { 1 } else { ti + 1 };
        let prev = previous.step(step);
        let mut entries = Vec::with_capacity(table.rows * table.cols);
        for r in 0..table.rows {
            let counts = table.row(r);
            let total: u64 = counts.iter().sum();
            signal_rows += 1;
            if total > 0 {
                let p = counts[truth.successor(step, r)] as f64 / total as f64;
                variance += p * (1.0 - p) / total as f64;
            }
            if cfg.smoothing > 0.0 {
                let denom = total as f64 + cfg.smoothing * table.cols as f64;
                entries.extend(counts.iter().map(|&c| (c as f64 + cfg.smoothing) / denom));
            } else if total == 0 {
                carried.push(CarriedRow {
                    step: if shared { 0 } else { step },
                    row: r,
                });
                entries.extend_from_slice(prev.row(r));
            } else {
                entries.extend(counts.iter().map(|&c| c as f64 / total as f64));
            }
        }
        estimated.push(DenseKernel::new(table.rows, table.cols, entries)?);
    }
    let kernels = if shared {
        StepKernels::repeated(estimated.pop().expect("one shared table"), n)?
    } else {
        StepKernels::new(estimated)?
    };
    Ok(Estimate {
        kernels,
        carried,
        signal_stderr: variance.sqrt() / signal_rows as f64,
        pairs,
    })
}

/// Signal summary of a policy relative to the ground-truth paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Signal {
    /// Mean ground-truth successor probability over all rows of all steps.
    pub alpha: f64,
    /// `alpha` minus the mean uniform probability; `mean(diag) - 1/M` on a square chain.
    pub delta: f64,
    /// `max |P - P_truth|` over all steps.
    pub gap: f64,
}

pub fn signal(policy: &StepKernels, truth: &GroundTruthPaths) -> Signal {
    let mut alpha_sum = 0.0;
    let mut uniform_sum = 0.0;
    let mut rows = 0usize;
    let mut gap: f64 = 0.0;
    for (i, k) in policy.steps().iter().enumerate() {
        let step = i + 1;
        for r in 0..k.rows() {
            let succ = truth.successor(step, r);
            alpha_sum += k.get(r, succ);
            uniform_sum += 1.0 / k.cols() as f64;
            rows += 1;
            for (c, &p) in k.row(r).iter().enumerate() {
                let target = if c == succ { 1.0 } else { 0.0 };
                gap = gap.max((p - target).abs());
            }
        }
    }
    let alpha = alpha_sum / rows as f64;
    Signal {
        alpha,
        delta: alpha - uniform_sum / rows as f64,
        gap,
    }
}

/// One empirical iteration. Row `t` describes policy `P_t`; `kept` and the
/// reward come from the `K` rollouts drawn under `P_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalRow {
    pub t: usize,
    pub delta: f64,
    pub alpha: f64,
    pub reward: f64,
    pub gap: f64,
    pub kept: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub delta_hat_stderr: f64,
    /// Rows carried over from `P_{t-1}` when estimating `P_t`.
    pub carried_rows: usize,
}

pub const EMPIRICAL_CSV_HEADER: &str = "t,delta,alpha,reward,gap,kept,K,delta_hat_stderr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalTrace {
    pub rows: Vec<EmpiricalRow>,
}

impl EmpiricalTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(EMPIRICAL_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.t, r.delta, r.alpha, r.reward, r.gap, r.kept, r.k, r.delta_hat_stderr
            );
        }
        out
    }
}

/// Everything the generic loop needs to know about a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub initial: StepKernels,
    pub problems: ProblemSet,
    pub truth: GroundTruthPaths,
    /// Reported as row 0's `delta` in place of the value re-derived from `initial`.
    pub initial_delta: Option<f64>,
}

impl Setup {
    pub fn symmetric(k: &SymmetricKernel) -> Self {
        Setup {
            initial: StepKernels::from_symmetric(k),
            problems: ProblemSet::diagonal(k.m()),
            truth: GroundTruthPaths::identity(k.m(), k.n()),
            initial_delta: Some(k.delta()),
        }
    }
}

/// Empirical trace plus the policy of every iteration (`policies[t] = P_t`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalRun {
    pub trace: EmpiricalTrace,
    pub policies: Vec<StepKernels>,
}

/// Runs `cfg.t` RL-STaR iterations on an arbitrary chain, then one extra
/// rollout batch under the final policy so that every row carries a reward
/// estimate.
pub fn run_rl_star_on(setup: &Setup, cfg: &LoopConfig, workers: usize) -> Result<EmpiricalRun> {
    cfg.validate()?;
    setup.truth.check_against(&setup.initial)?;
    for &(s, a) in setup.problems.pairs() {
        if s >= setup.initial.states_at(0) || a >= setup.initial.states_at(setup.initial.n_steps())
        {
            return invalid(format!("problem ({s}, {a}) is outside the chain"));
        }
    }
    let n = setup.initial.n_steps();
    let square_identity = setup.initial.is_homogeneous()
        && setup.truth == GroundTruthPaths::identity(setup.initial.step(1).rows(), n);
    if cfg.projection == Projection::ProjectSymmetric && !square_identity {
        return invalid(
            "symmetric projection needs a square chain with disjoint ground-truth paths",
        );
    }

    let mut policy = setup.initial.clone();
    let mut policies = vec![policy.clone()];
    let mut rows = Vec::with_capacity(cfg.t + 1);
    let mut pending_stderr = 0.0;
    let mut pending_carried = 0;
    let mut pending_raw: Option<f64> = None;
    for t in 0..=cfg.t {
        let batch = sample_batch(&policy, &setup.problems, cfg.seed, t, cfg.k, workers);
        let data = filter(batch, &setup.problems, t + 1);
        let sig = signal(&policy, &setup.truth);
        // A projected policy is clamped into the family; report the raw fit.
        let (delta, alpha) = match (t, setup.initial_delta, pending_raw.take()) {
            (0, Some(d0), _) => (d0, sig.alpha),
            (_, _, Some(raw)) => (raw, sig.alpha - sig.delta + raw),
            _ => (sig.delta, sig.alpha),
        };
        rows.push(EmpiricalRow {
            t,
            delta,
            alpha,
            reward: data.kept_fraction(),
            gap: sig.gap,
            kept: data.kept_count,
            k: cfg.k,
            delta_hat_stderr: pending_stderr,
            carried_rows: pending_carried,
        });
        if t == cfg.t {
            break;
        }
        let est = estimate_kernel(&data, cfg, &policy, &setup.truth)?;
        pending_stderr = est.signal_stderr;
        pending_carried = est.carried.len();
        policy = match cfg.projection {
            Projection::RawDense => est.kernels,
            Projection::ProjectSymmetric => {
                let deltas = est
                    .kernels
                    .steps()
                    .iter()
                    .map(|s| fit_symmetric(s, n, f64::INFINITY).map(|f| f.delta))
                    .collect::<Result<Vec<_>>>()?;
                let raw = deltas.iter().sum::<f64>() / n as f64;
                pending_raw = Some(raw);
                let spec = ChainSpec::new(policy.step(1).rows(), n)?;
                StepKernels::from_symmetric(&SymmetricKernel::from_update(spec, raw))
            }
        };
        policies.push(policy.clone());
    }
    Ok(EmpiricalRun {
        trace: EmpiricalTrace { rows },
        policies,
    })
}

/// Runs RL-STaR on the symmetric toy chain described by `cfg`.
pub fn run_rl_star(cfg: &RunConfig, workers: usize) -> Result<EmpiricalTrace> {
    cfg.validate()?;
    let k0 = cfg.initial_kernel()?;
    Ok(run_rl_star_on(&Setup::symmetric(&k0), &cfg.loop_config(), workers)?.trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn sym(m: usize, n: usize, delta: f64) -> SymmetricKernel {
        make_symmetric(ChainSpec::new(m, n).unwrap(), delta).unwrap()
    }

    fn cfg(mode: EstimatorMode, smoothing: f64) -> LoopConfig {
        LoopConfig {
            k: 10,
            t: 1,
            seed: 1,
            estimator_mode: mode,
            projection: Projection::RawDense,
            smoothing,
        }
    }

    #[test]
    fn ground_truth_rollouts_are_deterministic() {
        let k = sym(4, 5, 0.75);
        let policy = StepKernels::from_symmetric(&k);
        let problems = ProblemSet::diagonal(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 0..4 {
            for _ in 0..20 {
                let t = sample_trajectory(&policy, &problems, m, &mut rng);
                assert_eq!(t.states, vec![m; 6]);
            }
        }
    }

    #[test]
    fn rollout_consumes_one_draw_per_step() {
        let policy = StepKernels::from_symmetric(&sym(3, 7, 0.2));
        let problems = ProblemSet::diagonal(3);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = a.clone();
        sample_trajectory(&policy, &problems, 1, &mut a);
        for _ in 0..7 {
            let _: f64 = b.random();
        }
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn filter_keeps_only_solved() {
        let problems = ProblemSet::diagonal(2);
        let trajs = vec![
            Trajectory {
                problem: 0,
                states: vec![0, 0, 0],
            },
            Trajectory {
                problem: 0,
                states: vec![0, 1, 1],
            },
            Trajectory {
                problem: 1,
                states: vec![1, 0, 1],
            },
        ];
        let d = filter(trajs, &problems, 1);
        assert_eq!(d.kept_count, 2);
        assert_eq!(d.total_sampled, 3);
        assert!((d.kept_fraction() - 2.0 / 3.0).abs() < 1e-15);

        let policy = StepKernels::from_symmetric(&sym(3, 4, 2.0 / 3.0));
        let batch = sample_batch(&policy, &ProblemSet::diagonal(3), 5, 0, 500, 1);
        assert_eq!(filter(batch, &ProblemSet::diagonal(3), 1).kept_count, 500);
    }

    #[test]
    fn diagonal_pairs_estimate_identity() {
        let prev = StepKernels::from_symmetric(&sym(2, 2, 0.1));
        let d = FilteredDataset {
            iteration: 1,
            kept: vec![
                Trajectory {
                    problem: 0,
                    states: vec![0, 0, 0],
                },
                Trajectory {
                    problem: 1,
                    states: vec![1, 1, 1],
                },
            ],
            total_sampled: 2,
            kept_count: 2,
        };
        let truth = GroundTruthPaths::identity(2, 2);
        for mode in [EstimatorMode::Pooled, EstimatorMode::PerStep] {
            let est = estimate_kernel(&d, &cfg(mode, 0.0), &prev, &truth).unwrap();
            for s in est.kernels.steps() {
                assert_eq!(s, &DenseKernel::identity(2));
            }
            assert!(est.carried.is_empty());
        }
    }

    #[test]
    fn unobserved_rows_are_carried_and_flagged() {
        let prev = StepKernels::from_symmetric(&sym(3, 2, 0.2));
        let d = FilteredDataset {
            iteration: 4,
            kept: vec![
                Trajectory {
                    problem: 0,
                    states: vec![0, 1, 0],
                },
                Trajectory {
                    problem: 1,
                    states: vec![1, 1, 1],
                },
            ],
            total_sampled: 9,
            kept_count: 2,
        };
        let truth = GroundTruthPaths::identity(3, 2);
        let est = estimate_kernel(&d, &cfg(EstimatorMode::Pooled, 0.0), &prev, &truth).unwrap();
        assert_eq!(est.carried, vec![CarriedRow { step: 0, row: 2 }]);
        assert_eq!(est.kernels.step(1).row(2), prev.step(1).row(2));
        assert_eq!(est.kernels.step(1).row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(est.kernels.step(1).row(1), &[1.0 / 3.0, 2.0 / 3.0, 0.0]);

        let est = estimate_kernel(&d, &cfg(EstimatorMode::Pooled, 1.0), &prev, &truth).unwrap();
        assert!(est.carried.is_empty());
        assert_eq!(est.kernels.step(1).row(2), &[1.0 / 3.0; 3]);
        assert_eq!(est.kernels.step(1).row(0), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn empty_filter_is_an_error() {
        let prev = StepKernels::from_symmetric(&sym(2, 2, 0.1));
        let d = FilteredDataset {
            iteration: 3,
            kept: vec![],
            total_sampled: 5,
            kept_count: 0,
        };
        let err = estimate_kernel(
            &d,
            &cfg(EstimatorMode::Pooled, 0.0),
            &prev,
            &GroundTruthPaths::identity(2, 2),
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::EmptyFilter {
                iteration: 3,
                sampled: 5
            }
        );
        assert!(err.to_string().contains("kept_count=0"));
    }

    #[test]
    fn single_pair_uses_one_pair_per_trajectory() {
        let prev = StepKernels::from_symmetric(&sym(2, 3, 0.1));
        let d = FilteredDataset {
            iteration: 1,
            kept: vec![
                Trajectory {
                    problem: 0,
                    states: vec![0, 1, 1, 0]
                };
                7
            ],
            total_sampled: 7,
            kept_count: 7,
        };
        let est = estimate_kernel(
            &d,
            &cfg(EstimatorMode::SinglePair, 0.0),
            &prev,
            &GroundTruthPaths::identity(2, 3),
        )
        .unwrap();
        assert_eq!(est.pairs, 7);
    }

    #[test]
    fn signal_of_symmetric_policy() {
        let k = sym(3, 4, 0.25);
        let s = signal(
            &StepKernels::from_symmetric(&k),
            &GroundTruthPaths::identity(3, 4),
        );
        assert!((s.delta - 0.25).abs() < 1e-15);
        assert!((s.alpha - k.alpha()).abs() < 1e-15);
        assert!((s.gap - k.gap()).abs() < 1e-15);
    }

    fn run_cfg(seed: u64) -> RunConfig {
        RunConfig {
            m: 3,
            n: 3,
            delta0: 0.15,
            k: 2_000,
            t: 3,
            seed,
            estimator_mode: EstimatorMode::Pooled,
            projection: Projection::RawDense,
            smoothing: 0.0,
        }
    }

    #[test]
    fn runs_are_reproducible_across_worker_counts() {
        let a = run_rl_star(&run_cfg(11), 1).unwrap().to_csv();
        let b = run_rl_star(&run_cfg(11), 4).unwrap().to_csv();
        let c = run_rl_star(&run_cfg(11), 0).unwrap().to_csv();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_ne!(a, run_rl_star(&run_cfg(12), 1).unwrap().to_csv());
    }

    #[test]
    fn trace_layout() {
        let trace = run_rl_star(&run_cfg(5), 1).unwrap();
        assert_eq!(trace.rows.len(), 4);
        assert_eq!(trace.rows[0].delta, 0.15);
        assert_eq!(trace.rows[0].delta_hat_stderr, 0.0);
        assert!(trace.rows[1..].iter().all(|r| r.delta_hat_stderr > 0.0));
        assert!(trace.rows.iter().all(|r| r.k == 2_000 && r.kept <= 2_000));
        let csv = trace.to_csv();
        assert!(csv.starts_with("t,delta,alpha,reward,gap,kept,K,delta_hat_stderr\n0,0.15,"));
    }

    #[test]
    fn run_config_json() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"m":2,"n":2,"delta0":0.1,"K":100000,"T":8,"seed":7,"projection":"project_symmetric"}"#,
        )
        .unwrap();
        assert_eq!(cfg.k, 100_000);
        assert_eq!(cfg.estimator_mode, EstimatorMode::Pooled);
        assert_eq!(cfg.projection, Projection::ProjectSymmetric);
        assert!(cfg.validate().is_ok());
        let bad = RunConfig { k: 0, ..cfg };
        assert!(bad.validate().is_err());
        let bad = RunConfig { delta0: 0.7, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn projection_needs_square_identity_chain() {
        let setup = Setup {
            initial: StepKernels::new(vec![DenseKernel::uniform(2, 3), DenseKernel::uniform(3, 2)])
                .unwrap(),
            problems: ProblemSet::new(vec![(0, 0), (1, 1)]).unwrap(),
            truth: GroundTruthPaths::new(vec![vec![0, 1], vec![0, 1, 1]]),
            initial_delta: None,
        };
        let mut cfg = cfg(EstimatorMode::PerStep, 0.0);
        cfg.projection = Projection::ProjectSymmetric;
        assert!(run_rl_star_on(&setup, &cfg, 1).is_err());
        cfg.projection = Projection::RawDense;
        assert!(run_rl_star_on(&setup, &cfg, 1).is_ok());
        cfg.estimator_mode = EstimatorMode::Pooled;
        assert!(run_rl_star_on(&setup, &cfg, 1).is_err());
    }
}
