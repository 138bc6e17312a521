//! Binary addition as a chain-of-thought domain.
//!
//! A state holds the remaining expression `x`, the carry `z` and the output
//! bits `y`. Each step adds the lowest remaining bit pair and prepends the
//! sum bit to `y`; the last step flushes the carry. With `b`-bit operands the
//! chain has `N = b + 1` steps:
//!
//! ```text
//! x='101+110', z='', y=''
//! x='10+11', z='0', y='1'
//! x='1+1', z='0', y='11'
//! x='', z='1', y='011'
//! x='', z='', y='1011'
//! ```
//!
//! When the final carry is `0` the flush step only clears `z`.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::kernels::DenseKernel;
use crate::oracle::propagated_accuracy;
use crate::sampler::{
    run_rl_star_on, EmpiricalTrace, EstimatorMode, GroundTruthPaths, LoopConfig, ProblemSet,
    Projection, Setup, StepKernels,
};

pub const MAX_BITS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BinAddState {
    pub x: String,
    pub z: String,
    pub y: String,
}

impl fmt::Display for BinAddState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x='{}', z='{}', y='{}'", self.x, self.z, self.y)
    }
}

fn is_bits(s: &str) -> bool {
    s.bytes().all(|c| c == b'0' || c == b'1')
}

impl BinAddState {
    /// Start state for `lhs + rhs`, both given as bit strings of equal length.
    pub fn start(lhs: &str, rhs: &str) -> Result<Self> {
        if lhs.is_empty() || lhs.len() != rhs.len() || !is_bits(lhs) || !is_bits(rhs) {
            return invalid(format!(
                "operands must be non-empty bit strings of equal width (got '{lhs}', '{rhs}')"
            ));
        }
        Ok(BinAddState {
            x: format!("{lhs}+{rhs}"),
            z: String::new(),
            y: String::new(),
        })
    }

    /// Parses `"101+110"` into a start state.
    pub fn parse_problem(expr: &str) -> Result<Self> {
        match expr.split_once('+') {
            Some((l, r)) => BinAddState::start(l, r),
            None => invalid(format!("expected '<bits>+<bits>' (got '{expr}')")),
        }
    }

    /// Start state for integers `lhs + rhs`, zero-padded to `bits` wide.
    pub fn from_operands(lhs: u32, rhs: u32, bits: usize) -> Result<Self> {
        if bits == 0 || bits > 16 || lhs >> bits != 0 || rhs >> bits != 0 {
            return invalid(format!("operands {lhs}, {rhs} do not fit in {bits} bits"));
        }
        BinAddState::start(&format!("{lhs:0bits$b}"), &format!("{rhs:0bits$b}"))
    }

    pub fn is_final(&self) -> bool {
        self.x.is_empty() && self.z.is_empty()
    }
}

/// Applies one step of the deterministic addition procedure.
pub fn ground_truth_step(s: &BinAddState) -> Result<BinAddState> {
    if s.is_final() {
        return Err(Error::AlreadyFinal(s.to_string()));
    }
    if s.x.is_empty() {
        let y = if s.z == "1" {
            format!("1{}", s.y)
        } else {
            s.y.clone()
        };
        return Ok(BinAddState {
            x: String::new(),
            z: String::new(),
            y,
        });
    }
    let Some((lhs, rhs)) = s.x.split_once('+') else {
        return invalid(format!("malformed expression '{}'", s.x));
    };
    if lhs.is_empty() || lhs.len() != rhs.len() || !is_bits(lhs) || !is_bits(rhs) {
        return invalid(format!("malformed expression '{}'", s.x));
    }
    let carry = match s.z.as_str() {
        "" | "0" => 0,
        "1" => 1,
        other => return invalid(format!("malformed carry '{other}'")),
    };
    let bit = |t: &str| u8::from(t.ends_with('1'));
    let sum = bit(lhs) + bit(rhs) + carry;
    let (lhs, rhs) = (&lhs[..lhs.len() - 1], &rhs[..rhs.len() - 1]);
    Ok(BinAddState {
        x: if lhs.is_empty() {
            String::new()
        } else {
            format!("{lhs}+{rhs}")
        },
        z: (sum / 2).to_string(),
        y: format!("{}{}", sum % 2, s.y),
    })
}

/// Ground-truth path from `s` until the final state.
pub fn ground_truth_trace(s: &BinAddState) -> Result<Vec<BinAddState>> {
    let mut out = vec![s.clone()];
    let mut cur = s.clone();
    while !cur.is_final() {
        cur = ground_truth_step(&cur)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Problems that reach the same state at an intermediate step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Collision {
    pub step: usize,
    pub state: String,
    pub problems: Vec<String>,
}

/// Reachable states and ground-truth kernels for `b`-bit addition.
#[derive(Debug, Clone, PartialEq)]
pub struct BinAddChain {
    pub bits: usize,
    /// `states[n]` lists the states reachable at step `n`, in discovery order.
    pub states: Vec<Vec<BinAddState>>,
    /// Problem `p` is `start_label(p)`; its start is `states[0][p]`.
    pub problems: ProblemSet,
    pub truth: GroundTruthPaths,
    pub ground_truth: StepKernels,
    pub collisions: Vec<Collision>,
}

impl BinAddChain {
    /// Number of reasoning steps, `b + 1`.
    pub fn n_steps(&self) -> usize {
        self.bits + 1
    }

    pub fn problem_label(&self, p: usize) -> &str {
        &self.states[0][p].x
    }

    pub fn index_of(&self, step: usize, s: &BinAddState) -> Option<usize> {
        self.states.get(step)?.iter().position(|t| t == s)
    }

    /// Distinct problem pairs that share some intermediate state, with the
    /// first step at which they meet.
    pub fn colliding_pairs(&self) -> Vec<(String, String, usize)> {
        let mut seen = HashMap::new();
        for c in &self.collisions {
            for (i, a) in c.problems.iter().enumerate() {
                for b in &c.problems[i + 1..] {
                    seen.entry((a.clone(), b.clone())).or_insert(c.step);
                }
            }
        }
        let mut pairs: Vec<_> = seen.into_iter().map(|((a, b), s)| (a, b, s)).collect();
        pairs.sort_by(|x, y| (x.2, &x.0, &x.1).cmp(&(y.2, &y.0, &y.1)));
        pairs
    }

    /// JSON export: states per step (display form) and the ground-truth kernels.
    pub fn to_json(&self, kernels: &StepKernels) -> serde_json::Value {
        serde_json::json!({
            "bits": self.bits,
            "states": self
                .states
                .iter()
                .map(|step| step.iter().map(ToString::to_string).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "kernels": kernels.steps(),
        })
    }
}

pub fn build_chain(bits: usize) -> Result<BinAddChain> {
    if bits == 0 || bits > MAX_BITS {
        return invalid(format!(
            "operand width must satisfy 1 <= b <= {MAX_BITS} (got {bits})"
        ));
    }
    let n = bits + 1;
    let width = 1u32 << bits;
    let mut paths = Vec::with_capacity((width * width) as usize);
    for lhs in 0..width {
        for rhs in 0..width {
            let path = ground_truth_trace(&BinAddState::from_operands(lhs, rhs, bits)?)?;
            debug_assert_eq!(path.len(), n + 1);
            paths.push(path);
        }
    }

    let mut states: Vec<Vec<BinAddState>> = vec![Vec::new(); n + 1];
    let mut index: Vec<HashMap<BinAddState, usize>> = vec![HashMap::new(); n + 1];
    let mut visits: Vec<Vec<Vec<usize>>> = vec![Vec::new(); n + 1];
    for (p, path) in paths.iter().enumerate() {
        for (step, s) in path.iter().enumerate() {
            let idx = *index[step].entry(s.clone()).or_insert_with(|| {
                states[step].push(s.clone());
                visits[step].push(Vec::new());
                states[step].len() - 1
            });
            visits[step][idx].push(p);
        }
    }

    let mut successors: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut kernels = Vec::with_capacity(n);
    for step in 1..=n {
        let (rows, cols) = (states[step - 1].len(), states[step].len());
        let mut succ = Vec::with_capacity(rows);
        let mut entries = vec![0.0; rows * cols];
        for (r, s) in states[step - 1].iter().enumerate() {
            let next = ground_truth_step(s)?;
            let c = *index[step]
                .get(&next)
                .expect("successors of reachable states are enumerated");
            succ.push(c);
            entries[r * cols + c] = 1.0;
        }
        successors.push(succ);
        kernels.push(DenseKernel::new(rows, cols, entries)?);
    }

    let label = |p: usize| paths[p][0].x.clone();
    let mut collisions = Vec::new();
    for step in 1..n {
        for (idx, problems) in visits[step].iter().enumerate() {
            if problems.len() > 1 {
                collisions.push(Collision {
                    step,
                    state: states[step][idx].to_string(),
                    problems: problems.iter().map(|&p| label(p)).collect(),
                });
            }
        }
    }

    let pairs = paths
        .iter()
        .enumerate()
        .map(|(p, path)| (p, index[n][&path[n]]))
        .collect();
    Ok(BinAddChain {
        bits,
        states,
        problems: ProblemSet::new(pairs)?,
        truth: GroundTruthPaths::new(successors),
        ground_truth: StepKernels::new(kernels)?,
        collisions,
    })
}

/// Per-step interpolation between the uniform kernel and the ground truth:
/// the correct successor gets `1/M_n + delta0`, every other state
/// `1/M_n - delta0/(M_n - 1)`, where `M_n` is the step's destination count.
pub fn noisy_kernel(chain: &BinAddChain, delta0: f64) -> Result<StepKernels> {
    if !(delta0 >= 0.0 && delta0.is_finite()) {
        return invalid(format!("delta0 must be finite and >= 0 (got {delta0})"));
    }
    let mut steps = Vec::with_capacity(chain.n_steps());
    for (i, gt) in chain.ground_truth.steps().iter().enumerate() {
        let step = i + 1;
        let fan_out = gt.cols();
        if fan_out == 1 {
            steps.push(gt.clone());
            continue;
        }
        let mf = fan_out as f64;
        let bound = 1.0 - 1.0 / mf;
        if delta0 > bound {
            return invalid(format!(
                "delta0 = {delta0} exceeds 1 - 1/M_n = {bound} at step {step} (M_n = {fan_out})"
            ));
        }
        let weight = mf / (mf - 1.0) * delta0;
        let base = (1.0 - weight) / mf;
        let entries = gt
            .iter_rows()
            .flat_map(|row| row.iter().map(move |&g| base + weight * g))
            .collect();
        steps.push(DenseKernel::new(gt.rows(), fan_out, entries)?);
    }
    StepKernels::new(steps)
}

/// Largest `delta0` accepted by [`noisy_kernel`] for this chain.
pub fn max_delta0(chain: &BinAddChain) -> f64 {
    chain
        .ground_truth
        .steps()
        .iter()
        .filter(|k| k.cols() > 1)
        .map(|k| 1.0 - 1.0 / k.cols() as f64)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinAddRun {
    pub trace: EmpiricalTrace,
    /// Exact answer accuracy of `P_t` over all problems, `t = 0..=T`.
    pub accuracy: Vec<f64>,
    pub collisions: usize,
}

/// RL-STaR on the binary-addition chain with per-step raw estimates.
pub fn run_star_on_binadd(
    bits: usize,
    delta0: f64,
    k: usize,
    t: usize,
    seed: u64,
    workers: usize,
) -> Result<BinAddRun> {
    let chain = build_chain(bits)?;
    let setup = Setup {
        initial: noisy_kernel(&chain, delta0)?,
        problems: chain.problems.clone(),
        truth: chain.truth.clone(),
        initial_delta: None,
    };
    let cfg = LoopConfig {
        k,
        t,
        seed,
        estimator_mode: EstimatorMode::PerStep,
        projection: Projection::RawDense,
        smoothing: 0.0,
    };
    let run = run_rl_star_on(&setup, &cfg, workers)?;
    let accuracy = run
        .policies
        .iter()
        .map(|p| propagated_accuracy(p, &chain.problems))
        .collect();
    Ok(BinAddRun {
        trace: run.trace,
        accuracy,
        collisions: chain.collisions.len(),
    })
}
