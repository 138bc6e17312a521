//! Simulator for self-taught reasoner (RL-STaR) dynamics on tabular
//! chain-of-thought Markov chains.
//!
//! * [`kernels`]: symmetric and dense transition kernels.
//! * [`exact_dynamics`]: closed-form forward recurrence, reward and update.
//! * [`sampler`]: sampled rollouts, success filtering and re-estimation.
//! * [`oracle`]: brute-force trajectory enumeration.
//! * [`verifiers`]: numerical verdicts for the convergence claims.
//! * [`binadd`]: binary addition as a concrete chain-of-thought domain.

pub mod binadd;
pub mod error;
pub mod exact_dynamics;
pub mod kernels;
pub mod oracle;
pub mod sampler;
pub mod verifiers;

pub use error::{Error, Result};
pub use exact_dynamics::{
    count_off_diagonal, forward, incorrect_step_probability, iterate, iterate_with, reward,
    star_update, star_update_with, ForwardVector, HaltReason, IterationTrace, OffDiagonalCount,
    StopRule, TraceRow, UpdateRule,
};
pub use kernels::{
    fit_symmetric, infinity_gap, make_symmetric, to_dense, ChainSpec, DenseKernel, SymmetricFit,
    SymmetricKernel,
};
pub use sampler::{
    run_rl_star, EmpiricalRow, EmpiricalTrace, EstimatorMode, FilteredDataset, ProblemSet,
    Projection, RunConfig, StepKernels, Trajectory,
};
