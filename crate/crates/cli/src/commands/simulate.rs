use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use starlab_core::{iterate, run_rl_star, EstimatorMode, Projection, RunConfig, StopRule};

use super::{exact_series, series};
use crate::chart::line_chart;
use crate::output::RunOutputs;
use crate::{config, Common};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    delta0: Option<f64>,
    /// Rollouts per iteration.
    #[arg(long = "k", alias = "K")]
    k: Option<usize>,
    /// Number of iterations.
    #[arg(long = "t", alias = "T")]
    t: Option<usize>,
    /// Random seed [fallback: $STARLAB_SEED, then 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    estimator_mode: Option<Mode>,
    #[arg(long, value_enum)]
    projection: Option<Proj>,
    /// Pseudo-count added to every transition before normalizing.
    #[arg(long)]
    smoothing: Option<f64>,
    /// Skip the SVG charts.
    #[arg(long)]
    no_chart: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Pooled,
    PerStep,
    SinglePair,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy)]
enum Proj {
    RawDense,
    ProjectSymmetric,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub m: usize,
    pub n: usize,
    pub delta0: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub estimator_mode: EstimatorMode,
    pub projection: Projection,
    pub smoothing: f64,
    pub chart: bool,
}

impl SimulateConfig {
    fn defaults(seed: u64) -> Self {
        SimulateConfig {
            m: 2,
            n: 2,
            delta0: 0.1,
            k: 100_000,
            t: 8,
            seed,
            estimator_mode: EstimatorMode::Pooled,
            projection: Projection::RawDense,
            smoothing: 0.0,
            chart: true,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            m: self.m,
            n: self.n,
            delta0: self.delta0,
            k: self.k,
            t: self.t,
            seed: self.seed,
            estimator_mode: self.estimator_mode,
            projection: self.projection,
            smoothing: self.smoothing,
        }
    }
}

pub fn run(args: SimulateArgs) -> Result<bool> {
    let defaults = SimulateConfig::defaults(config::env_seed()?.unwrap_or(0));
    let mut cfg: SimulateConfig =
        config::load(&defaults, args.common.config.as_deref(), "simulate")?;
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.delta0 {
        cfg.delta0 = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.t {
        cfg.t = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.estimator_mode {
        cfg.estimator_mode = match v {
            Mode::Pooled => EstimatorMode::Pooled,
            Mode::PerStep => EstimatorMode::PerStep,
            Mode::SinglePair => EstimatorMode::SinglePair,
        };
    }
    if let Some(v) = args.projection {
        cfg.projection = match v {
            Proj::RawDense => Projection::RawDense,
            Proj::ProjectSymmetric => Projection::ProjectSymmetric,
        };
    }
    if let Some(v) = args.smoothing {
        cfg.smoothing = v;
    }
    cfg.chart &= !args.no_chart;

    let run_cfg = cfg.run_config();
    run_cfg.validate()?;
    let exact = iterate(
        &run_cfg.initial_kernel()?,
        cfg.n,
        StopRule {
            max_iters: cfg.t,
            gap_tol: 0.0,
        },
    )?;
    let trace = run_rl_star(&run_cfg, args.common.workers)?;

    let dir = args.common.out_dir("simulate");
    let mut out = RunOutputs::create(&dir, "simulate", &cfg, Some(cfg.seed), args.common.workers)?;
    out.write("empirical.csv", trace.to_csv())?;
    out.write("exact.csv", exact.to_csv())?;
    if cfg.chart {
        let sampled: Vec<_> = trace.rows.iter().map(|r| (r.t as f64, r.delta)).collect();
        out.write(
            "delta.svg",
            line_chart(
                "signal",
                "delta",
                &[
                    series("sampled", sampled, false),
                    series("exact", exact_series(&exact, |r| r.delta), true),
                ],
            )?,
        )?;
        let sampled: Vec<_> = trace.rows.iter().map(|r| (r.t as f64, r.reward)).collect();
        out.write(
            "reward.svg",
            line_chart(
                "reward",
                "reward",
                &[
                    series("sampled", sampled, false),
                    series("exact", exact_series(&exact, |r| r.reward), true),
                ],
            )?,
        )?;
    }
    out.finish()?;

    println!(
        "{:>4} {:>12} {:>12} {:>10} {:>10} {:>8}",
        "t", "delta_hat", "delta", "stderr", "reward", "kept"
    );
    for (r, e) in trace.rows.iter().zip(&exact.rows) {
        println!(
            "{:>4} {:>12.8} {:>12.8} {:>10.2e} {:>10.6} {:>8}",
            r.t, r.delta, e.delta, r.delta_hat_stderr, r.reward, r.kept
        );
    }
    println!("wrote {}", dir.display());
    Ok(true)
}
