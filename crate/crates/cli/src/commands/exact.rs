use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use starlab_core::{iterate_with, make_symmetric, ChainSpec, StopRule, UpdateRule};

use super::{exact_series, series};
use crate::chart::line_chart;
use crate::output::RunOutputs;
use crate::{config, Common};

#[derive(Args, Debug)]
pub struct ExactArgs {
    /// Number of states per step.
    #[arg(long)]
    m: Option<usize>,
    /// Number of reasoning steps.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    delta0: Option<f64>,
    /// Maximum number of updates.
    #[arg(long)]
    iters: Option<usize>,
    /// Stop once the distance to the ground truth drops below this.
    #[arg(long)]
    gap_tol: Option<f64>,
    /// With N = 1, jump straight to the ground truth instead of staying put.
    #[arg(long)]
    n1_jump: bool,
    /// Skip the SVG charts.
    #[arg(long)]
    no_chart: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactConfig {
    pub m: usize,
    pub n: usize,
    pub delta0: f64,
    pub iters: usize,
    pub gap_tol: f64,
    pub n1_jump: bool,
    pub chart: bool,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            m: 2,
            n: 2,
            delta0: 0.1,
            iters: 1000,
            gap_tol: 1e-8,
            n1_jump: false,
            chart: true,
        }
    }
}

pub fn run(args: ExactArgs) -> Result<bool> {
    let mut cfg: ExactConfig = config::load(
        &ExactConfig::default(),
        args.common.config.as_deref(),
        "exact",
    )?;
    if let Some(v) = args.m {
        cfg.m = v;
    }
    if let Some(v) = args.n {
        cfg.n = v;
    }
    if let Some(v) = args.delta0 {
        cfg.delta0 = v;
    }
    if let Some(v) = args.iters {
        cfg.iters = v;
    }
    if let Some(v) = args.gap_tol {
        cfg.gap_tol = v;
    }
    cfg.n1_jump |= args.n1_jump;
    cfg.chart &= !args.no_chart;

    let k0 = make_symmetric(ChainSpec::new(cfg.m, cfg.n)?, cfg.delta0)?;
    let stop = StopRule {
        max_iters: cfg.iters,
        gap_tol: cfg.gap_tol,
    };
    let trace = iterate_with(
        &k0,
        cfg.n,
        stop,
        UpdateRule {
            n1_jump: cfg.n1_jump,
        },
    )?;

    let dir = args.common.out_dir("exact");
    let mut out = RunOutputs::create(&dir, "exact", &cfg, None, args.common.workers)?;
    out.write("trace.csv", trace.to_csv())?;
    if cfg.chart {
        let delta = exact_series(&trace, |r| r.delta);
        out.write(
            "delta.svg",
            line_chart("signal", "delta", &[series("exact", delta, false)])?,
        )?;
        let reward = exact_series(&trace, |r| r.reward);
        out.write(
            "reward.svg",
            line_chart("reward", "reward", &[series("exact", reward, false)])?,
        )?;
    }
    out.finish()?;

    let last = trace.last();
    println!(
        "t={} delta={} J={} gap={:e} ({:?})",
        last.t, last.delta, last.reward, last.gap, trace.halt
    );
    println!("wrote {}", dir.display());
    Ok(true)
}
