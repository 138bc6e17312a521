use std::fmt::Write as _;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use starlab_core::binadd::{build_chain, ground_truth_trace, run_star_on_binadd, BinAddState};

use super::series;
use crate::chart::line_chart;
use crate::output::RunOutputs;
use crate::{config, Common};

#[derive(Args, Debug)]
pub struct BinaddArgs {
    /// Operand width in bits.
    #[arg(long)]
    bits: Option<usize>,
    /// Initial signal on every step table.
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
    /// Print the ground-truth trace of a problem such as 101+110.
    #[arg(long, value_name = "PROBLEM")]
    show_trace: Option<String>,
    /// Print problem pairs that share an intermediate state.
    #[arg(long)]
    report_collisions: bool,
    /// Skip the SVG chart.
    #[arg(long)]
    no_chart: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaddConfig {
    pub bits: usize,
    pub delta0: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    pub show_trace: Option<String>,
    pub report_collisions: bool,
    pub chart: bool,
}

impl BinaddConfig {
    fn defaults(seed: u64) -> Self {
        BinaddConfig {
            bits: 2,
            delta0: 0.1,
            k: 10_000,
            t: 5,
            seed,
            show_trace: None,
            report_collisions: false,
            chart: true,
        }
    }
}

pub fn run(args: BinaddArgs) -> Result<bool> {
    let defaults = BinaddConfig::defaults(config::env_seed()?.unwrap_or(0));
    let mut cfg: BinaddConfig = config::load(&defaults, args.common.config.as_deref(), "binadd")?;
    if let Some(v) = args.bits {
        cfg.bits = v;
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
    if args.show_trace.is_some() {
        cfg.show_trace = args.show_trace;
    }
    cfg.report_collisions |= args.report_collisions;
    cfg.chart &= !args.no_chart;

    if let Some(expr) = &cfg.show_trace {
        let trace = ground_truth_trace(&BinAddState::parse_problem(expr)?)?;
        for s in &trace {
            println!("{s}");
        }
    }

    let chain = build_chain(cfg.bits)?;
    let run = run_star_on_binadd(
        cfg.bits,
        cfg.delta0,
        cfg.k,
        cfg.t,
        cfg.seed,
        args.common.workers,
    )?;
    let pairs = chain.colliding_pairs();

    let mut accuracy_csv = String::from("t,accuracy\n");
    for (t, a) in run.accuracy.iter().enumerate() {
        let _ = writeln!(accuracy_csv, "{t},{a}");
    }
    let mut collisions_csv = String::from("problem_a,problem_b,step\n");
    for (a, b, step) in &pairs {
        let _ = writeln!(collisions_csv, "{a},{b},{step}");
    }

    let dir = args.common.out_dir("binadd");
    let mut out = RunOutputs::create(&dir, "binadd", &cfg, Some(cfg.seed), args.common.workers)?;
    out.write("empirical.csv", run.trace.to_csv())?;
    out.write("accuracy.csv", accuracy_csv)?;
    out.write("collisions.csv", collisions_csv)?;
    out.write_json("chain.json", &chain.to_json(&chain.ground_truth))?;
    if cfg.chart {
        let exact: Vec<_> = run
            .accuracy
            .iter()
            .enumerate()
            .map(|(t, &a)| (t as f64, a))
            .collect();
        let sampled: Vec<_> = run
            .trace
            .rows
            .iter()
            .map(|r| (r.t as f64, r.reward))
            .collect();
        out.write(
            "accuracy.svg",
            line_chart(
                "answer accuracy",
                "accuracy",
                &[
                    series("sampled", sampled, false),
                    series("exact", exact, true),
                ],
            )?,
        )?;
    }
    out.finish()?;

    if cfg.report_collisions {
        println!("{} colliding problem pairs", pairs.len());
        for (a, b, step) in &pairs {
            println!("{a} ~ {b} (step {step})");
        }
    }
    if run.collisions > 0 {
        println!(
            "note: {} merged states; the chain is outside the disjoint-path setting",
            run.collisions
        );
    }
    println!(
        "{:>4} {:>10} {:>10} {:>8}",
        "t", "accuracy", "reward", "kept"
    );
    for (r, a) in run.trace.rows.iter().zip(&run.accuracy) {
        println!("{:>4} {:>10.6} {:>10.6} {:>8}", r.t, a, r.reward, r.kept);
    }
    println!("wrote {}", dir.display());
    Ok(true)
}
