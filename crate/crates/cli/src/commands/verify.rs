use std::fmt::Write as _;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use starlab_core::verifiers::{run_suite, EmpiricalCheck, Grid, Verdict};

use crate::output::RunOutputs;
use crate::{config, Common};

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// State counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    ms: Option<Vec<usize>>,
    /// Step counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Initial signals, comma separated; 0 adds the fixed-point check.
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Equality tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Gap threshold the trace must cross.
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Skip the sampled part of the fixed-point check.
    #[arg(long)]
    no_empirical: bool,
    /// Rollouts per iteration for the sampled check.
    #[arg(long)]
    empirical_k: Option<usize>,
    /// Seed for the sampled check [fallback: $STARLAB_SEED]
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct Report<'a> {
    all_pass: bool,
    passed: usize,
    total: usize,
    verdicts: &'a [Verdict],
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn verdicts_csv(verdicts: &[Verdict]) -> String {
    let mut out = String::from("claim,m,n,delta0,pass,tol,failures\n");
    for v in verdicts {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            v.claim,
            v.point.m,
            v.point.n,
            v.point.delta0,
            v.pass,
            v.tol,
            quote(&v.failures.join("; "))
        );
    }
    out
}

pub fn run(args: VerifyArgs) -> Result<bool> {
    let mut defaults = Grid::default();
    if let (Some(seed), Some(e)) = (config::env_seed()?, defaults.empirical.as_mut()) {
        e.seed = seed;
    }
    let mut grid: Grid = config::load(&defaults, args.common.config.as_deref(), "verify")?;
    if let Some(v) = args.ms {
        grid.ms = v;
    }
    if let Some(v) = args.ns {
        grid.ns = v;
    }
    if let Some(v) = args.deltas {
        grid.deltas = v;
    }
    if let Some(v) = args.tol {
        grid.tol = v;
    }
    if let Some(v) = args.gap_tol {
        grid.gap_tol = v;
    }
    if let Some(v) = args.max_iters {
        grid.max_iters = v;
    }
    if args.no_empirical {
        grid.empirical = None;
    } else if args.empirical_k.is_some() || args.seed.is_some() {
        let e = grid.empirical.get_or_insert_with(EmpiricalCheck::default);
        if let Some(k) = args.empirical_k {
            e.k = k;
        }
        if let Some(s) = args.seed {
            e.seed = s;
        }
    }

    let report = run_suite(&grid, args.common.workers)?;
    let dir = args.common.out_dir("verify");
    let seed = grid.empirical.map(|e| e.seed);
    let mut out = RunOutputs::create(&dir, "verify", &grid, seed, args.common.workers)?;
    let passed = report.verdicts.iter().filter(|v| v.pass).count();
    out.write_json(
        "report.json",
        &Report {
            all_pass: report.all_pass(),
            passed,
            total: report.verdicts.len(),
            verdicts: &report.verdicts,
        },
    )?;
    out.write("verdicts.csv", verdicts_csv(&report.verdicts))?;
    out.finish()?;

    print!("{}", report.summary());
    println!("wrote {}", dir.display());
    Ok(report.all_pass())
}
