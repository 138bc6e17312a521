use std::fmt::Write as _;

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use starlab_core::oracle::{enumerate_all, success_mass_by_l, verify_update_equality, DEFAULT_CAP};
use starlab_core::sampler::{ProblemSet, StepKernels};
use starlab_core::{make_symmetric, ChainSpec};

use crate::output::RunOutputs;
use crate::{config, Common};

/// Tables longer than this are written but not printed.
const PRINT_ROWS: usize = 64;

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    delta0: Option<f64>,
    /// Maximum number of enumerated paths.
    #[arg(long)]
    cap: Option<u64>,
    /// Tolerance for the update-equality check.
    #[arg(long)]
    tol: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub m: usize,
    pub n: usize,
    pub delta0: f64,
    pub cap: u64,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            m: 2,
            n: 2,
            delta0: 0.1,
            cap: DEFAULT_CAP,
            tol: 1e-10,
        }
    }
}

pub fn run(args: OracleArgs) -> Result<bool> {
    let mut cfg: OracleConfig = config::load(
        &OracleConfig::default(),
        args.common.config.as_deref(),
        "oracle",
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
    if let Some(v) = args.cap {
        cfg.cap = v;
    }
    if let Some(v) = args.tol {
        cfg.tol = v;
    }

    let k = make_symmetric(ChainSpec::new(cfg.m, cfg.n)?, cfg.delta0)?;
    let table = enumerate_all(
        &StepKernels::from_symmetric(&k),
        &ProblemSet::diagonal(cfg.m),
        cfg.cap,
    )?;
    let report = verify_update_equality(&k, cfg.tol, cfg.cap)?;
    let buckets = success_mass_by_l(&k, cfg.cap)?;
    let mut l_csv = String::from("l,count,mass\n");
    for b in &buckets {
        let _ = writeln!(l_csv, "{},{},{}", b.l, b.count, b.mass);
    }

    let dir = args.common.out_dir("oracle");
    let mut out = RunOutputs::create(&dir, "oracle", &cfg, None, args.common.workers)?;
    let table_csv = table.to_csv();
    out.write("trajectories.csv", &table_csv)?;
    out.write("success_by_l.csv", l_csv)?;
    out.write_json("update_equality.json", &report)?;
    out.finish()?;

    if table.rows.len() <= PRINT_ROWS {
        print!("{table_csv}");
    } else {
        println!("{} trajectories (not printed)", table.rows.len());
    }
    let success: f64 = table
        .rows
        .iter()
        .filter(|r| r.success)
        .map(|r| r.prob)
        .sum();
    println!("J = {}", success / cfg.m as f64);
    println!(
        "{} update equality: delta_oracle={} delta_exact={} deviation={:e} symmetric_deviation={:e} tol={:e}",
        if report.pass { "PASS" } else { "FAIL" },
        report.delta_oracle,
        report.delta_exact,
        report.deviation,
        report.symmetric_deviation,
        report.tol
    );
    if !report.flagged_rows.is_empty() {
        println!("rows without successful mass: {:?}", report.flagged_rows);
    }
    println!("wrote {}", dir.display());
    Ok(report.pass)
}
