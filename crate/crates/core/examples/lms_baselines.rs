//! Diffusion subgradient, diffusion LMS and sparse diffusion LMS on the same
//! sparse regression network.

use std::error::Error;

use atc_diffusion::cli::summarize;
use atc_diffusion::config::load_config;
use atc_diffusion::engine::{run, StrategyKind};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example1_lasso.cfg");
    let mut base = load_config(path)?;
    base.horizon = 12_000;
    base.record_every = 10;
    println!("{:<24} {:>12} {:>12}", "strategy", "floor", "final raw");
    for strategy in [
        StrategyKind::DiffusionSubgradient,
        StrategyKind::SparseDiffusionLms,
        StrategyKind::DiffusionLms,
        StrategyKind::NonCooperative,
    ] {
        let mut config = base.clone();
        config.strategy = strategy;
        let report = run(&config)?;
        let last = report.trace.rows.last().ok_or("empty trace")?;
        let summary = summarize(&report.trace, config.mu_o);
        println!("{:<24} {:>12.3e} {:>12.3e}", strategy.name(), summary.floor, last.excess_risk_raw);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
