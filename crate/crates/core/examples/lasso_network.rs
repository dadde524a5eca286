//! Sparse regression over a 20-agent network: exponential decay of the
//! smoothed excess risk to a small floor.

use std::error::Error;

use atc_diffusion::cli::summarize;
use atc_diffusion::config::load_config;
use atc_diffusion::engine::run;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example1_lasso.cfg");
    let config = load_config(path)?;
    let report = run(&config)?;
    let summary = summarize(&report.trace, config.mu_o);
    let first = report.trace.rows.first().ok_or("empty trace")?;

    println!("agents {}, step size {}, theta {}", report.p.len(), config.mu_o, report.theta);
    if let Some(pred) = &report.prediction {
        println!("predicted rate   {:.6}", pred.alpha);
    }
    if let (Some(a), Some(r2)) = (summary.alpha_hat, summary.r_squared) {
        println!("fitted rate      {a:.6} (r^2 = {r2:.4})");
    }
    println!("initial excess   {:.3e}", first.excess_risk_smoothed);
    println!("floor            {:.3e}", summary.floor);
    println!("disagreement     {:.3e}", summary.disagreement);
    println!("h estimate       {:.3}", summary.h_estimate);
    for row in report.trace.rows.iter().step_by(2500) {
        println!("  i = {:>6}  smoothed {:.3e}  raw {:.3e}", row.iteration, row.excess_risk_smoothed, row.excess_risk_raw);
    }
    println!("{:.2} s", report.wall_time);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
