//! Step-sizes well above the stability bound: the pre-run check warns and the
//! run aborts once the iterates stop being finite.

use std::error::Error;

use atc_diffusion::config::{load_config, TopologySpec};
use atc_diffusion::experiment::Experiment;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example1_lasso.cfg");
    let mut config = load_config(path)?;
    config.topology = TopologySpec::Ring { agents: 20 };
    let bound = Experiment::build(&config)?.preflight().bounds.into_iter().fold(0.0, f64::max);
    config.mu_o = 10.0 * bound;
    println!("largest per-agent bound {bound:.4e}, running at {:.4e}", config.mu_o);
    let exp = Experiment::build(&config)?;
    for w in exp.preflight().warnings.iter().take(3) {
        println!("  {w}");
    }
    match exp.run() {
        Ok(report) => println!(
            "run finished, final smoothed excess {:.3e}",
            report.trace.rows.last().map_or(f64::NAN, |r| r.excess_risk_smoothed)
        ),
        Err(failure) => println!(
            "run aborted: {} ({} rows recorded)",
            failure.error,
            failure.partial.map_or(0, |t| t.len())
        ),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
