//! Cooperative versus stand-alone SVM training on the bundled synthetic data.

use std::error::Error;

use atc_diffusion::config::load_config;
use atc_diffusion::engine::{run, StrategyKind};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/svm_synthetic.cfg");
    let base = load_config(path)?;
    println!("{:<24} {:>14} {:>10}", "strategy", "network risk", "accuracy");
    for strategy in [StrategyKind::DiffusionSubgradient, StrategyKind::NonCooperative] {
        let mut config = base.clone();
        config.strategy = strategy;
        let report = run(&config)?;
        println!(
            "{:<24} {:>14.6} {:>10.4}",
            strategy.name(),
            report.final_network_risk_smoothed,
            report.test_accuracy.unwrap_or(f64::NAN)
        );
        if strategy == StrategyKind::DiffusionSubgradient {
            println!("  optimum risk {:.6}; {}", report.optimum.risk_star, report.evaluation_note.unwrap_or_default());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
