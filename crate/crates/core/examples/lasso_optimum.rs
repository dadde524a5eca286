//! Network LASSO optimum: soft-thresholding closed form against an
//! independent proximal-gradient solve of the aggregate risk.

use std::error::Error;

use atc_diffusion::config::{LassoSpec, VarianceSpec};
use atc_diffusion::experiment::lasso_models;
use atc_diffusion::oracles::{lasso_network_optimum, lasso_stationarity_violation, numerical_optimum, AggregateObjective, OracleOptions};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let spec = LassoSpec {
        dim: 30,
        delta: 0.05,
        sigma_h_sq: VarianceSpec::Linspace(0.5, 1.0),
        sigma_n_sq: VarianceSpec::Constant(0.01),
        sparsity: 4,
        support: (0.5, 1.5),
        shared_model: false,
        model_seed: 5,
    };
    let models = lasso_models(&spec, 6)?;
    let q = vec![1.0 / 6.0; 6];
    let closed = lasso_network_optimum(&models, &q)?;
    let numeric = numerical_optimum(&AggregateObjective { models: &models, q: &q }, OracleOptions::default())?;
    let gap = closed
        .w_star
        .iter()
        .zip(&numeric.w_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("closed-form risk  {:.12}", closed.risk_star);
    println!("numerical risk    {:.12} ({} iterations)", numeric.risk_star, numeric.iterations);
    println!("max coordinate gap {gap:.2e}");
    println!("support size {}", closed.w_star.iter().filter(|v| **v != 0.0).count());
    println!("stationarity violation {:.2e}", lasso_stationarity_violation(&models, &q, &closed.w_star)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
