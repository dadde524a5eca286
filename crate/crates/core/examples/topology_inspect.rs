//! Build a random geometric network with Metropolis weights, then derive its
//! Perron vector, the step-sizes for two weightings and the stability bounds.

use std::error::Error;

use atc_diffusion::topology::{perron_vector, random_geometric_metropolis, stability_bound, step_sizes, StabilityParams, DEFAULT_H};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let a = random_geometric_metropolis(8, 0.5, 11)?;
    let p = perron_vector(&a)?;
    println!("{} agents, doubly stochastic: {}", a.n_agents(), a.is_doubly_stochastic(1e-12));
    println!("perron vector after {} iterations (residual {:.1e}):", p.iterations, p.residual);
    for k in 0..a.n_agents() {
        println!("  agent {k}: neighbours {:?}  p = {:.4}", a.neighbors(k), p.p[k]);
    }

    // a non-symmetric left-stochastic matrix has a non-uniform Perron vector
    let skewed = atc_diffusion::topology::validate_combination_matrix(&[
        vec![0.5, 0.2, 0.0],
        vec![0.5, 0.3, 0.6],
        vec![0.0, 0.5, 0.4],
    ])?;
    let ps = perron_vector(&skewed)?;
    println!("skewed 3-agent matrix: p = {:.4?}", ps.p);
    let uniform = vec![1.0 / 3.0; 3];
    let scheme = step_sizes(&ps, &uniform, 0.01)?;
    println!("uniform q gives step-sizes {:.5?}", scheme.mu);
    let params: Vec<StabilityParams> = (0..3)
        .map(|k| StabilityParams {
            eta: 0.75,
            beta_sq: 50.0,
            e_sq: 1.0,
            q: scheme.q[k],
            p: ps.p[k],
        })
        .collect();
    println!("stability bounds {:.5?}", stability_bound(&params, DEFAULT_H));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
