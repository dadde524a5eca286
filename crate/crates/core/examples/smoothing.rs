//! Exponential smoothing of iterates: the running recursion reproduces the
//! explicit geometric weighting of the whole trajectory.

use std::error::Error;

use atc_diffusion::engine::{smoothing_step, NetworkState};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let theta = 0.9;
    let steps = 200;
    let mut state = NetworkState::new(1, 1);
    let mut history = Vec::with_capacity(steps as usize);
    for i in 1..=steps {
        let w = (i as f64 * 0.3).sin() + 0.01 * i as f64;
        state.iterates[0] = w;
        state.iteration = i;
        history.push(w);
        smoothing_step(&mut state, theta)?;
    }
    // the j = 0 term carries w̄_0 = 0 with weight θ^L
    let weights: Vec<f64> = (0..=steps).map(|j| theta.powi((steps - j) as i32)).collect();
    let total: f64 = weights.iter().sum();
    let explicit: f64 = weights[1..].iter().zip(&history).map(|(r, w)| r * w).sum::<f64>() / total;
    println!("S_L          {:.12}", state.smoothing_sum);
    println!("sum theta^j  {:.12}", total);
    println!("recursive    {:.15}", state.smoothed[0]);
    println!("explicit     {:.15}", explicit);
    println!("difference   {:.1e}", (state.smoothed[0] - explicit).abs());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
