//! Paired sweep at μ_o and μ_o/2: the excess-risk floor roughly halves and
//! the network disagreement drops by about four.

use std::error::Error;

use atc_diffusion::cli::run_sweep;
use atc_diffusion::config::SweepSpec;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let out = tempfile::tempdir()?;
    let base = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/example1_lasso.cfg");
    let text = format!(
        "base = {base}\nmode = paired\nsweep.mu_o = 0.001,0.0005\nsweep.horizon = 20000,40000\nsweep.record_every = 10,20\noutput = mu_sweep\n"
    );
    let spec = SweepSpec::parse(&text, None)?;
    let result = run_sweep(&spec, Some(out.path()))?;
    print!("{}", result.summary);
    for (i, point) in result.points.iter().enumerate() {
        let point = point.as_ref().map_err(|e| e.to_string())?;
        println!("point {i}: artifacts in {}", point.dir.display());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
