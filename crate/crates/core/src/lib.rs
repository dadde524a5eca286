//! Multi-agent stochastic subgradient learning with adapt-then-combine (ATC)
//! diffusion and exponential smoothing.
//!
//! Agents on a strongly-connected network each hold a private, strongly
//! convex and possibly non-smooth risk (LASSO regression or a regularised
//! hinge-loss SVM). Every iteration each agent takes one stochastic
//! subgradient step from a single streamed sample, then averages its
//! neighbours' intermediate iterates with the weights of a left-stochastic
//! combination matrix. A geometric average of past iterates is kept as the
//! smoothed estimate.
//!
//! ```no_run
//! use atc_diffusion::config::load_config;
//! use atc_diffusion::engine::run;
//!
//! let config = load_config("configs/example1_lasso.cfg").unwrap();
//! let report = run(&config).unwrap();
//! println!("final smoothed excess risk {:e}", report.trace.rows.last().unwrap().excess_risk_smoothed);
//! ```

pub mod cli;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod oracles;
pub mod rng;
pub mod topology;

pub use config::{load_config, ExperimentConfig};
pub use engine::{run, NetworkState, RunReport, StrategyKind};
pub use experiment::Experiment;
pub use losses::LossModel;
pub use metrics::MetricsTrace;
pub use topology::CombinationMatrix;
