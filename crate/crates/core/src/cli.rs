//! Experiment runner behind the `diffsim` binary: artifact writing, sweeps,
//! validation and topology inspection.
//!
//! A run directory holds `trace.csv`, `report.txt` and `plot.csv`. The report
//! starts with the resolved config as plain `key = value` lines and keeps every
//! other line behind `#`, so the report itself loads back as a config. A run
//! that aborts also gets a `PARTIAL` marker file.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{load_config, ConfigError, ExperimentConfig, SweepSpec};
use crate::engine::{RunFailure, RunReport};
use crate::experiment::{BuildError, Experiment, Warning};
use crate::metrics::{decay_window, estimate_h, fit_rate, steady_disagreement, steady_floor, MetricsTrace};
use crate::topology::{perron_vector, read_matrix_file, TopologyError};

/// Environment variable that, when set, is prepended to relative output dirs.
pub const OUTPUT_ROOT_ENV: &str = "DIFFSIM_OUTPUT_ROOT";

pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const PLOT_FILE: &str = "plot.csv";
pub const PARTIAL_MARKER: &str = "PARTIAL";
pub const SCALING_FILE: &str = "scaling.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("config error: {0}")]
    Build(#[from] BuildError),
    #[error("topology error: {0}")]
    Topology(#[from] TopologyError),
    #[error("run aborted: {0}")]
    Aborted(RunFailure),
    #[error("i/o error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    /// 1 for configuration problems, 2 for runtime aborts and i/o failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Build(_) | CliError::Topology(_) => 1,
            CliError::Aborted(_) | CliError::Io { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Output directory for `config`, honouring [`OUTPUT_ROOT_ENV`].
pub fn output_dir(config: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if config.output.is_relative() => r.join(&config.output),
        _ => config.output.clone(),
    }
}

pub fn env_output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from)
}

/// Summary statistics shared by the report and the sweep summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSummary {
    pub floor: f64,
    pub disagreement: f64,
    pub alpha_hat: Option<f64>,
    pub r_squared: Option<f64>,
    pub fit_window: Option<(usize, usize)>,
    pub h_estimate: f64,
}

pub fn summarize(trace: &MetricsTrace, mu_o: f64) -> TraceSummary {
    let window = decay_window(trace);
    let fit = fit_rate(trace, window).ok();
    TraceSummary {
        floor: steady_floor(trace),
        disagreement: steady_disagreement(trace),
        alpha_hat: fit.map(|f| f.alpha_hat),
        r_squared: fit.map(|f| f.r_squared),
        fit_window: fit.map(|f| f.fit_window),
        h_estimate: if trace.is_empty() { f64::NAN } else { estimate_h(trace, mu_o) },
    }
}

/// Text of `report.txt`.
pub fn render_report(report: &RunReport) -> String {
    let cfg = &report.config_echo;
    let mut s = cfg.to_text();
    let s_ = &mut s;
    let mut line = |text: String| {
        let _ = writeln!(s_, "# {text}");
    };
    line(String::new());
    line(format!("theta = {}", report.theta));
    line(format!("agents = {}", report.p.len()));
    line(format!("step_sizes = {}", join(&report.scheme.mu)));
    line(format!("perron = {}", join(&report.p)));
    line(format!("optimum_risk = {:e}", report.optimum.risk_star));
    line(format!("optimum_method = {:?}", report.optimum.method));
    match &report.prediction {
        Some(p) => {
            line(format!("alpha_predicted = {}", p.alpha));
            if let Some(b) = p.floor_bound(cfg.mu_o) {
                line(format!("floor_bound = {b:e}"));
            }
        }
        None => line("alpha_predicted = unavailable".into()),
    }
    let sum = summarize(&report.trace, cfg.mu_o);
    match (sum.alpha_hat, sum.r_squared, sum.fit_window) {
        (Some(a), Some(r2), Some((lo, hi))) => {
            line(format!("alpha_fitted = {a}"));
            line(format!("fit_r_squared = {r2}"));
            line(format!("fit_window_rows = {lo}..{hi}"));
        }
        _ => line("alpha_fitted = unavailable".into()),
    }
    line(format!("floor_estimate = {:e}", sum.floor));
    line(format!("disagreement_steady = {:e}", sum.disagreement));
    line(format!("h_estimate = {}", sum.h_estimate));
    line(format!("final_network_risk_smoothed = {:e}", report.final_network_risk_smoothed));
    if let Some(acc) = report.test_accuracy {
        line(format!("test_accuracy = {acc}"));
    }
    if let Some(note) = &report.evaluation_note {
        line(format!("evaluation = {note}"));
    }
    for w in &report.warnings {
        line(format!("warning = {w}"));
    }
    line(format!("wall_time_seconds = {:.3}", report.wall_time));
    s
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(",")
}

/// Write the three artifacts for a finished run.
pub fn write_artifacts(dir: &Path, report: &RunReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let partial = dir.join(PARTIAL_MARKER);
    if partial.exists() {
        fs::remove_file(&partial).map_err(io_err(&partial))?;
    }
    write_file(&dir.join(TRACE_FILE), &report.trace.to_csv_string())?;
    write_file(&dir.join(PLOT_FILE), &report.trace.plot_data())?;
    write_file(&dir.join(REPORT_FILE), &render_report(report))
}

fn write_partial(dir: &Path, config: &ExperimentConfig, failure: &RunFailure) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let trace = failure.partial.clone().unwrap_or_default();
    write_file(&dir.join(TRACE_FILE), &trace.to_csv_string())?;
    write_file(&dir.join(PLOT_FILE), &trace.plot_data())?;
    let mut report = config.to_text();
    let _ = writeln!(report, "# aborted = {}", failure.error);
    let _ = writeln!(report, "# rows_recorded = {}", trace.len());
    for w in &failure.warnings {
        let _ = writeln!(report, "# warning = {w}");
    }
    write_file(&dir.join(REPORT_FILE), &report)?;
    write_file(&dir.join(PARTIAL_MARKER), &format!("{}\n", failure.error))
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: RunReport,
}

/// Build, run and write artifacts under the config's output directory
/// (relative to `root` when given). Aborted runs flush what they have
/// with a `PARTIAL` marker and return [`CliError::Aborted`].
pub fn run_experiment(config: &ExperimentConfig, root: Option<&Path>) -> Result<RunOutcome, CliError> {
    let dir = output_dir(config, root);
    let exp = Experiment::build(config)?;
    log::info!(
        "running {} agents, strategy {}, horizon {} -> {}",
        exp.n_agents(),
        config.strategy.name(),
        config.horizon,
        dir.display()
    );
    match exp.run() {
        Ok(report) => {
            write_artifacts(&dir, &report)?;
            Ok(RunOutcome { dir, report })
        }
        Err(failure) => {
            write_partial(&dir, config, &failure)?;
            Err(CliError::Aborted(failure))
        }
    }
}

/// Per-point results of a sweep.
#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub points: Vec<Result<RunOutcome, CliError>>,
    pub summary: String,
}

/// Run every sweep point in parallel, each into its own directory, and
/// write `scaling.csv` with per-point floors and disagreements plus the
/// ratios of consecutive points.
pub fn run_sweep(spec: &SweepSpec, root: Option<&Path>) -> Result<SweepOutcome, CliError> {
    let configs = spec.points()?;
    let assignments = spec.assignments();
    let points: Vec<_> = configs.par_iter().map(|c| run_experiment(c, root)).collect();
    let mut summary = String::from("point,assignment,mu_o,floor,disagreement,floor_ratio_to_next,disagreement_ratio_to_next\n");
    let stats: Vec<Option<(f64, f64)>> = points
        .iter()
        .zip(&configs)
        .map(|(r, c)| {
            r.as_ref().ok().map(|o| {
                let s = summarize(&o.report.trace, c.mu_o);
                (s.floor, s.disagreement)
            })
        })
        .collect();
    for (i, (cfg, st)) in configs.iter().zip(&stats).enumerate() {
        let assign = assignments[i].iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        let (floor, dis) = st.map_or((f64::NAN, f64::NAN), |v| v);
        let (fr, dr) = match stats.get(i + 1).copied().flatten() {
            Some((f2, d2)) => (floor / f2, dis / d2),
            None => (f64::NAN, f64::NAN),
        };
        let _ = writeln!(summary, "{i},{assign},{},{floor:e},{dis:e},{fr},{dr}", cfg.mu_o);
    }
    let dir = match root {
        Some(r) if spec.output.is_relative() => r.join(&spec.output),
        _ => spec.output.clone(),
    };
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_file(&dir.join(SCALING_FILE), &summary)?;
    Ok(SweepOutcome { dir, points, summary })
}

/// Load a config and build its experiment without running it; returns a
/// short description including pre-run warnings.
pub fn validate(path: &Path) -> Result<(String, Vec<Warning>), CliError> {
    let config = load_config(path)?;
    let exp = Experiment::build(&config)?;
    let pre = exp.preflight();
    let mut s = String::new();
    let _ = writeln!(s, "agents: {}", exp.n_agents());
    let _ = writeln!(s, "dimension: {}", exp.optimum.w_star.len());
    let _ = writeln!(s, "theta: {}", exp.theta);
    let _ = writeln!(s, "max step-size: {:e}", exp.scheme.mu.iter().copied().fold(0.0, f64::max));
    let _ = writeln!(s, "min stability bound: {:e}", pre.bounds.iter().copied().fold(f64::INFINITY, f64::min));
    if let Some(p) = &pre.prediction {
        let _ = writeln!(s, "predicted alpha: {}", p.alpha);
    }
    let _ = writeln!(s, "optimum risk: {:e}", exp.optimum.risk_star);
    Ok((s, pre.warnings))
}

/// Validate a combination-matrix file and describe it.
pub fn inspect_topology(path: &Path) -> Result<String, CliError> {
    let a = read_matrix_file(path)?;
    let p = perron_vector(&a)?;
    let n = a.n_agents();
    let mut s = String::new();
    let _ = writeln!(s, "agents: {n}");
    let degrees: Vec<usize> = (0..n).map(|k| a.neighbors(k).len()).collect();
    let _ = writeln!(
        s,
        "neighbourhood size: min {} max {}",
        degrees.iter().min().unwrap_or(&0),
        degrees.iter().max().unwrap_or(&0)
    );
    let _ = writeln!(s, "doubly stochastic: {}", a.is_doubly_stochastic(1e-12));
    let _ = writeln!(s, "max column error: {:e}", a.max_column_error());
    let _ = writeln!(s, "perron iterations: {}", p.iterations);
    let _ = writeln!(s, "perron residual: {:e}", p.residual);
    let _ = writeln!(s, "perron vector: {}", join(&p.p));
    Ok(s)
}
