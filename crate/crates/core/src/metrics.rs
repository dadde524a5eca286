//! Quantities the convergence results talk about: weighted excess risk of
//! raw, smoothed and pocket iterates, network disagreement, and the
//! post-processing that turns a trace into rate, floor and `h` estimates.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::engine::NetworkState;
use crate::losses::{AgentSampler, LossModel};
use crate::oracles::NetworkOptimum;
use crate::rng::{StreamId, StreamKind};

/// Trailing fraction of a trace treated as steady state.
pub const STEADY_FRACTION: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("degenerate fit window: {0}")]
    DegenerateWindow(String),
    #[error("malformed trace csv at line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    /// `Σ q_k (J_k(w_{k,i}) − J_k(w⋆))`.
    pub excess_risk_raw: f64,
    /// Same on the smoothed iterates.
    pub excess_risk_smoothed: f64,
    /// Same on the per-agent best pocket values.
    pub pocket_excess: f64,
    /// `max_k ‖w_{k,i} − Σ_l p_l w_{l,i}‖²`.
    pub disagreement: f64,
    /// Mean over agents of the same squared distance. Not written to CSV.
    pub disagreement_mean: f64,
    pub iterate_norm_max: f64,
}

pub const CSV_HEADER: &str =
    "iteration,excess_risk_raw,excess_risk_smoothed,pocket_excess,disagreement,disagreement_mean,iterate_norm_max";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iterations(&self) -> Vec<u64> {
        self.rows.iter().map(|r| r.iteration).collect()
    }

    pub fn smoothed(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.excess_risk_smoothed).collect()
    }

    pub fn raw(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.excess_risk_raw).collect()
    }

    pub fn disagreement(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.disagreement).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.iteration,
                r.excess_risk_raw,
                r.excess_risk_smoothed,
                r.pocket_excess,
                r.disagreement,
                r.disagreement_mean,
                r.iterate_norm_max
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Two-column plot data: iteration and smoothed excess risk.
    pub fn plot_data(&self) -> String {
        let mut s = String::from("iteration,excess_risk_smoothed\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.iteration, r.excess_risk_smoothed);
        }
        s
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, MetricsError> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| MetricsError::Csv {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if i == 0 {
                if line.trim() != CSV_HEADER {
                    return Err(MetricsError::Csv {
                        line: 1,
                        msg: "unexpected header".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: String| MetricsError::Csv { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
            rows.push(TraceRow {
                iteration: f[0].trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                excess_risk_raw: num(f[1])?,
                excess_risk_smoothed: num(f[2])?,
                pocket_excess: num(f[3])?,
                disagreement: num(f[4])?,
                disagreement_mean: num(f[5])?,
                iterate_norm_max: num(f[6])?,
            });
        }
        Ok(Self { rows })
    }
}

/// Incremental recorder holding the per-agent pockets.
#[derive(Debug, Clone)]
pub struct Recorder {
    q: Vec<f64>,
    p: Vec<f64>,
    risk_at_optimum: Vec<f64>,
    pockets: Vec<f64>,
}

impl Recorder {
    pub fn new(models: &[LossModel], optimum: &NetworkOptimum, q: &[f64], p: &[f64]) -> Self {
        let risk_at_optimum = models.iter().map(|m| m.risk_unchecked(&optimum.w_star)).collect();
        Self {
            q: q.to_vec(),
            p: p.to_vec(),
            risk_at_optimum,
            pockets: vec![f64::INFINITY; models.len()],
        }
    }

    pub fn pockets(&self) -> &[f64] {
        &self.pockets
    }

    /// Evaluate all metrics on `state` and update the pockets.
    pub fn record(&mut self, state: &NetworkState, models: &[LossModel]) -> TraceRow {
        let dim = state.dim;
        let mut raw = 0.0;
        let mut smoothed = 0.0;
        let mut pocket = 0.0;
        for (k, m) in models.iter().enumerate() {
            let jk = m.risk_unchecked(state.iterate(k));
            let jk_bar = m.risk_unchecked(state.smoothed_row(k));
            if jk < self.pockets[k] {
                self.pockets[k] = jk;
            }
            let base = self.risk_at_optimum[k];
            raw += self.q[k] * (jk - base);
            smoothed += self.q[k] * (jk_bar - base);
            pocket += self.q[k] * (self.pockets[k] - base);
        }
        let mut centroid = vec![0.0; dim];
        for k in 0..state.n {
            for (c, w) in centroid.iter_mut().zip(state.iterate(k)) {
                *c += self.p[k] * w;
            }
        }
        let mut dmax: f64 = 0.0;
        let mut dsum = 0.0;
        let mut norm_max: f64 = 0.0;
        for k in 0..state.n {
            let w = state.iterate(k);
            let d: f64 = w.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum();
            dmax = dmax.max(d);
            dsum += d;
            norm_max = norm_max.max(w.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        TraceRow {
            iteration: state.iteration,
            excess_risk_raw: raw,
            excess_risk_smoothed: smoothed,
            pocket_excess: pocket,
            disagreement: dmax,
            disagreement_mean: dsum / state.n as f64,
            iterate_norm_max: norm_max,
        }
    }
}

/// Mean of the trailing [`STEADY_FRACTION`] of `values` (at least one entry).
pub fn steady_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let n = ((values.len() as f64 * STEADY_FRACTION).ceil() as usize).clamp(1, values.len());
    values[values.len() - n..].iter().sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub alpha_hat: f64,
    pub floor_hat: f64,
    /// Row indices `[start, end)` of the trace used for the fit.
    pub fit_window: (usize, usize),
    pub r_squared: f64,
}

/// Least-squares fit of `log(e_i − floor)` against the iteration number over
/// rows `window.0 .. window.1`, with the floor taken as the mean of the
/// trailing 5% of the smoothed excess-risk trace. `α̂ = exp(slope)`.
pub fn fit_rate(trace: &MetricsTrace, window: (usize, usize)) -> Result<RateFit, MetricsError> {
    fit_rate_series(&trace.iterations(), &trace.smoothed(), window)
}

pub fn fit_rate_series(iters: &[u64], values: &[f64], window: (usize, usize)) -> Result<RateFit, MetricsError> {
    let (start, end) = window;
    if end > values.len() || start >= end {
        return Err(MetricsError::DegenerateWindow(format!(
            "window {start}..{end} outside trace of length {}",
            values.len()
        )));
    }
    let floor_hat = steady_mean(values);
    let pts: Vec<(f64, f64)> = (start..end)
        .filter_map(|i| {
            let gap = values[i] - floor_hat;
            (gap > 0.0 && gap.is_finite()).then(|| (iters[i] as f64, gap.ln()))
        })
        .collect();
    if pts.len() < 3 {
        return Err(MetricsError::DegenerateWindow(format!(
            "only {} points above the floor {floor_hat:e}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(MetricsError::DegenerateWindow("all points at one iteration".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        alpha_hat: slope.exp(),
        floor_hat,
        fit_window: window,
        r_squared,
    })
}

/// Rows from the start of the trace until the smoothed excess risk first
/// comes within `10×` the floor of the floor.
pub fn decay_window(trace: &MetricsTrace) -> (usize, usize) {
    let values = trace.smoothed();
    let floor = steady_mean(&values);
    let end = values
        .iter()
        .position(|&v| v - floor <= 10.0 * floor.abs())
        .unwrap_or(values.len());
    (0, end)
}

/// `h = max sqrt(disagreement)/μ_o` over the second half of the trace.
pub fn estimate_h(trace: &MetricsTrace, mu_o: f64) -> f64 {
    let rows = &trace.rows[trace.len() / 2..];
    rows.iter()
        .map(|r| r.disagreement.max(0.0).sqrt() / mu_o)
        .fold(0.0, f64::max)
}

pub fn steady_disagreement(trace: &MetricsTrace) -> f64 {
    steady_mean(&trace.disagreement())
}

pub fn steady_floor(trace: &MetricsTrace) -> f64 {
    steady_mean(&trace.smoothed())
}

/// Ratio of steady-state disagreement of a run at `μ_o` to one at `μ_o/2`.
pub fn disagreement_scaling(at_mu: &MetricsTrace, at_half_mu: &MetricsTrace) -> f64 {
    steady_disagreement(at_mu) / steady_disagreement(at_half_mu)
}

/// Ratio of smoothed excess-risk floors, same pairing as [`disagreement_scaling`].
pub fn floor_scaling(at_mu: &MetricsTrace, at_half_mu: &MetricsTrace) -> f64 {
    steady_floor(at_mu) / steady_floor(at_half_mu)
}

/// Empirical gradient-noise constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub beta_sq: f64,
    pub sigma_sq: f64,
}

/// Fit `E‖ĝ(w) − g(w)‖² ≈ β²‖w⋆ − w‖² + σ²` by least squares over points at
/// distances {0, 0.5, 1, 2} from `w⋆` along seeded random directions, each
/// averaged over `samples` draws. Both constants are clamped at zero.
pub fn estimate_noise_constants(
    model: &LossModel,
    w_star: &[f64],
    samples: usize,
    seed: u64,
    agent: usize,
) -> NoiseEstimate {
    let dim = model.dim();
    let mut dir_rng = StreamId::new(seed, StreamKind::Estimation, agent as u64, u64::MAX).rng();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut sampler = AgentSampler::new(model);
    let mut ghat = vec![0.0; dim];
    for (pi, radius) in [0.0, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let mut u: Vec<f64> = (0..dim).map(|_| dir_rng.random::<f64>() - 0.5).collect();
        let nrm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        u.iter_mut().for_each(|v| *v *= radius / nrm);
        let w: Vec<f64> = w_star.iter().zip(&u).map(|(a, b)| a + b).collect();
        let g = model.true_subgradient(&w);
        let mut acc = 0.0;
        for s in 0..samples {
            // a separate stream family from the run itself
            let iteration = (pi as u64) << 40 | (s as u64 + 1);
            sampler.subgradient_into(model, &w, seed ^ 0x5EED_E571_u64, agent, iteration, &mut ghat);
            acc += ghat.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        xs.push(radius * radius);
        ys.push(acc / samples.max(1) as f64);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let beta_sq = (sxy / sxx).max(0.0);
    let sigma_sq = (my - beta_sq * mx).max(0.0);
    log::info!(
        "agent {agent}: noise constants from {samples} draws at radii 0,0.5,1,2 -> beta^2 = {beta_sq:.4e}, sigma^2 = {sigma_sq:.4e}"
    );
    NoiseEstimate { beta_sq, sigma_sq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn synthetic(values: &[f64]) -> MetricsTrace {
        MetricsTrace {
            rows: values
                .iter()
                .enumerate()
                .map(|(i, &v)| TraceRow {
                    iteration: i as u64 + 1,
                    excess_risk_raw: v,
                    excess_risk_smoothed: v,
                    pocket_excess: v,
                    disagreement: 0.0,
                    disagreement_mean: 0.0,
                    iterate_norm_max: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn fit_recovers_geometric_decay() {
        let values: Vec<f64> = (1..=400).map(|i| 0.5f64.powi(i) + 0.01).collect();
        let trace = synthetic(&values);
        let fit = fit_rate(&trace, (0, 20)).unwrap();
        assert_abs_diff_eq!(fit.alpha_hat, 0.5, epsilon = 0.02);
        assert_abs_diff_eq!(fit.floor_hat, 0.01, epsilon = 1e-12);
        assert!(fit.r_squared > 0.999);
    }

    #[test]
    fn constant_trace_is_degenerate() {
        let trace = synthetic(&[0.3; 100]);
        assert!(matches!(
            fit_rate(&trace, (0, 100)),
            Err(MetricsError::DegenerateWindow(_))
        ));
        assert!(matches!(
            fit_rate(&trace, (10, 5)),
            Err(MetricsError::DegenerateWindow(_))
        ));
    }

    #[test]
    fn decay_window_stops_near_floor() {
        let values: Vec<f64> = (1..=400).map(|i| 0.5f64.powi(i) + 0.01).collect();
        let (s, e) = decay_window(&synthetic(&values));
        assert_eq!(s, 0);
        // first i with 0.5^i <= 0.1
        assert_eq!(e, 3);
    }

    #[test]
    fn h_of_consensus_is_zero() {
        assert_eq!(estimate_h(&synthetic(&[1.0; 10]), 0.01), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let values: Vec<f64> = (1..=5).map(|i| 1.0 / i as f64).collect();
        let trace = synthetic(&values);
        let text = trace.to_csv_string();
        assert!(text.starts_with(CSV_HEADER));
        let back = MetricsTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in back.rows.iter().zip(&trace.rows) {
            assert_eq!(a.excess_risk_smoothed, b.excess_risk_smoothed);
            assert_eq!(a.iteration, b.iteration);
        }
    }
}
