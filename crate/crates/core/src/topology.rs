//! Combination matrices, Perron weights and the step-sizes they induce.
//!
//! Weights are stored column-oriented in the sense of the diffusion recursion:
//! entry `(l, k)` is the weight agent `k` applies to data arriving from agent
//! `l`, so column `k` sums to one.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::rng::{StreamId, StreamKind};

/// Tolerance on input column sums before renormalisation.
pub const INPUT_COLUMN_TOL: f64 = 1e-9;
/// Column sums after renormalisation.
pub const COLUMN_TOL: f64 = 1e-12;
/// Stopping rule of the Perron power iteration (infinity norm).
pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 1_000_000;
/// Default value of the network-closeness constant `h`.
pub const DEFAULT_H: f64 = 1.25;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("matrix must be square with at least one agent (got {rows} rows, row {bad_row} has {cols} columns)")]
    NotSquare {
        rows: usize,
        bad_row: usize,
        cols: usize,
    },
    #[error("matrix is empty")]
    Empty,
    #[error("not left-stochastic: {0}")]
    NotLeftStochastic(String),
    #[error("graph of nonzero weights is not strongly connected (agent {unreachable} unreachable)")]
    NotStronglyConnected { unreachable: usize },
    #[error("no agent has a positive self-weight; primitivity cannot be certified")]
    NotPrimitive,
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("weight vector mismatch: {0}")]
    WeightMismatch(String),
    #[error("could not parse topology file: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("generator failed: {0}")]
    Generator(String),
}

/// Validated left-stochastic, strongly-connected, primitive matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationMatrix {
    n: usize,
    /// Row-major storage of `a[l][k]`.
    weights: Vec<f64>,
    /// `neighbors[k]` = {l : a_lk > 0} ∪ {k}, sorted.
    neighbors: Vec<Vec<usize>>,
}

impl CombinationMatrix {
    /// Validate a dense matrix given as rows. Row `l`, column `k` is `a_lk`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, TopologyError> {
        let n = rows.len();
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(TopologyError::NotSquare {
                    rows: n,
                    bad_row: i,
                    cols: r.len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(n, flat)
    }

    /// Validate a row-major `n × n` buffer.
    pub fn new(n: usize, mut weights: Vec<f64>) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if weights.len() != n * n {
            return Err(TopologyError::NotSquare {
                rows: n,
                bad_row: 0,
                cols: weights.len() / n,
            });
        }
        for (idx, &v) in weights.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(TopologyError::NotLeftStochastic(format!(
                    "entry ({}, {}) = {v} is negative or non-finite",
                    idx / n,
                    idx % n
                )));
            }
        }
        for k in 0..n {
            let sum: f64 = (0..n).map(|l| weights[l * n + k]).sum();
            if (sum - 1.0).abs() > INPUT_COLUMN_TOL {
                return Err(TopologyError::NotLeftStochastic(format!(
                    "column {k} sums to {sum}"
                )));
            }
            for l in 0..n {
                weights[l * n + k] /= sum;
            }
        }
        let neighbors = neighbor_lists(n, &weights);
        check_strongly_connected(n, &weights)?;
        if !(0..n).any(|k| weights[k * n + k] > 0.0) {
            return Err(TopologyError::NotPrimitive);
        }
        Ok(Self {
            n,
            weights,
            neighbors,
        })
    }

    /// `A = I`, the non-cooperative combiner. Bypasses validation since the
    /// identity is not connected for `n > 1`.
    pub fn identity(n: usize) -> Self {
        let mut weights = vec![0.0; n * n];
        for k in 0..n {
            weights[k * n + k] = 1.0;
        }
        let neighbors = (0..n).map(|k| vec![k]).collect();
        Self {
            n,
            weights,
            neighbors,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[from * self.n + to]
    }

    pub fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[k]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.weights.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// Largest deviation of a column sum from one.
    pub fn max_column_error(&self) -> f64 {
        (0..self.n)
            .map(|k| ((0..self.n).map(|l| self.weight(l, k)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        (0..self.n).all(|l| ((0..self.n).map(|k| self.weight(l, k)).sum::<f64>() - 1.0).abs() <= tol)
    }

    /// `y = A x` for a length-`n` vector.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|l| (0..n).map(|k| self.weights[l * n + k] * x[k]).sum())
            .collect()
    }

    /// Combine step: row `k` of `out` receives Σ_l a_lk · row `l` of `psi`.
    /// Both buffers are `n × dim` row-major.
    pub fn combine(&self, psi: &[f64], dim: usize, out: &mut [f64]) {
        debug_assert_eq!(psi.len(), self.n * dim);
        debug_assert_eq!(out.len(), self.n * dim);
        for k in 0..self.n {
            let dst = &mut out[k * dim..(k + 1) * dim];
            dst.iter_mut().for_each(|v| *v = 0.0);
            for &l in &self.neighbors[k] {
                let a = self.weight(l, k);
                if a == 0.0 {
                    continue;
                }
                let src = &psi[l * dim..(l + 1) * dim];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }

    /// Plain-text form: `N`, then `N` rows of `N` reals.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        for row in self.weights.chunks(self.n) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), TopologyError> {
        std::fs::write(path, self.to_text()).map_err(|e| TopologyError::Io(e.to_string()))
    }
}

fn neighbor_lists(n: usize, w: &[f64]) -> Vec<Vec<usize>> {
    (0..n)
        .map(|k| (0..n).filter(|&l| l == k || w[l * n + k] > 0.0).collect())
        .collect()
}

fn check_strongly_connected(n: usize, w: &[f64]) -> Result<(), TopologyError> {
    // forward: l -> k when a_lk > 0; reverse traverses the same edges backwards
    for forward in [true, false] {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let edge = if forward { w[u * n + v] } else { w[v * n + u] };
                if edge > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if let Some(unreachable) = seen.iter().position(|s| !s) {
            return Err(TopologyError::NotStronglyConnected { unreachable });
        }
    }
    Ok(())
}

/// Validate a raw matrix given as rows.
pub fn validate_combination_matrix(raw: &[Vec<f64>]) -> Result<CombinationMatrix, TopologyError> {
    CombinationMatrix::from_rows(raw)
}

/// Right eigenvector of `A` at eigenvalue one, normalised to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronWeights {
    pub p: Vec<f64>,
    /// ‖Ap − p‖₂ at termination.
    pub residual: f64,
    pub iterations: usize,
}

pub fn perron_vector(a: &CombinationMatrix) -> Result<PerronWeights, TopologyError> {
    let n = a.n_agents();
    let mut p = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    loop {
        let mut next = a.apply(&p);
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= sum);
        let diff = next
            .iter()
            .zip(&p)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        p = next;
        iterations += 1;
        if diff <= PERRON_TOL {
            break;
        }
        if iterations >= PERRON_MAX_ITER {
            return Err(TopologyError::NoConvergence {
                iterations,
                residual: diff,
            });
        }
    }
    let ap = a.apply(&p);
    let residual = ap
        .iter()
        .zip(&p)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(PerronWeights {
        p,
        residual,
        iterations,
    })
}

/// Aggregate-cost weights and the per-agent step-sizes `μ_k = (q_k / p_k) μ_o`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingScheme {
    pub q: Vec<f64>,
    pub mu_o: f64,
    pub mu: Vec<f64>,
}

pub fn step_sizes(
    p: &PerronWeights,
    q: &[f64],
    mu_o: f64,
) -> Result<WeightingScheme, TopologyError> {
    if q.len() != p.p.len() {
        return Err(TopologyError::WeightMismatch(format!(
            "q has {} entries, network has {} agents",
            q.len(),
            p.p.len()
        )));
    }
    if !(mu_o > 0.0 && mu_o.is_finite()) {
        return Err(TopologyError::WeightMismatch(format!(
            "mu_o must be positive, got {mu_o}"
        )));
    }
    if let Some(k) = q.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(TopologyError::WeightMismatch(format!(
            "q[{k}] = {} is not positive",
            q[k]
        )));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > INPUT_COLUMN_TOL {
        return Err(TopologyError::WeightMismatch(format!("q sums to {total}")));
    }
    let q: Vec<f64> = q.iter().map(|v| v / total).collect();
    let mu: Vec<f64> = q.iter().zip(&p.p).map(|(qk, pk)| qk / pk * mu_o).collect();
    let avg: f64 = p.p.iter().zip(&mu).map(|(pk, mk)| pk * mk).sum();
    if (avg - mu_o).abs() > 1e-12 * mu_o.max(1.0) {
        return Err(TopologyError::WeightMismatch(format!(
            "Σ p_k μ_k = {avg} differs from μ_o = {mu_o}"
        )));
    }
    Ok(WeightingScheme { q, mu_o, mu })
}

/// Per-agent inputs to the step-size stability condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    pub eta: f64,
    pub beta_sq: f64,
    pub e_sq: f64,
    pub q: f64,
    pub p: f64,
}

/// Largest admissible `μ_k` per agent:
/// `min{1/η_k, η_k q_k / (p_k β_k² + (1 + 2h) p_k e_k²)}`.
pub fn stability_bound(params: &[StabilityParams], h: f64) -> Vec<f64> {
    params
        .iter()
        .map(|s| {
            let first = 1.0 / s.eta;
            let denom = s.p * s.beta_sq + (1.0 + 2.0 * h) * s.p * s.e_sq;
            let second = if denom > 0.0 {
                s.eta * s.q / denom
            } else {
                f64::INFINITY
            };
            first.min(second)
        })
        .collect()
}

/// Parse the plain-text matrix format.
pub fn parse_matrix_text(text: &str) -> Result<Vec<Vec<f64>>, TopologyError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let n: usize = lines
        .next()
        .ok_or_else(|| TopologyError::Parse("empty file".into()))?
        .parse()
        .map_err(|e| TopologyError::Parse(format!("bad agent count: {e}")))?;
    let mut rows = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|e| TopologyError::Parse(format!("row {}: {e}", i + 1)))?;
        if row.len() != n {
            return Err(TopologyError::Parse(format!(
                "row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(TopologyError::Parse(format!(
            "expected {n} rows, found {}",
            rows.len()
        )));
    }
    Ok(rows)
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<CombinationMatrix, TopologyError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| TopologyError::Io(format!("{}: {e}", path.as_ref().display())))?;
    CombinationMatrix::from_rows(&parse_matrix_text(&text)?)
}

/// Metropolis-Hastings weights on an undirected graph given as adjacency
/// lists (self excluded). Degrees count the agent itself.
pub fn metropolis_weights(adjacency: &[Vec<usize>]) -> Result<CombinationMatrix, TopologyError> {
    let n = adjacency.len();
    let deg: Vec<usize> = adjacency.iter().map(|a| a.len() + 1).collect();
    let mut w = vec![0.0; n * n];
    for k in 0..n {
        let mut off = 0.0;
        for &l in &adjacency[k] {
            let a = 1.0 / deg[k].max(deg[l]) as f64;
            w[l * n + k] = a;
            off += a;
        }
        w[k * n + k] = 1.0 - off;
    }
    CombinationMatrix::new(n, w)
}

/// Random geometric graph on the unit square with Metropolis weights.
/// Redraws positions until the graph is connected.
pub fn random_geometric_metropolis(
    n: usize,
    radius: f64,
    seed: u64,
) -> Result<CombinationMatrix, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    const MAX_ATTEMPTS: u64 = 10_000;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = StreamId::new(seed, StreamKind::Topology, n as u64, attempt).rng();
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
        let adjacency: Vec<Vec<usize>> = (0..n)
            .map(|k| {
                (0..n)
                    .filter(|&l| {
                        l != k && {
                            let dx = pts[k].0 - pts[l].0;
                            let dy = pts[k].1 - pts[l].1;
                            (dx * dx + dy * dy).sqrt() <= radius
                        }
                    })
                    .collect()
            })
            .collect();
        match metropolis_weights(&adjacency) {
            Ok(a) => return Ok(a),
            Err(TopologyError::NotStronglyConnected { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(TopologyError::Generator(format!(
        "no connected geometric graph with n={n}, radius={radius} after {MAX_ATTEMPTS} draws"
    )))
}

/// Ring where each agent talks to its two neighbours, Metropolis weights.
pub fn ring(n: usize) -> Result<CombinationMatrix, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|k| {
            let mut a = vec![(k + 1) % n, (k + n - 1) % n];
            a.retain(|&l| l != k);
            a.sort_unstable();
            a.dedup();
            a
        })
        .collect();
    metropolis_weights(&adjacency)
}

/// Fully connected network with uniform weights `1/N`.
pub fn complete(n: usize) -> Result<CombinationMatrix, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    CombinationMatrix::new(n, vec![1.0 / n as f64; n * n])
}
