//! Ground truth for judging runs: network optima (closed form and numerical)
//! and the predicted convergence rate.

use thiserror::Error;

use rand::seq::SliceRandom;

use crate::losses::{sgn, LossModel, RiskConstants};
use crate::rng::{StreamId, StreamKind};
use crate::topology::WeightingScheme;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("model kind mismatch: {0}")]
    ModelKindMismatch(String),
    #[error("numerical optimum did not converge within {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("unstable configuration: agent {agent} has alpha_k = {alpha_k} (mu_k = {mu_k}, 1/eta_k = {inv_eta})")]
    UnstableConfiguration {
        agent: usize,
        alpha_k: f64,
        mu_k: f64,
        inv_eta: f64,
    },
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Elementwise `sgn(x)·max{0, |x| − ε}`.
pub fn soft_threshold(x: &[f64], eps: f64) -> Vec<f64> {
    debug_assert!(eps >= 0.0);
    x.iter().map(|&v| sgn(v) * (v.abs() - eps).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimumMethod {
    ClosedForm,
    Numerical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOptimum {
    pub w_star: Vec<f64>,
    /// `Σ q_k J_k(w⋆)`.
    pub risk_star: f64,
    pub method: OptimumMethod,
    pub iterations: usize,
}

fn check_q(models: &[LossModel], q: &[f64]) -> Result<(), OracleError> {
    if models.is_empty() || models.len() != q.len() {
        return Err(OracleError::BadInput(format!(
            "{} models but {} weights",
            models.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `Σ q_k J_k(w)`.
pub fn aggregate_risk(models: &[LossModel], q: &[f64], w: &[f64]) -> f64 {
    models
        .iter()
        .zip(q)
        .map(|(m, qk)| qk * m.risk_unchecked(w))
        .sum()
}

/// Closed-form minimiser of `Σ q_k J_k` for Gaussian LASSO agents:
/// soft-thresholding of the `q_kσ²_{h,k}`-weighted model average at
/// `ε = δ̄ / Σ q_kσ²_{h,k}`, where `δ̄ = Σ q_k δ_k`.
pub fn lasso_network_optimum(models: &[LossModel], q: &[f64]) -> Result<NetworkOptimum, OracleError> {
    check_q(models, q)?;
    let lasso: Vec<_> = models
        .iter()
        .map(|m| {
            m.as_lasso()
                .ok_or_else(|| OracleError::ModelKindMismatch(format!("expected lasso, found {}", m.kind())))
        })
        .collect::<Result<_, _>>()?;
    let dim = lasso[0].dim;
    if lasso.iter().any(|m| m.dim != dim) {
        return Err(OracleError::ModelKindMismatch("agents disagree on dimension".into()));
    }
    let sigma_bar: f64 = lasso.iter().zip(q).map(|(m, qk)| qk * m.sigma_h_sq).sum();
    let delta_bar: f64 = lasso.iter().zip(q).map(|(m, qk)| qk * m.delta).sum();
    let mut centre = vec![0.0; dim];
    for (m, qk) in lasso.iter().zip(q) {
        for (c, o) in centre.iter_mut().zip(&m.w_true) {
            *c += qk * m.sigma_h_sq * o / sigma_bar;
        }
    }
    let w_star = soft_threshold(&centre, delta_bar / sigma_bar);
    let risk_star = aggregate_risk(models, q, &w_star);
    Ok(NetworkOptimum {
        w_star,
        risk_star,
        method: OptimumMethod::ClosedForm,
        iterations: 0,
    })
}

/// Largest violation of `0 ∈ ∂(Σ q_k J_k)(w)` for LASSO agents, checked
/// coordinatewise: exact stationarity on the support, `|σ̄²(w − w̄°)_m| ≤ δ̄`
/// off it.
pub fn lasso_stationarity_violation(models: &[LossModel], q: &[f64], w: &[f64]) -> Result<f64, OracleError> {
    check_q(models, q)?;
    let mut smooth = vec![0.0; w.len()];
    let mut delta_bar = 0.0;
    for (m, qk) in models.iter().zip(q) {
        let m = m
            .as_lasso()
            .ok_or_else(|| OracleError::ModelKindMismatch(format!("expected lasso, found {}", m.kind())))?;
        delta_bar += qk * m.delta;
        for ((s, wi), oi) in smooth.iter_mut().zip(w).zip(&m.w_true) {
            *s += qk * m.sigma_h_sq * (wi - oi);
        }
    }
    Ok(smooth
        .iter()
        .zip(w)
        .map(|(&s, &wi)| {
            if wi != 0.0 {
                (s + delta_bar * sgn(wi)).abs()
            } else {
                (s.abs() - delta_bar).max(0.0)
            }
        })
        .fold(0.0, f64::max))
}

/// Objective handed to [`numerical_optimum`].
pub trait Objective {
    fn dim(&self) -> usize;
    /// Full objective value, l1 term included.
    fn value(&self, w: &[f64]) -> f64;
    /// Subgradient of everything except the l1 term handled by
    /// [`Objective::l1_weight`]. A gradient when [`Objective::is_smooth`].
    fn subgradient(&self, w: &[f64]) -> Vec<f64>;
    /// Weight of a `λ‖w‖₁` term treated by a proximal step.
    fn l1_weight(&self) -> f64 {
        0.0
    }
    fn is_smooth(&self) -> bool {
        false
    }
}

/// `Σ q_k J_k(w)` over agent models.
pub struct AggregateObjective<'a> {
    pub models: &'a [LossModel],
    pub q: &'a [f64],
}

impl AggregateObjective<'_> {
    fn all_lasso(&self) -> bool {
        self.models.iter().all(|m| m.as_lasso().is_some())
    }
}

impl Objective for AggregateObjective<'_> {
    fn dim(&self) -> usize {
        self.models[0].dim()
    }

    fn value(&self, w: &[f64]) -> f64 {
        aggregate_risk(self.models, self.q, w)
    }

    fn subgradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        let smooth = self.all_lasso();
        for (m, qk) in self.models.iter().zip(self.q) {
            let gk = match m {
                // the l1 part goes through the prox
                LossModel::Lasso(l) if smooth => w
                    .iter()
                    .zip(&l.w_true)
                    .map(|(wi, oi)| l.sigma_h_sq * (wi - oi))
                    .collect(),
                _ => m.true_subgradient(w),
            };
            for (a, b) in g.iter_mut().zip(gk) {
                *a += qk * b;
            }
        }
        g
    }

    fn l1_weight(&self) -> f64 {
        if self.all_lasso() {
            self.models
                .iter()
                .zip(self.q)
                .map(|(m, qk)| qk * m.as_lasso().map_or(0.0, |l| l.delta))
                .sum()
        } else {
            0.0
        }
    }

    fn is_smooth(&self) -> bool {
        self.all_lasso()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    /// Stop once the objective changes by at most this much.
    pub tolerance: f64,
    pub max_iter: usize,
    /// `a` in the `a/i` subgradient step schedule.
    pub step_scale: f64,
    /// Iterations between convergence checks of the subgradient method.
    pub check_every: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iter: 1_000_000,
            step_scale: 1.0,
            check_every: 1000,
        }
    }
}

/// Deterministic full-information minimiser.
///
/// Smooth objectives (optionally plus an l1 term) use proximal gradient with
/// backtracking. Non-smooth ones use subgradient descent with steps
/// `a/i`, keeping the best iterate and stopping once a block of
/// `check_every` iterations improves the best value by at most `tolerance`.
pub fn numerical_optimum<O: Objective + ?Sized>(obj: &O, opts: OracleOptions) -> Result<NetworkOptimum, OracleError> {
    if obj.is_smooth() {
        proximal_gradient(obj, opts)
    } else {
        subgradient_descent(obj, opts)
    }
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

fn proximal_gradient<O: Objective + ?Sized>(obj: &O, opts: OracleOptions) -> Result<NetworkOptimum, OracleError> {
    let lambda = obj.l1_weight();
    let smooth_value = |w: &[f64]| obj.value(w) - lambda * l1(w);
    let mut w = vec![0.0; obj.dim()];
    let mut value = obj.value(&w);
    let mut step = 1.0;
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let g = obj.subgradient(&w);
        let f = smooth_value(&w);
        let next = loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - step * gi).collect();
            let cand = soft_threshold(&trial, step * lambda);
            let diff: Vec<f64> = cand.iter().zip(&w).map(|(a, b)| a - b).collect();
            let model = f
                + g.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>()
                + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
            if smooth_value(&cand) <= model + 1e-15 * model.abs().max(1.0) || step < 1e-20 {
                break cand;
            }
            step *= 0.5;
        };
        let next_value = obj.value(&next);
        last_change = (value - next_value).abs();
        let moved = next.iter().zip(&w).any(|(a, b)| a != b);
        w = next;
        value = next_value;
        if last_change <= opts.tolerance || !moved {
            return Ok(NetworkOptimum {
                w_star: w,
                risk_star: value,
                method: OptimumMethod::Numerical,
                iterations: it,
            });
        }
    }
    Err(OracleError::NoConvergence {
        iterations: opts.max_iter,
        last_change,
    })
}

fn subgradient_descent<O: Objective + ?Sized>(obj: &O, opts: OracleOptions) -> Result<NetworkOptimum, OracleError> {
    let lambda = obj.l1_weight();
    let mut w = vec![0.0; obj.dim()];
    let mut best_w = w.clone();
    let mut best = obj.value(&w);
    let mut block_start_best = best;
    let check_every = opts.check_every.max(1);
    let mut last_change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut g = obj.subgradient(&w);
        if lambda > 0.0 {
            for (gi, wi) in g.iter_mut().zip(&w) {
                *gi += lambda * sgn(*wi);
            }
        }
        let step = opts.step_scale / it as f64;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        let v = obj.value(&w);
        if v < best {
            best = v;
            best_w.clone_from(&w);
        }
        if it % check_every == 0 {
            last_change = block_start_best - best;
            if last_change <= opts.tolerance {
                return Ok(NetworkOptimum {
                    w_star: best_w,
                    risk_star: best,
                    method: OptimumMethod::Numerical,
                    iterations: it,
                });
            }
            block_start_best = best;
        }
    }
    Err(OracleError::NoConvergence {
        iterations: opts.max_iter,
        last_change,
    })
}

/// Minimiser of `Σ q_k J_k` for SVM agents by dual coordinate ascent.
///
/// The aggregate is `(ρ̄/2)‖w‖² + Σ_j c_j max{0, 1 − γ_j h_jᵀw}` with
/// `ρ̄ = Σ q_k ρ_k` and `c_j = q_k / |shard_k|`. Stops once the duality gap is
/// at most `opts.tolerance`, which bounds the risk error of the result.
pub fn svm_network_optimum(models: &[LossModel], q: &[f64], opts: OracleOptions) -> Result<NetworkOptimum, OracleError> {
    check_q(models, q)?;
    let svms: Vec<_> = models
        .iter()
        .map(|m| match m {
            LossModel::Svm(s) => Ok(s),
            other => Err(OracleError::ModelKindMismatch(format!("expected svm, found {}", other.kind()))),
        })
        .collect::<Result<_, _>>()?;
    let dim = svms[0].dim;
    let rho: f64 = svms.iter().zip(q).map(|(s, qk)| qk * s.rho).sum();
    let mut points = Vec::new();
    for (s, qk) in svms.iter().zip(q) {
        let c = qk / s.shard.len() as f64;
        for p in &s.shard {
            let sq: f64 = p.features.values.iter().map(|v| v * v).sum();
            if sq > 0.0 {
                points.push((p, c, sq));
            }
        }
    }
    let mut alpha = vec![0.0; points.len()];
    let mut w = vec![0.0; dim];
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut rng = StreamId::new(0, StreamKind::Estimation, u64::MAX, 0).rng();
    let primal = |w: &[f64]| aggregate_risk(models, q, w);
    let mut gap = f64::INFINITY;
    for epoch in 0..opts.max_iter {
        order.shuffle(&mut rng);
        for &j in &order {
            let (p, c, sq) = points[j];
            let margin = p.label * p.features.dot(&w);
            let next = (alpha[j] + rho * (1.0 - margin) / sq).clamp(0.0, c);
            let delta = next - alpha[j];
            if delta != 0.0 {
                alpha[j] = next;
                let scale = delta * p.label / rho;
                for (&i, &v) in p.features.indices.iter().zip(&p.features.values) {
                    w[i] += scale * v;
                }
            }
        }
        let dual = alpha.iter().sum::<f64>() - 0.5 * rho * w.iter().map(|v| v * v).sum::<f64>();
        gap = primal(&w) - dual;
        if gap <= opts.tolerance {
            return Ok(NetworkOptimum {
                risk_star: primal(&w),
                w_star: w,
                method: OptimumMethod::Numerical,
                iterations: epoch + 1,
            });
        }
    }
    Err(OracleError::NoConvergence {
        iterations: opts.max_iter,
        last_change: gap,
    })
}

/// Minimum-`q`-weighted-norm selection of agent subgradients at `w⋆` subject
/// to `Σ q_k g'_k(w⋆) = 0`; returns `‖g'_k(w⋆)‖²` per agent.
///
/// For LASSO the freedom is the l1 subgradient on zero coordinates. SVM
/// agents use the deterministic shard subgradient (no selection).
pub fn optimum_subgradient_norms(models: &[LossModel], q: &[f64], w_star: &[f64]) -> Vec<f64> {
    let n = models.len();
    if !models.iter().all(|m| m.as_lasso().is_some()) {
        return models
            .iter()
            .map(|m| m.true_subgradient(w_star).iter().map(|v| v * v).sum())
            .collect();
    }
    let lasso: Vec<_> = models.iter().filter_map(LossModel::as_lasso).collect();
    let mut norms = vec![0.0; n];
    for (m, &wm) in w_star.iter().enumerate() {
        let a: Vec<f64> = lasso
            .iter()
            .map(|l| l.sigma_h_sq * (wm - l.w_true[m]))
            .collect();
        let g: Vec<f64> = if wm != 0.0 {
            lasso
                .iter()
                .zip(&a)
                .map(|(l, ak)| ak + l.delta * sgn(wm))
                .collect()
        } else {
            // g_k(c) = clamp(c, a_k − δ_k, a_k + δ_k); find c with Σ q_k g_k(c) = 0
            let at = |c: f64| -> Vec<f64> {
                lasso
                    .iter()
                    .zip(&a)
                    .map(|(l, ak)| c.clamp(ak - l.delta, ak + l.delta))
                    .collect()
            };
            let total = |c: f64| -> f64 { at(c).iter().zip(q).map(|(g, qk)| g * qk).sum() };
            let mut lo = lasso.iter().zip(&a).map(|(l, ak)| ak - l.delta).fold(f64::INFINITY, f64::min);
            let mut hi = lasso.iter().zip(&a).map(|(l, ak)| ak + l.delta).fold(f64::NEG_INFINITY, f64::max);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if total(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            at(0.5 * (lo + hi))
        };
        for (nk, gk) in norms.iter_mut().zip(g) {
            *nk += gk * gk;
        }
    }
    norms
}

/// The three per-agent contributions to the steady-state bound, when the
/// constants they need are known.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FloorTerms {
    /// `q_k f_k²`.
    pub nonsmooth: Option<f64>,
    /// `q_k σ_k²`.
    pub noise: Option<f64>,
    /// `2hq_k[f_k² + ‖g'_k(w⋆)‖² + ½]`.
    pub disagreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePrediction {
    pub alpha: f64,
    pub alpha_k: Vec<f64>,
    pub floor_terms: Vec<FloorTerms>,
    /// Some `e²` or `β²` was unknown and taken as zero.
    pub missing_constants: bool,
}

impl RatePrediction {
    /// Fill the disagreement term once `‖g'_k(w⋆)‖²` is known.
    pub fn attach_optimum_subgradients(&mut self, constants: &[RiskConstants], q: &[f64], g_sq: &[f64], h: f64) {
        for ((t, c), (qk, g)) in self.floor_terms.iter_mut().zip(constants).zip(q.iter().zip(g_sq)) {
            t.disagreement = c.f_sq.map(|f| 2.0 * h * qk * (f + g + 0.5));
        }
    }

    /// `(μ_o/2) Σ_k (terms)` when every term is available.
    pub fn floor_bound(&self, mu_o: f64) -> Option<f64> {
        let mut total = 0.0;
        for t in &self.floor_terms {
            total += t.nonsmooth? + t.noise? + t.disagreement?;
        }
        Some(0.5 * mu_o * total)
    }
}

/// `α_k = 1 − μ_k(η_k − μ_o e_k² − μ_o β_k² − 2μ_o h e_k²)`, `α = max_k α_k`.
pub fn predict_rate(scheme: &WeightingScheme, constants: &[RiskConstants], h: f64) -> Result<RatePrediction, OracleError> {
    if constants.len() != scheme.mu.len() {
        return Err(OracleError::BadInput(format!(
            "{} constant sets for {} agents",
            constants.len(),
            scheme.mu.len()
        )));
    }
    let mu_o = scheme.mu_o;
    let mut missing = false;
    let mut alpha_k = Vec::with_capacity(constants.len());
    let mut floor_terms = Vec::with_capacity(constants.len());
    for (k, (c, (&mu, &q))) in constants.iter().zip(scheme.mu.iter().zip(&scheme.q)).enumerate() {
        if c.eta.is_nan() || c.eta <= 0.0 {
            return Err(OracleError::BadInput(format!("agent {k}: eta must be positive")));
        }
        let e_sq = c.e_sq.unwrap_or_else(|| {
            missing = true;
            0.0
        });
        let beta_sq = c.beta_sq.unwrap_or_else(|| {
            missing = true;
            0.0
        });
        let a = 1.0 - mu * (c.eta - mu_o * e_sq - mu_o * beta_sq - 2.0 * mu_o * h * e_sq);
        if !(a > 0.0 && a < 1.0) || mu > 1.0 / c.eta {
            return Err(OracleError::UnstableConfiguration {
                agent: k,
                alpha_k: a,
                mu_k: mu,
                inv_eta: 1.0 / c.eta,
            });
        }
        alpha_k.push(a);
        floor_terms.push(FloorTerms {
            nonsmooth: c.f_sq.map(|f| q * f),
            noise: c.sigma_sq.map(|s| q * s),
            disagreement: None,
        });
    }
    if missing {
        log::warn!("rate prediction: missing e^2 or beta^2 treated as zero");
    }
    let alpha = alpha_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RatePrediction {
        alpha,
        alpha_k,
        floor_terms,
        missing_constants: missing,
    })
}
