//! Per-agent risk models.
//!
//! Each model exposes its true risk `J_k(w)`, a true subgradient `g_k(w)`, an
//! instantaneous (stochastic) subgradient built from one streamed sample, and
//! whatever regularity constants are known in closed form.
//!
//! * [`LassoModel`]: linear regression data `γ = hᵀw° + n` with white Gaussian
//!   regressors, so the risk has the closed form
//!   `½σ_h²‖w − w°‖² + ½σ_n² + δ‖w‖₁`. With `δ = 0` this is the plain
//!   mean-square-error (quadratic) risk.
//! * [`SvmModel`]: regularised hinge loss on a fixed shard; the risk is the
//!   shard-empirical average and samples are streamed from the shard.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::dataset::LabeledPoint;
use crate::rng::{StreamId, StreamKind};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: model has {expected}, vector has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty data shard")]
    EmptyShard,
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite subgradient entry for agent {agent} at iteration {iteration}")]
    NonFinite { agent: usize, iteration: u64 },
}

/// `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_dim(expected: usize, w: &[f64]) -> Result<(), LossError> {
    if w.len() == expected {
        Ok(())
    } else {
        Err(LossError::DimensionMismatch {
            expected,
            got: w.len(),
        })
    }
}

/// An instantaneous subgradient together with where it was drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientSample {
    pub vector: Vec<f64>,
    pub agent: usize,
    pub iteration: u64,
}

impl SubgradientSample {
    pub fn new(vector: Vec<f64>, agent: usize, iteration: u64) -> Result<Self, LossError> {
        if vector.iter().all(|v| v.is_finite()) {
            Ok(Self {
                vector,
                agent,
                iteration,
            })
        } else {
            Err(LossError::NonFinite { agent, iteration })
        }
    }
}

/// Regularity constants. Only `eta` is always known; the others are `None`
/// when there is no closed form for them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RiskConstants {
    pub eta: f64,
    pub e_sq: Option<f64>,
    pub f_sq: Option<f64>,
    pub beta_sq: Option<f64>,
    pub sigma_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoModel {
    pub dim: usize,
    pub delta: f64,
    pub sigma_h_sq: f64,
    pub sigma_n_sq: f64,
    pub w_true: Vec<f64>,
}

impl LassoModel {
    pub fn new(
        delta: f64,
        sigma_h_sq: f64,
        sigma_n_sq: f64,
        w_true: Vec<f64>,
    ) -> Result<Self, LossError> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(LossError::InvalidParameter(format!("delta = {delta}")));
        }
        if !(sigma_h_sq > 0.0 && sigma_h_sq.is_finite()) {
            return Err(LossError::InvalidParameter(format!(
                "regressor variance = {sigma_h_sq}"
            )));
        }
        if !(sigma_n_sq >= 0.0 && sigma_n_sq.is_finite()) {
            return Err(LossError::InvalidParameter(format!(
                "noise variance = {sigma_n_sq}"
            )));
        }
        Ok(Self {
            dim: w_true.len(),
            delta,
            sigma_h_sq,
            sigma_n_sq,
            w_true,
        })
    }

    /// `½σ_h²‖w − w°‖² + ½σ_n² + δ‖w‖₁`.
    pub fn true_risk(&self, w: &[f64]) -> Result<f64, LossError> {
        check_dim(self.dim, w)?;
        Ok(self.risk_unchecked(w))
    }

    fn risk_unchecked(&self, w: &[f64]) -> f64 {
        let mut sq = 0.0;
        let mut l1 = 0.0;
        for (wi, oi) in w.iter().zip(&self.w_true) {
            sq += (wi - oi) * (wi - oi);
            l1 += wi.abs();
        }
        0.5 * self.sigma_h_sq * sq + 0.5 * self.sigma_n_sq + self.delta * l1
    }

    /// `σ_h²(w − w°) + δ·sgn(w)`.
    pub fn true_subgradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .zip(&self.w_true)
            .map(|(wi, oi)| self.sigma_h_sq * (wi - oi) + self.delta * sgn(*wi))
            .collect()
    }

    /// Draw `h ~ N(0, σ_h² I)` into `h` and return `γ = hᵀw° + n`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, h: &mut [f64]) -> f64 {
        let sh = self.sigma_h_sq.sqrt();
        let mut gamma = 0.0;
        for (hi, oi) in h.iter_mut().zip(&self.w_true) {
            let z: f64 = rng.sample(StandardNormal);
            *hi = sh * z;
            gamma += *hi * oi;
        }
        let z: f64 = rng.sample(StandardNormal);
        gamma + self.sigma_n_sq.sqrt() * z
    }

    /// `−h(γ − hᵀw) + δ·sgn(w)` written into `out`.
    pub fn stochastic_subgradient_into(&self, w: &[f64], gamma: f64, h: &[f64], out: &mut [f64]) {
        let residual = gamma - dot(h, w);
        for ((o, hi), wi) in out.iter_mut().zip(h).zip(w) {
            *o = -hi * residual + self.delta * sgn(*wi);
        }
    }

    pub fn stochastic_subgradient(&self, w: &[f64], gamma: f64, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.stochastic_subgradient_into(w, gamma, h, &mut out);
        out
    }

    /// `(c, d) = (σ_h², 2δ√M)` in `‖g(w₁) − g'(w₂)‖ ≤ c‖w₁ − w₂‖ + d`.
    pub fn affine_lipschitz(&self) -> (f64, f64) {
        (self.sigma_h_sq, 2.0 * self.delta * (self.dim as f64).sqrt())
    }

    /// `η = σ_h²`; `e² = 2c²` and `f² = 2d²` from [`Self::affine_lipschitz`].
    pub fn constants(&self) -> RiskConstants {
        let (c, d) = self.affine_lipschitz();
        RiskConstants {
            eta: self.sigma_h_sq,
            e_sq: Some(2.0 * c * c),
            f_sq: Some(2.0 * d * d),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub dim: usize,
    pub rho: f64,
    pub shard: Vec<LabeledPoint>,
}

impl SvmModel {
    pub fn new(dim: usize, rho: f64, shard: Vec<LabeledPoint>) -> Result<Self, LossError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(LossError::InvalidParameter(format!("rho = {rho}")));
        }
        if shard.is_empty() {
            return Err(LossError::EmptyShard);
        }
        if let Some(bad) = shard
            .iter()
            .find(|p| p.features.max_index().is_some_and(|i| i >= dim))
        {
            return Err(LossError::DimensionMismatch {
                expected: dim,
                got: bad.features.max_index().unwrap_or(0) + 1,
            });
        }
        Ok(Self { dim, rho, shard })
    }

    /// `(ρ/2)‖w‖² + mean max{0, 1 − γhᵀw}` over the shard.
    pub fn empirical_risk(&self, w: &[f64]) -> Result<f64, LossError> {
        check_dim(self.dim, w)?;
        if self.shard.is_empty() {
            return Err(LossError::EmptyShard);
        }
        Ok(self.risk_unchecked(w))
    }

    fn risk_unchecked(&self, w: &[f64]) -> f64 {
        let hinge: f64 = self
            .shard
            .iter()
            .map(|p| (1.0 - p.label * p.features.dot(w)).max(0.0))
            .sum();
        0.5 * self.rho * dot(w, w) + hinge / self.shard.len() as f64
    }

    /// Shard-average of the instantaneous subgradient.
    pub fn true_subgradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = w.iter().map(|v| self.rho * v).collect();
        let scale = 1.0 / self.shard.len() as f64;
        for p in &self.shard {
            if p.label * p.features.dot(w) <= 1.0 {
                for (&i, &v) in p.features.indices.iter().zip(&p.features.values) {
                    g[i] -= scale * p.label * v;
                }
            }
        }
        g
    }

    /// `ρw − γh·𝕀[γhᵀw ≤ 1]` written into `out`.
    pub fn stochastic_subgradient_into(&self, w: &[f64], point: &LabeledPoint, out: &mut [f64]) {
        for (o, wi) in out.iter_mut().zip(w) {
            *o = self.rho * wi;
        }
        if point.label * point.features.dot(w) <= 1.0 {
            for (&i, &v) in point.features.indices.iter().zip(&point.features.values) {
                out[i] -= point.label * v;
            }
        }
    }

    pub fn stochastic_subgradient(&self, w: &[f64], point: &LabeledPoint) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.stochastic_subgradient_into(w, point, &mut out);
        out
    }

    /// Shard index streamed to `agent` at `iteration` (≥ 1). Each epoch walks
    /// a fresh seeded permutation of the shard.
    pub fn sample_index(&self, seed: u64, agent: usize, iteration: u64) -> usize {
        let len = self.shard.len() as u64;
        let t = iteration.saturating_sub(1);
        epoch_permutation(self.shard.len(), seed, agent, t / len)[(t % len) as usize]
    }

    /// `η = ρ`, `e² = 2ρ²`, and `f² = 2d²` with `d` the mean feature norm of
    /// the shard (the hinge indicators can differ by at most one per sample).
    pub fn constants(&self) -> RiskConstants {
        let d = self
            .shard
            .iter()
            .map(|p| p.features.values.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / self.shard.len() as f64;
        RiskConstants {
            eta: self.rho,
            e_sq: Some(2.0 * self.rho * self.rho),
            f_sq: Some(2.0 * d * d),
            ..Default::default()
        }
    }
}

fn epoch_permutation(len: usize, seed: u64, agent: usize, epoch: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    let mut rng = StreamId::new(seed, StreamKind::Epoch, agent as u64, epoch).rng();
    perm.shuffle(&mut rng);
    perm
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossModel {
    Lasso(LassoModel),
    Svm(SvmModel),
}

impl LossModel {
    pub fn dim(&self) -> usize {
        match self {
            LossModel::Lasso(m) => m.dim,
            LossModel::Svm(m) => m.dim,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LossModel::Lasso(_) => "lasso",
            LossModel::Svm(_) => "svm",
        }
    }

    /// `J_k(w)`: closed form for LASSO, shard-empirical for SVM.
    pub fn risk(&self, w: &[f64]) -> Result<f64, LossError> {
        match self {
            LossModel::Lasso(m) => m.true_risk(w),
            LossModel::Svm(m) => m.empirical_risk(w),
        }
    }

    pub(crate) fn risk_unchecked(&self, w: &[f64]) -> f64 {
        match self {
            LossModel::Lasso(m) => m.risk_unchecked(w),
            LossModel::Svm(m) => m.risk_unchecked(w),
        }
    }

    pub fn true_subgradient(&self, w: &[f64]) -> Vec<f64> {
        match self {
            LossModel::Lasso(m) => m.true_subgradient(w),
            LossModel::Svm(m) => m.true_subgradient(w),
        }
    }

    pub fn constants(&self) -> RiskConstants {
        match self {
            LossModel::Lasso(m) => m.constants(),
            LossModel::Svm(m) => m.constants(),
        }
    }

    pub fn as_lasso(&self) -> Option<&LassoModel> {
        match self {
            LossModel::Lasso(m) => Some(m),
            LossModel::Svm(_) => None,
        }
    }

    /// Instantaneous subgradient drawn from stream `(seed, agent, iteration)`.
    /// Pure: the engine's cached sampler yields the same vector.
    pub fn instantaneous_subgradient(
        &self,
        w: &[f64],
        seed: u64,
        agent: usize,
        iteration: u64,
    ) -> Result<SubgradientSample, LossError> {
        check_dim(self.dim(), w)?;
        let mut sampler = AgentSampler::new(self);
        let mut out = vec![0.0; self.dim()];
        sampler.subgradient_into(self, w, seed, agent, iteration, &mut out);
        SubgradientSample::new(out, agent, iteration)
    }
}

/// Per-agent sampling scratch: the regressor buffer for LASSO and the cached
/// epoch permutation for SVM.
#[derive(Debug, Clone)]
pub struct AgentSampler {
    h: Vec<f64>,
    epoch: Option<(u64, Vec<usize>)>,
}

impl AgentSampler {
    pub fn new(model: &LossModel) -> Self {
        let h = match model {
            LossModel::Lasso(m) => vec![0.0; m.dim],
            LossModel::Svm(_) => Vec::new(),
        };
        Self { h, epoch: None }
    }

    /// Draw one regression sample; returns `(γ, h)`.
    pub fn regression_draw(
        &mut self,
        model: &LassoModel,
        seed: u64,
        agent: usize,
        iteration: u64,
    ) -> (f64, &[f64]) {
        let mut rng = StreamId::sample(seed, agent, iteration).rng();
        self.h.resize(model.dim, 0.0);
        let gamma = model.draw(&mut rng, &mut self.h);
        (gamma, &self.h)
    }

    fn svm_point<'m>(&mut self, model: &'m SvmModel, seed: u64, agent: usize, iteration: u64) -> &'m LabeledPoint {
        let len = model.shard.len() as u64;
        let t = iteration.saturating_sub(1);
        let epoch = t / len;
        if self.epoch.as_ref().map(|e| e.0) != Some(epoch) {
            self.epoch = Some((epoch, epoch_permutation(model.shard.len(), seed, agent, epoch)));
        }
        let perm = &self.epoch.as_ref().expect("epoch cached").1;
        &model.shard[perm[(t % len) as usize]]
    }

    pub fn subgradient_into(
        &mut self,
        model: &LossModel,
        w: &[f64],
        seed: u64,
        agent: usize,
        iteration: u64,
        out: &mut [f64],
    ) {
        match model {
            LossModel::Lasso(m) => {
                let (gamma, h) = self.regression_draw(m, seed, agent, iteration);
                m.stochastic_subgradient_into(w, gamma, h, out);
            }
            LossModel::Svm(m) => {
                let point = self.svm_point(m, seed, agent, iteration);
                m.stochastic_subgradient_into(w, point, out);
            }
        }
    }
}
