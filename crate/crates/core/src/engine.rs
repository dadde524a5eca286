//! Synchronous adapt-then-combine diffusion with exponential smoothing, plus
//! the diffusion LMS baselines and the non-cooperative reference.
//!
//! One iteration is two barrier-separated phases: every agent computes its
//! intermediate `ψ_k` from its own previous iterate and its private sample
//! stream, then every agent combines its neighbours' `ψ_l` with the weights
//! in column `k` of the combination matrix.

use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::experiment::{Experiment, Warning};
use crate::losses::{sgn, AgentSampler, LossModel};
use crate::metrics::{MetricsTrace, Recorder};
use crate::oracles::{NetworkOptimum, RatePrediction};
use crate::topology::{CombinationMatrix, WeightingScheme};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("non-finite iterate at agent {agent}, iteration {iteration}")]
    NonFiniteIterate { iteration: u64, agent: usize },
    #[error("smoothing factor {0} outside (0, 1)")]
    ThetaOutOfRange(f64),
    #[error("model kind mismatch: {0}")]
    ModelKindMismatch(String),
    #[error("state does not match network: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
}

/// A run that stopped early, with whatever was recorded before the abort.
#[derive(Debug, Error, Clone)]
#[error("{error}")]
pub struct RunFailure {
    pub error: EngineError,
    pub partial: Option<MetricsTrace>,
    pub warnings: Vec<Warning>,
}

impl From<EngineError> for RunFailure {
    fn from(error: EngineError) -> Self {
        Self {
            error,
            partial: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub n: usize,
    pub dim: usize,
    /// Row `k` is `w_{k,i}`.
    pub iterates: Vec<f64>,
    /// Row `k` is `w̄_{k,i}`.
    pub smoothed: Vec<f64>,
    /// `S_i`; `S_0 = 1`.
    pub smoothing_sum: f64,
    pub iteration: u64,
}

impl NetworkState {
    /// `w_{k,0} = w̄_{k,0} = 0`, `S_0 = 1`.
    pub fn new(n: usize, dim: usize) -> Self {
        Self {
            n,
            dim,
            iterates: vec![0.0; n * dim],
            smoothed: vec![0.0; n * dim],
            smoothing_sum: 1.0,
            iteration: 0,
        }
    }

    pub fn iterate(&self, k: usize) -> &[f64] {
        &self.iterates[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iterate_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.iterates[k * self.dim..(k + 1) * self.dim]
    }

    pub fn smoothed_row(&self, k: usize) -> &[f64] {
        &self.smoothed[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    DiffusionSubgradient,
    DiffusionLms,
    SparseDiffusionLms,
    /// Diffusion subgradient with `A = I`.
    NonCooperative,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::DiffusionSubgradient => "diffusion_subgradient",
            StrategyKind::DiffusionLms => "diffusion_lms",
            StrategyKind::SparseDiffusionLms => "sparse_diffusion_lms",
            StrategyKind::NonCooperative => "non_cooperative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "diffusion_subgradient" => StrategyKind::DiffusionSubgradient,
            "diffusion_lms" => StrategyKind::DiffusionLms,
            "sparse_diffusion_lms" => StrategyKind::SparseDiffusionLms,
            "non_cooperative" => StrategyKind::NonCooperative,
            _ => return None,
        })
    }
}

/// Scratch buffers reused across iterations.
#[derive(Debug, Clone)]
pub struct Workspace {
    psi: Vec<f64>,
    grad: Vec<f64>,
    samplers: Vec<AgentSampler>,
}

impl Workspace {
    pub fn new(models: &[LossModel]) -> Self {
        let dim = models.first().map_or(0, LossModel::dim);
        Self {
            psi: vec![0.0; models.len() * dim],
            grad: vec![0.0; dim],
            samplers: models.iter().map(AgentSampler::new).collect(),
        }
    }
}

fn check_shape(state: &NetworkState, a: &CombinationMatrix, mu: &[f64], models: &[LossModel]) -> Result<(), EngineError> {
    if a.n_agents() != state.n || mu.len() != state.n || models.len() != state.n {
        return Err(EngineError::ShapeMismatch(format!(
            "state has {} agents, matrix {}, step-sizes {}, models {}",
            state.n,
            a.n_agents(),
            mu.len(),
            models.len()
        )));
    }
    if let Some(m) = models.iter().find(|m| m.dim() != state.dim) {
        return Err(EngineError::ShapeMismatch(format!(
            "model dimension {} vs state dimension {}",
            m.dim(),
            state.dim
        )));
    }
    Ok(())
}

/// One ATC iteration with an arbitrary subgradient oracle:
/// `ψ_k = w_k − μ_k ĝ_k(w_k)`, then `w_k ← Σ_l a_lk ψ_l`.
/// `subgradient(k, i, w, out)` writes agent `k`'s subgradient at iteration `i`.
pub fn atc_step_with<F>(
    state: &mut NetworkState,
    a: &CombinationMatrix,
    mu: &[f64],
    psi: &mut Vec<f64>,
    grad: &mut Vec<f64>,
    mut subgradient: F,
) -> Result<(), EngineError>
where
    F: FnMut(usize, u64, &[f64], &mut [f64]),
{
    let dim = state.dim;
    let iteration = state.iteration + 1;
    psi.resize(state.n * dim, 0.0);
    grad.resize(dim, 0.0);
    for k in 0..state.n {
        let w = state.iterate(k);
        subgradient(k, iteration, w, grad);
        let row = &mut psi[k * dim..(k + 1) * dim];
        for ((p, wi), gi) in row.iter_mut().zip(w).zip(grad.iter()) {
            *p = wi - mu[k] * gi;
        }
    }
    a.combine(psi, dim, &mut state.iterates);
    state.iteration = iteration;
    check_finite(state)
}

fn check_finite(state: &NetworkState) -> Result<(), EngineError> {
    if let Some(pos) = state.iterates.iter().position(|v| !v.is_finite()) {
        return Err(EngineError::NonFiniteIterate {
            iteration: state.iteration,
            agent: pos / state.dim.max(1),
        });
    }
    Ok(())
}

/// ATC diffusion with each agent's instantaneous subgradient drawn from
/// stream `(seed, k, i)`.
pub fn atc_step(
    state: &mut NetworkState,
    a: &CombinationMatrix,
    mu: &[f64],
    models: &[LossModel],
    seed: u64,
    ws: &mut Workspace,
) -> Result<(), EngineError> {
    check_shape(state, a, mu, models)?;
    let Workspace { psi, grad, samplers } = ws;
    atc_step_with(state, a, mu, psi, grad, |k, i, w, out| {
        samplers[k].subgradient_into(&models[k], w, seed, k, i, out);
    })
}

/// Diffusion LMS: `ψ_k = w_k + μ_k h(γ − hᵀw_k)`, minus `μ_k δ·sgn(w_k)` when
/// `sparse`, then the same combine as [`atc_step`]. Uses the same sample
/// streams as [`atc_step`].
pub fn lms_step(
    state: &mut NetworkState,
    a: &CombinationMatrix,
    mu: &[f64],
    models: &[LossModel],
    seed: u64,
    ws: &mut Workspace,
    sparse: bool,
) -> Result<(), EngineError> {
    check_shape(state, a, mu, models)?;
    let lasso: Vec<_> = models
        .iter()
        .map(|m| {
            m.as_lasso()
                .ok_or_else(|| EngineError::ModelKindMismatch(format!("LMS needs regression models, found {}", m.kind())))
        })
        .collect::<Result<_, _>>()?;
    let Workspace { psi, grad, samplers } = ws;
    atc_step_with(state, a, mu, psi, grad, |k, i, w, out| {
        let m = lasso[k];
        let (gamma, h) = samplers[k].regression_draw(m, seed, k, i);
        let residual: f64 = gamma - h.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
        // ψ = w − μ·out, so out carries the negated LMS correction
        for ((o, hi), wi) in out.iter_mut().zip(h).zip(w) {
            *o = -hi * residual;
            if sparse {
                *o += m.delta * sgn(*wi);
            }
        }
    })
}

/// `S_i = θS_{i−1} + 1`; `w̄_{k,i} = (1 − 1/S_i) w̄_{k,i−1} + (1/S_i) w_{k,i}`.
pub fn smoothing_step(state: &mut NetworkState, theta: f64) -> Result<(), EngineError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(EngineError::ThetaOutOfRange(theta));
    }
    state.smoothing_sum = theta * state.smoothing_sum + 1.0;
    let inv = 1.0 / state.smoothing_sum;
    for (bar, w) in state.smoothed.iter_mut().zip(&state.iterates) {
        *bar = (1.0 - inv) * *bar + inv * w;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaRule {
    /// `θ = 1 − 2μ_o · mean_k η_k`.
    MeanEta,
    /// `θ = 1 − c·μ_o·η` with `c ∈ (0, 1]` and `η` the mean strong-convexity
    /// constant (the common `ρ` for SVM agents).
    ScaledRho(f64),
}

/// Default smoothing factor, clamped into the open interval (0, 1).
pub fn theta_default(etas: &[f64], mu_o: f64, rule: ThetaRule) -> f64 {
    let mean_eta = etas.iter().sum::<f64>() / etas.len().max(1) as f64;
    let theta = match rule {
        ThetaRule::MeanEta => 1.0 - 2.0 * mu_o * mean_eta,
        ThetaRule::ScaledRho(c) => 1.0 - c * mu_o * mean_eta,
    };
    theta.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
}

/// Everything a simulation needs, already resolved.
#[derive(Debug, Clone)]
pub struct RunSetup {
    /// Matrix used by the combine step (`I` for the non-cooperative strategy).
    pub combiner: CombinationMatrix,
    /// Perron weights of the configured topology.
    pub p: Vec<f64>,
    pub scheme: WeightingScheme,
    pub models: Vec<LossModel>,
    pub optimum: NetworkOptimum,
    pub theta: f64,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub horizon: u64,
    pub record_every: u64,
}

/// Result of [`simulate`] that aborted.
#[derive(Debug, Clone)]
pub struct Aborted {
    pub error: EngineError,
    pub trace: MetricsTrace,
    pub state: NetworkState,
}

/// Run `horizon` iterations, recording every `record_every` iterations.
pub fn simulate(setup: &RunSetup) -> Result<(MetricsTrace, NetworkState), Box<Aborted>> {
    let n = setup.models.len();
    let dim = setup.models.first().map_or(0, LossModel::dim);
    let mut state = NetworkState::new(n, dim);
    let mut ws = Workspace::new(&setup.models);
    let mut recorder = Recorder::new(&setup.models, &setup.optimum, &setup.scheme.q, &setup.p);
    let record_every = setup.record_every.max(1);
    let mut trace = MetricsTrace {
        rows: Vec::with_capacity((setup.horizon / record_every) as usize),
    };
    for _ in 0..setup.horizon {
        let step = match setup.strategy {
            StrategyKind::DiffusionSubgradient | StrategyKind::NonCooperative => atc_step(
                &mut state,
                &setup.combiner,
                &setup.scheme.mu,
                &setup.models,
                setup.seed,
                &mut ws,
            ),
            StrategyKind::DiffusionLms | StrategyKind::SparseDiffusionLms => lms_step(
                &mut state,
                &setup.combiner,
                &setup.scheme.mu,
                &setup.models,
                setup.seed,
                &mut ws,
                setup.strategy == StrategyKind::SparseDiffusionLms,
            ),
        }
        .and_then(|()| smoothing_step(&mut state, setup.theta));
        if let Err(error) = step {
            return Err(Box::new(Aborted { error, trace, state }));
        }
        if state.iteration.is_multiple_of(record_every) {
            trace.rows.push(recorder.record(&state, &setup.models));
        }
    }
    Ok((trace, state))
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trace: MetricsTrace,
    pub final_state: NetworkState,
    pub config_echo: ExperimentConfig,
    /// Seconds.
    pub wall_time: f64,
    pub warnings: Vec<Warning>,
    pub prediction: Option<RatePrediction>,
    pub optimum: NetworkOptimum,
    pub theta: f64,
    pub scheme: WeightingScheme,
    pub p: Vec<f64>,
    /// Mean over agents of `Σ_l q_l J_l(w̄_k)` at the end of the run.
    pub final_network_risk_smoothed: f64,
    /// Mean over agents of test accuracy of `w̄_k`, SVM runs only.
    pub test_accuracy: Option<f64>,
    /// How the test set was obtained.
    pub evaluation_note: Option<String>,
}

/// Build the experiment described by `config`, check step-sizes, simulate
/// and collect the report. Deterministic given the config.
pub fn run(config: &ExperimentConfig) -> Result<RunReport, RunFailure> {
    let exp = Experiment::build(config).map_err(|e| EngineError::ConfigInvalid(e.to_string()))?;
    exp.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LassoModel;
    use crate::topology::complete;
    use approx::assert_abs_diff_eq;

    fn buffers() -> (Vec<f64>, Vec<f64>) {
        (Vec::new(), Vec::new())
    }

    #[test]
    fn identity_combiner_is_independent_steps() {
        let a = CombinationMatrix::identity(2);
        let mut st = NetworkState::new(2, 2);
        st.iterates = vec![1.0, 2.0, 3.0, 4.0];
        let (mut psi, mut g) = buffers();
        atc_step_with(&mut st, &a, &[0.1, 0.5], &mut psi, &mut g, |_, _, w, out| {
            out.copy_from_slice(w);
        })
        .unwrap();
        assert_eq!(st.iterates, vec![0.9, 1.8, 1.5, 2.0]);
        assert_eq!(st.iteration, 1);
    }

    #[test]
    fn zero_subgradient_is_pure_averaging() {
        let a = CombinationMatrix::from_rows(&[vec![0.7, 0.2], vec![0.3, 0.8]]).unwrap();
        let mut st = NetworkState::new(2, 1);
        st.iterates = vec![1.0, 5.0];
        let (mut psi, mut g) = buffers();
        atc_step_with(&mut st, &a, &[0.3, 0.3], &mut psi, &mut g, |_, _, _, out| out.fill(0.0)).unwrap();
        assert_abs_diff_eq!(st.iterates[0], 0.7 * 1.0 + 0.3 * 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(st.iterates[1], 0.2 * 1.0 + 0.8 * 5.0, epsilon = 1e-15);
    }

    #[test]
    fn two_agent_combine() {
        let a = complete(2).unwrap();
        let mut st = NetworkState::new(2, 2);
        st.iterates = vec![1.0, 0.0, 0.0, 1.0];
        let (mut psi, mut g) = buffers();
        atc_step_with(&mut st, &a, &[1.0, 1.0], &mut psi, &mut g, |_, _, _, out| out.fill(0.0)).unwrap();
        assert_eq!(st.iterates, vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn non_finite_iterates_abort() {
        let a = CombinationMatrix::identity(1);
        let mut st = NetworkState::new(1, 1);
        let (mut psi, mut g) = buffers();
        let err = atc_step_with(&mut st, &a, &[1.0], &mut psi, &mut g, |_, _, _, out| out[0] = f64::NAN).unwrap_err();
        assert_eq!(
            err,
            EngineError::NonFiniteIterate {
                iteration: 1,
                agent: 0
            }
        );
    }

    #[test]
    fn smoothing_first_step_and_fixed_point() {
        let mut st = NetworkState::new(1, 2);
        st.iterates = vec![2.0, -4.0];
        st.smoothed = vec![1.0, 1.0];
        smoothing_step(&mut st, 0.9).unwrap();
        assert_abs_diff_eq!(st.smoothing_sum, 1.9, epsilon = 1e-15);
        assert_abs_diff_eq!(st.smoothed[0], (0.9 * 1.0 + 2.0) / 1.9, epsilon = 1e-15);
        assert_abs_diff_eq!(st.smoothed[1], (0.9 * 1.0 - 4.0) / 1.9, epsilon = 1e-15);

        let mut st = NetworkState::new(1, 1);
        st.iterates = vec![3.0];
        st.smoothed = vec![3.0];
        for _ in 0..50 {
            smoothing_step(&mut st, 0.7).unwrap();
            assert_abs_diff_eq!(st.smoothed[0], 3.0, epsilon = 1e-14);
        }
        assert_eq!(smoothing_step(&mut st, 1.0), Err(EngineError::ThetaOutOfRange(1.0)));
        assert_eq!(smoothing_step(&mut st, 0.0), Err(EngineError::ThetaOutOfRange(0.0)));
    }

    #[test]
    fn theta_rules() {
        assert_abs_diff_eq!(theta_default(&[0.5, 1.0], 0.001, ThetaRule::MeanEta), 0.9985, epsilon = 1e-15);
        assert_abs_diff_eq!(
            theta_default(&[0.002; 3], 0.15, ThetaRule::ScaledRho(0.9)),
            0.99973,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            theta_default(&[1e-5], 0.5, ThetaRule::ScaledRho(0.5)),
            0.9999975,
            epsilon = 1e-15
        );
        let clamped = theta_default(&[10.0], 1.0, ThetaRule::MeanEta);
        assert!(clamped > 0.0 && clamped < 1.0);
    }

    fn lasso_models(n: usize) -> Vec<LossModel> {
        (0..n)
            .map(|k| {
                LossModel::Lasso(
                    LassoModel::new(0.05, 0.5 + 0.1 * k as f64, 0.01, vec![1.0, 0.0, -0.5]).unwrap(),
                )
            })
            .collect()
    }

    #[test]
    fn sparse_lms_matches_subgradient_step() {
        let models = lasso_models(3);
        let a = complete(3).unwrap();
        let mu = [0.01, 0.02, 0.03];
        let mut s1 = NetworkState::new(3, 3);
        s1.iterates = vec![0.3, -0.1, 0.0, 0.2, 0.0, 0.4, -0.5, 0.1, 0.0];
        let mut s2 = s1.clone();
        let mut ws1 = Workspace::new(&models);
        let mut ws2 = Workspace::new(&models);
        atc_step(&mut s1, &a, &mu, &models, 17, &mut ws1).unwrap();
        lms_step(&mut s2, &a, &mu, &models, 17, &mut ws2, true).unwrap();
        for (x, y) in s1.iterates.iter().zip(&s2.iterates) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn plain_and_sparse_lms_agree_at_zero() {
        let models = lasso_models(2);
        let a = complete(2).unwrap();
        let mut s1 = NetworkState::new(2, 3);
        let mut s2 = s1.clone();
        let mut ws1 = Workspace::new(&models);
        let mut ws2 = Workspace::new(&models);
        lms_step(&mut s1, &a, &[0.1, 0.1], &models, 3, &mut ws1, false).unwrap();
        lms_step(&mut s2, &a, &[0.1, 0.1], &models, 3, &mut ws2, true).unwrap();
        assert_eq!(s1.iterates, s2.iterates);
    }

    #[test]
    fn lms_rejects_svm_models() {
        use crate::dataset::{LabeledPoint, SparseVector};
        use crate::losses::SvmModel;
        let pt = LabeledPoint {
            label: 1.0,
            features: SparseVector::from_dense(&[1.0]),
        };
        let models = vec![LossModel::Svm(SvmModel::new(1, 0.1, vec![pt]).unwrap())];
        let a = CombinationMatrix::identity(1);
        let mut st = NetworkState::new(1, 1);
        let mut ws = Workspace::new(&models);
        assert!(matches!(
            lms_step(&mut st, &a, &[0.1], &models, 0, &mut ws, false),
            Err(EngineError::ModelKindMismatch(_))
        ));
    }
}
