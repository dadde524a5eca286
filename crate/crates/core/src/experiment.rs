//! Turning an [`ExperimentConfig`] into concrete agents, weights and a
//! ground-truth optimum, then running it.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::config::{DataSource, ExperimentConfig, LassoSpec, ModelSpec, SvmSpec, ThetaSpec, TopologySpec, VarianceSpec, WeightsSpec};
use crate::dataset::{load_libsvm, shard, synthetic_svm, train_test_split, Dataset, DatasetError};
use crate::engine::{simulate, RunFailure, RunReport, RunSetup, StrategyKind, theta_default};
use crate::losses::{LassoModel, LossError, LossModel, RiskConstants, SvmModel};
use crate::metrics::estimate_noise_constants;
use crate::oracles::{
    aggregate_risk, lasso_network_optimum, optimum_subgradient_norms, predict_rate, svm_network_optimum, NetworkOptimum,
    OracleError, OracleOptions, RatePrediction,
};
use crate::rng::{StreamId, StreamKind};
use crate::topology::{
    complete, perron_vector, random_geometric_metropolis, read_matrix_file, ring, stability_bound, step_sizes,
    CombinationMatrix, PerronWeights, StabilityParams, TopologyError, WeightingScheme,
};

/// Draws used per agent when estimating gradient-noise constants.
pub const NOISE_ESTIMATE_SAMPLES: usize = 2000;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("model: {0}")]
    Model(#[from] LossError),
    #[error("optimum: {0}")]
    Oracle(#[from] OracleError),
    #[error("{field}: {msg}")]
    Field { field: &'static str, msg: String },
}

/// Pre-run diagnostics. Logged and carried in the report; never fatal.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// The rate prediction has some `α_k ∉ (0, 1)` or `μ_k > 1/η_k`.
    UnstableConfiguration { agent: usize, alpha_k: f64, mu_k: f64 },
    /// `μ_k` exceeds the step-size stability bound.
    StepSizeExceedsBound { agent: usize, mu_k: f64, bound: f64 },
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::UnstableConfiguration { agent, alpha_k, mu_k } => {
                write!(f, "UnstableConfiguration: agent {agent} has alpha_k = {alpha_k:.6} at mu_k = {mu_k:e}")
            }
            Warning::StepSizeExceedsBound { agent, mu_k, bound } => {
                write!(f, "StepSizeExceedsBound: agent {agent} has mu_k = {mu_k:e} above bound {bound:e}")
            }
        }
    }
}

/// Everything resolved from a config, ready to simulate.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub topology: CombinationMatrix,
    pub perron: PerronWeights,
    pub scheme: WeightingScheme,
    pub models: Vec<LossModel>,
    pub optimum: NetworkOptimum,
    pub theta: f64,
    pub test_set: Option<Dataset>,
    pub evaluation_note: Option<String>,
}

/// Pre-run analysis of the step-sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Preflight {
    pub constants: Vec<RiskConstants>,
    pub bounds: Vec<f64>,
    pub prediction: Option<RatePrediction>,
    pub warnings: Vec<Warning>,
}

fn field(field: &'static str, msg: impl Into<String>) -> BuildError {
    BuildError::Field {
        field,
        msg: msg.into(),
    }
}

pub fn build_topology(spec: &TopologySpec) -> Result<CombinationMatrix, TopologyError> {
    match spec {
        TopologySpec::File(p) => read_matrix_file(p),
        TopologySpec::Geometric { agents, radius, seed } => random_geometric_metropolis(*agents, *radius, *seed),
        TopologySpec::Ring { agents } => ring(*agents),
        TopologySpec::Complete { agents } => complete(*agents),
    }
}

/// Per-agent values for `spec`, drawn from stream `(seed, Population, tag)`.
pub fn assign_values(spec: &VarianceSpec, n: usize, seed: u64, tag: u64) -> Result<Vec<f64>, BuildError> {
    let mut rng = StreamId::new(seed, StreamKind::Population, tag, 0).rng();
    Ok(match spec {
        VarianceSpec::Constant(v) => vec![*v; n],
        VarianceSpec::Uniform(lo, hi) => (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect(),
        VarianceSpec::Linspace(lo, hi) => {
            let mut v: Vec<f64> = (0..n)
                .map(|k| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
                .collect();
            v.shuffle(&mut rng);
            v
        }
        VarianceSpec::List(v) => {
            if v.len() != n {
                return Err(field("lasso", format!("list has {} values for {n} agents", v.len())));
            }
            v.clone()
        }
    })
}

/// Sparse `w°` with `sparsity` entries uniform in the support range.
fn sparse_model(spec: &LassoSpec, tag: u64) -> Vec<f64> {
    let mut rng = StreamId::new(spec.model_seed, StreamKind::Population, tag, 1).rng();
    let mut idx: Vec<usize> = (0..spec.dim).collect();
    idx.shuffle(&mut rng);
    let mut w = vec![0.0; spec.dim];
    let (lo, hi) = spec.support;
    for &i in &idx[..spec.sparsity] {
        w[i] = lo + (hi - lo) * rng.random::<f64>();
    }
    w
}

pub fn lasso_models(spec: &LassoSpec, n: usize) -> Result<Vec<LossModel>, BuildError> {
    let sh = assign_values(&spec.sigma_h_sq, n, spec.model_seed, 0)?;
    let sn = assign_values(&spec.sigma_n_sq, n, spec.model_seed, 1)?;
    let shared = sparse_model(spec, u64::MAX);
    (0..n)
        .map(|k| {
            let w = if spec.shared_model {
                shared.clone()
            } else {
                sparse_model(spec, k as u64)
            };
            Ok(LossModel::Lasso(LassoModel::new(spec.delta, sh[k], sn[k], w)?))
        })
        .collect()
}

/// SVM agents plus the evaluation set and a note saying where it came from.
pub fn svm_models(
    spec: &SvmSpec,
    n: usize,
    seed: u64,
) -> Result<(Vec<LossModel>, Option<Dataset>, String), BuildError> {
    let data = match &spec.data {
        DataSource::File(p) => load_libsvm(p, spec.dim)?,
        DataSource::Synthetic {
            samples,
            dim,
            flip,
            seed,
        } => synthetic_svm(*samples, *dim, *flip, *seed),
    };
    let (train, test, note) = match &spec.test_data {
        Some(p) => {
            let test = load_libsvm(p, spec.dim)?;
            (data, Some(test), format!("test file {}", p.display()))
        }
        None if spec.test_fraction > 0.0 => {
            let (train, test) = train_test_split(&data, spec.test_fraction, seed);
            let note = format!(
                "seeded split: {} train / {} test (fraction {})",
                train.len(),
                test.len(),
                spec.test_fraction
            );
            (train, Some(test), note)
        }
        None => (data, None, "no test set".to_string()),
    };
    if train.len() < n {
        return Err(field("svm.data", format!("{} training samples for {n} agents", train.len())));
    }
    let dim = spec
        .dim
        .unwrap_or_else(|| train.dim.max(test.as_ref().map_or(0, |t| t.dim)));
    if let Some(t) = &test {
        if t.dim > dim {
            return Err(field("svm.dim", format!("test set has dimension {} > {dim}", t.dim)));
        }
    }
    let models = shard(&train, n, spec.shard, seed)
        .into_iter()
        .map(|s| Ok(LossModel::Svm(SvmModel::new(dim, spec.rho, s)?)))
        .collect::<Result<Vec<_>, BuildError>>()?;
    Ok((models, test, note))
}

impl Experiment {
    pub fn build(config: &ExperimentConfig) -> Result<Self, BuildError> {
        let topology = build_topology(&config.topology)?;
        let n = topology.n_agents();
        let perron = perron_vector(&topology)?;
        let (models, test_set, evaluation_note) = match &config.model {
            ModelSpec::Lasso(spec) => (lasso_models(spec, n)?, None, None),
            ModelSpec::Svm(spec) => {
                let (m, t, note) = svm_models(spec, n, config.seed)?;
                (m, t, Some(note))
            }
        };
        let q = match &config.weights {
            WeightsSpec::Perron => perron.p.clone(),
            WeightsSpec::Uniform => vec![1.0 / n as f64; n],
            WeightsSpec::Explicit(q) => q.clone(),
        };
        let scheme = step_sizes(&perron, &q, config.mu_o)?;
        let optimum = match &config.model {
            ModelSpec::Lasso(_) => lasso_network_optimum(&models, &scheme.q)?,
            ModelSpec::Svm(_) => svm_network_optimum(
                &models,
                &scheme.q,
                OracleOptions {
                    tolerance: 1e-10,
                    max_iter: 100_000,
                    ..OracleOptions::default()
                },
            )?,
        };
        let theta = match config.theta {
            ThetaSpec::Explicit(t) => t,
            ThetaSpec::Rule(rule) => {
                let etas: Vec<f64> = models.iter().map(|m| m.constants().eta).collect();
                theta_default(&etas, config.mu_o, rule)
            }
        };
        Ok(Self {
            config: config.clone(),
            topology,
            perron,
            scheme,
            models,
            optimum,
            theta,
            test_set,
            evaluation_note,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.models.len()
    }

    /// Known constants, with `β²` and `σ²` estimated by sampling where
    /// enabled and unknown.
    pub fn constants(&self) -> Vec<RiskConstants> {
        self.models
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let mut c = m.constants();
                if self.config.estimate_noise && (c.beta_sq.is_none() || c.sigma_sq.is_none()) {
                    let est = estimate_noise_constants(m, &self.optimum.w_star, NOISE_ESTIMATE_SAMPLES, self.config.seed, k);
                    c.beta_sq.get_or_insert(est.beta_sq);
                    c.sigma_sq.get_or_insert(est.sigma_sq);
                }
                c
            })
            .collect()
    }

    /// Compare the step-sizes with the stability bound and predict the rate.
    pub fn preflight(&self) -> Preflight {
        let constants = self.constants();
        let h = self.config.h;
        let params: Vec<StabilityParams> = constants
            .iter()
            .enumerate()
            .map(|(k, c)| StabilityParams {
                eta: c.eta,
                beta_sq: c.beta_sq.unwrap_or(0.0),
                e_sq: c.e_sq.unwrap_or(0.0),
                q: self.scheme.q[k],
                p: self.perron.p[k],
            })
            .collect();
        let bounds = stability_bound(&params, h);
        let mut warnings = Vec::new();
        for (k, (&mu, &bound)) in self.scheme.mu.iter().zip(&bounds).enumerate() {
            if mu > bound {
                warnings.push(Warning::StepSizeExceedsBound { agent: k, mu_k: mu, bound });
            }
        }
        let prediction = match predict_rate(&self.scheme, &constants, h) {
            Ok(mut pred) => {
                let g_sq = optimum_subgradient_norms(&self.models, &self.scheme.q, &self.optimum.w_star);
                pred.attach_optimum_subgradients(&constants, &self.scheme.q, &g_sq, h);
                Some(pred)
            }
            Err(OracleError::UnstableConfiguration { agent, alpha_k, mu_k, .. }) => {
                warnings.insert(0, Warning::UnstableConfiguration { agent, alpha_k, mu_k });
                None
            }
            Err(e) => {
                log::warn!("rate prediction unavailable: {e}");
                None
            }
        };
        for w in &warnings {
            log::warn!("{w}");
        }
        Preflight {
            constants,
            bounds,
            prediction,
            warnings,
        }
    }

    pub fn setup(&self) -> RunSetup {
        let combiner = if self.config.strategy == StrategyKind::NonCooperative {
            CombinationMatrix::identity(self.n_agents())
        } else {
            self.topology.clone()
        };
        RunSetup {
            combiner,
            p: self.perron.p.clone(),
            scheme: self.scheme.clone(),
            models: self.models.clone(),
            optimum: self.optimum.clone(),
            theta: self.theta,
            strategy: self.config.strategy,
            seed: self.config.seed,
            horizon: self.config.horizon,
            record_every: self.config.record_every,
        }
    }

    /// Preflight, simulate and summarise.
    pub fn run(&self) -> Result<RunReport, RunFailure> {
        let preflight = self.preflight();
        let setup = self.setup();
        let start = Instant::now();
        let (trace, state) = simulate(&setup).map_err(|aborted| RunFailure {
            error: aborted.error,
            partial: Some(aborted.trace),
            warnings: preflight.warnings.clone(),
        })?;
        let wall_time = start.elapsed().as_secs_f64();
        let n = state.n;
        let final_network_risk_smoothed =
            (0..n).map(|k| aggregate_risk(&self.models, &self.scheme.q, state.smoothed_row(k))).sum::<f64>() / n as f64;
        let test_accuracy = self
            .test_set
            .as_ref()
            .filter(|t| !t.is_empty())
            .map(|t| (0..n).map(|k| t.accuracy(state.smoothed_row(k))).sum::<f64>() / n as f64);
        Ok(RunReport {
            trace,
            final_state: state,
            config_echo: self.config.clone(),
            wall_time,
            warnings: preflight.warnings,
            prediction: preflight.prediction,
            optimum: self.optimum.clone(),
            theta: self.theta,
            scheme: self.scheme.clone(),
            p: self.perron.p.clone(),
            final_network_risk_smoothed,
            test_accuracy,
            evaluation_note: self.evaluation_note.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_assignment_has_exact_mean() {
        let v = assign_values(&VarianceSpec::Linspace(0.5, 1.0), 20, 3, 0).unwrap();
        let mean = v.iter().sum::<f64>() / 20.0;
        assert!((mean - 0.75).abs() < 1e-15);
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted[0], 0.5);
        assert_eq!(sorted[19], 1.0);
        assert_ne!(v, sorted);
    }

    #[test]
    fn sparse_models_have_requested_support() {
        let spec = LassoSpec {
            dim: 100,
            delta: 0.005,
            sigma_h_sq: VarianceSpec::Constant(1.0),
            sigma_n_sq: VarianceSpec::Constant(0.01),
            sparsity: 5,
            support: (0.5, 1.5),
            shared_model: false,
            model_seed: 9,
        };
        let models = lasso_models(&spec, 3).unwrap();
        for m in &models {
            let w = &m.as_lasso().unwrap().w_true;
            let nz: Vec<f64> = w.iter().copied().filter(|v| *v != 0.0).collect();
            assert_eq!(nz.len(), 5);
            assert!(nz.iter().all(|v| (0.5..=1.5).contains(v)));
        }
        assert_ne!(models[0], models[1]);
    }
}
