//! Property checks shared by the proptest suite and the acceptance target.
#![allow(dead_code)]

use atc_diffusion::config::{ExperimentConfig, LassoSpec, VarianceSpec};
use atc_diffusion::dataset::{LabeledPoint, SparseVector};
use atc_diffusion::engine::{simulate, smoothing_step, NetworkState};
use atc_diffusion::experiment::{lasso_models, Experiment};
use atc_diffusion::losses::{AgentSampler, LassoModel, LossModel, SvmModel};
use atc_diffusion::oracles::soft_threshold;
use atc_diffusion::topology::{metropolis_weights, perron_vector, step_sizes, CombinationMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const MANIFEST: &str = env!("CARGO_MANIFEST_DIR");

pub fn config_path(name: &str) -> String {
    format!("{MANIFEST}/configs/{name}")
}

/// Left-stochastic matrix with positive diagonal and a directed cycle
/// backbone, so it is always strongly connected and primitive.
pub fn left_stochastic(max_n: usize) -> impl Strategy<Value = CombinationMatrix> {
    (2..=max_n)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(0.05f64..1.0, n * n),
                prop::collection::vec(any::<bool>(), n * n),
            )
        })
        .prop_map(|(n, raw, mask)| {
            let mut w = vec![0.0; n * n];
            for l in 0..n {
                for k in 0..n {
                    let backbone = l == k || l == (k + 1) % n;
                    if backbone || mask[l * n + k] {
                        w[l * n + k] = raw[l * n + k];
                    }
                }
            }
            for k in 0..n {
                let s: f64 = (0..n).map(|l| w[l * n + k]).sum();
                for l in 0..n {
                    w[l * n + k] /= s;
                }
            }
            CombinationMatrix::new(n, w).expect("constructed matrix is valid")
        })
}

/// Undirected connected graph (path backbone plus random chords) with
/// Metropolis weights.
pub fn metropolis_matrix(max_n: usize) -> impl Strategy<Value = CombinationMatrix> {
    (2..=max_n)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(any::<bool>(), n * n)))
        .prop_map(|(n, mask)| {
            let mut adj = vec![Vec::new(); n];
            for l in 0..n {
                for k in (l + 1)..n {
                    if k == l + 1 || mask[l * n + k] {
                        adj[l].push(k);
                        adj[k].push(l);
                    }
                }
            }
            metropolis_weights(&adj).expect("connected graph")
        })
}

/// Column sums are one to 1e-12 and entries non-negative.
pub fn check_left_stochastic(a: &CombinationMatrix) -> Result<(), TestCaseError> {
    prop_assert!(a.max_column_error() <= 1e-12);
    for row in a.rows() {
        prop_assert!(row.iter().all(|v| *v >= 0.0));
    }
    Ok(())
}

/// Perron vector against the null space of `A − I` from a dense SVD.
pub fn check_perron_vs_dense(a: &CombinationMatrix) -> Result<(), TestCaseError> {
    let n = a.n_agents();
    let p = perron_vector(a).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let m = DMatrix::from_fn(n, n, |l, k| a.weight(l, k) - if l == k { 1.0 } else { 0.0 });
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty");
    let v: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let s: f64 = v.iter().sum();
    for (pk, vk) in p.p.iter().zip(&v) {
        prop_assert!((pk - vk / s).abs() <= 1e-9, "perron {pk} vs dense {}", vk / s);
    }
    prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    prop_assert!(p.p.iter().all(|v| *v > 0.0));
    Ok(())
}

pub fn check_doubly_stochastic_uniform(a: &CombinationMatrix) -> Result<(), TestCaseError> {
    prop_assert!(a.is_doubly_stochastic(1e-12));
    let p = perron_vector(a).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let n = a.n_agents() as f64;
    for pk in &p.p {
        prop_assert!((pk - 1.0 / n).abs() <= 1e-10);
    }
    Ok(())
}

/// `Σ p_k μ_k = μ_o` for any positive `q`.
pub fn check_step_size_average(a: &CombinationMatrix, raw_q: &[f64], mu_o: f64) -> Result<(), TestCaseError> {
    let n = a.n_agents();
    let total: f64 = raw_q[..n].iter().sum();
    let q: Vec<f64> = raw_q[..n].iter().map(|v| v / total).collect();
    let p = perron_vector(a).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let scheme = step_sizes(&p, &q, mu_o).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let avg: f64 = p.p.iter().zip(&scheme.mu).map(|(pk, mk)| pk * mk).sum();
    prop_assert!((avg - mu_o).abs() <= 1e-12 * mu_o.max(1.0));
    Ok(())
}

/// Combining identical rows returns the same row everywhere.
pub fn check_consensus_preserved(a: &CombinationMatrix, row: &[f64]) -> Result<(), TestCaseError> {
    let n = a.n_agents();
    let dim = row.len();
    let psi: Vec<f64> = (0..n).flat_map(|_| row.iter().copied()).collect();
    let mut out = vec![0.0; n * dim];
    a.combine(&psi, dim, &mut out);
    for k in 0..n {
        for (o, r) in out[k * dim..(k + 1) * dim].iter().zip(row) {
            prop_assert!((o - r).abs() <= 1e-12 * r.abs().max(1.0));
        }
    }
    Ok(())
}

pub fn check_soft_threshold_nonexpansive(x: &[f64], y: &[f64], eps: f64) -> Result<(), TestCaseError> {
    let sx = soft_threshold(x, eps);
    let sy = soft_threshold(y, eps);
    for i in 0..x.len() {
        prop_assert!((sx[i] - sy[i]).abs() <= (x[i] - y[i]).abs() + 1e-15);
        prop_assert!(sx[i].abs() <= x[i].abs());
    }
    Ok(())
}

pub fn lasso_model(dim: usize, delta: f64, sigma_h_sq: f64, seed: u64) -> LassoModel {
    let spec = LassoSpec {
        dim,
        delta,
        sigma_h_sq: VarianceSpec::Constant(sigma_h_sq),
        sigma_n_sq: VarianceSpec::Constant(0.05),
        sparsity: dim.min(3),
        support: (0.5, 1.5),
        shared_model: true,
        model_seed: seed,
    };
    match lasso_models(&spec, 1).expect("valid spec").remove(0) {
        LossModel::Lasso(m) => m,
        LossModel::Svm(_) => unreachable!(),
    }
}

pub fn svm_model(points: &[(bool, Vec<f64>)], rho: f64) -> SvmModel {
    let dim = points[0].1.len();
    let shard = points
        .iter()
        .map(|(y, x)| LabeledPoint {
            label: if *y { 1.0 } else { -1.0 },
            features: SparseVector::from_dense(x),
        })
        .collect();
    SvmModel::new(dim, rho, shard).expect("valid shard")
}

/// `J(w1) ≥ J(w2) + g(w2)ᵀ(w1 − w2) + (η/2)‖w1 − w2‖²` to 1e-9 slack.
pub fn check_strong_convexity(model: &LossModel, w1: &[f64], w2: &[f64]) -> Result<(), TestCaseError> {
    let eta = model.constants().eta;
    let j1 = model.risk(w1).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let j2 = model.risk(w2).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let g = model.true_subgradient(w2);
    let lin: f64 = g.iter().zip(w1.iter().zip(w2)).map(|(gi, (a, b))| gi * (a - b)).sum();
    let sq: f64 = w1.iter().zip(w2).map(|(a, b)| (a - b) * (a - b)).sum();
    prop_assert!(j1 >= j2 + lin + 0.5 * eta * sq - 1e-9, "{j1} < {}", j2 + lin + 0.5 * eta * sq);
    Ok(())
}

/// `‖g(w1) − g(w2)‖ ≤ c‖w1 − w2‖ + d` with the model's stated constants.
pub fn check_affine_lipschitz(model: &LassoModel, w1: &[f64], w2: &[f64]) -> Result<(), TestCaseError> {
    let (c, d) = model.affine_lipschitz();
    let g1 = model.true_subgradient(w1);
    let g2 = model.true_subgradient(w2);
    let lhs: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let dist: f64 = w1.iter().zip(w2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    prop_assert!(lhs <= c * dist + d + 1e-12);
    Ok(())
}

/// Mean of `ĝ(w) − g(w)` over `samples` streamed draws is within four
/// standard errors of zero in every coordinate.
pub fn check_zero_mean_noise(model: &LossModel, w: &[f64], samples: u64, seed: u64) -> Result<(), TestCaseError> {
    let dim = model.dim();
    let g = model.true_subgradient(w);
    let mut sampler = AgentSampler::new(model);
    let mut ghat = vec![0.0; dim];
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for i in 1..=samples {
        sampler.subgradient_into(model, w, seed, 0, i, &mut ghat);
        for m in 0..dim {
            let s = ghat[m] - g[m];
            sum[m] += s;
            sum_sq[m] += s * s;
        }
    }
    let n = samples as f64;
    for m in 0..dim {
        let mean = sum[m] / n;
        let var = (sum_sq[m] / n - mean * mean).max(0.0);
        let stderr = (var / n).sqrt();
        prop_assert!(mean.abs() <= 4.0 * stderr + 1e-12, "coordinate {m}: mean {mean:e}, stderr {stderr:e}");
    }
    Ok(())
}

/// Over one full epoch an SVM agent sees each shard sample once, so the
/// average instantaneous subgradient equals the shard subgradient.
pub fn check_svm_epoch_average(model: &SvmModel, w: &[f64], seed: u64) -> Result<(), TestCaseError> {
    let m = LossModel::Svm(model.clone());
    let len = model.shard.len() as u64;
    let mut sampler = AgentSampler::new(&m);
    let mut ghat = vec![0.0; model.dim];
    let mut avg = vec![0.0; model.dim];
    for i in (len + 1)..=(2 * len) {
        sampler.subgradient_into(&m, w, seed, 3, i, &mut ghat);
        for (a, g) in avg.iter_mut().zip(&ghat) {
            *a += g / len as f64;
        }
    }
    for (a, b) in avg.iter().zip(model.true_subgradient(w)) {
        prop_assert!((a - b).abs() <= 1e-12);
    }
    Ok(())
}

/// Recursive smoothing equals `Σ_{j=0}^{L} θ^{L−j} w_j / Σ_{j=0}^{L} θ^{L−j}`
/// with `w_0 = 0`, and the weights sum to one.
pub fn check_smoothing_explicit(theta: f64, traj: &[f64]) -> Result<(), TestCaseError> {
    let mut state = NetworkState::new(1, 1);
    for &w in traj {
        state.iterates[0] = w;
        smoothing_step(&mut state, theta).map_err(|e| TestCaseError::fail(e.to_string()))?;
    }
    let l = traj.len();
    let weights: Vec<f64> = (0..=l).map(|j| theta.powi((l - j) as i32)).collect();
    let s: f64 = weights.iter().sum();
    let r: Vec<f64> = weights.iter().map(|w| w / s).collect();
    prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    let explicit: f64 = r[1..].iter().zip(traj).map(|(a, b)| a * b).sum();
    let scale = traj.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    prop_assert!((state.smoothed[0] - explicit).abs() <= 1e-10 * scale);
    prop_assert!((state.smoothing_sum - s).abs() <= 1e-10 * s);
    Ok(())
}

/// Small LASSO network used by run-level properties.
pub fn small_lasso_config(seed: u64, horizon: u64) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "topology = geometric\ntopology.agents = 6\ntopology.radius = 0.6\ntopology.seed = {seed}\n\
         model = lasso\nlasso.dim = 10\nlasso.delta = 0.01\nlasso.sparsity = 3\nlasso.seed = {seed}\n\
         mu_o = 0.01\ntheta = mean_eta\nhorizon = {horizon}\nseed = {seed}\nestimate_noise = false\n"
    ))
    .expect("valid config")
}

/// Pocket excess risk never increases along a run.
pub fn check_pocket_monotone(seed: u64) -> Result<(), TestCaseError> {
    let exp = Experiment::build(&small_lasso_config(seed, 400)).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let (trace, _) = simulate(&exp.setup()).map_err(|e| TestCaseError::fail(e.error.to_string()))?;
    for pair in trace.rows.windows(2) {
        prop_assert!(pair[1].pocket_excess <= pair[0].pocket_excess);
    }
    Ok(())
}

/// Two runs of the same config give byte-identical CSV.
pub fn check_determinism(seed: u64) -> Result<(), TestCaseError> {
    let cfg = small_lasso_config(seed, 300);
    let a = atc_diffusion::engine::run(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let b = atc_diffusion::engine::run(&cfg).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(a.trace.to_csv_string(), b.trace.to_csv_string());
    prop_assert_eq!(a.final_state, b.final_state);
    Ok(())
}

/// `max_k ‖w_{k,i}‖` over the whole run stays within 10× its value at
/// `i = horizon/10`.
pub fn check_bounded_iterates(trace: &atc_diffusion::MetricsTrace, horizon: u64) -> Result<(), TestCaseError> {
    let reference = trace
        .rows
        .iter()
        .find(|r| r.iteration >= horizon / 10)
        .map(|r| r.iterate_norm_max)
        .ok_or_else(|| TestCaseError::fail("trace shorter than horizon/10"))?;
    let peak = trace.rows.iter().map(|r| r.iterate_norm_max).fold(0.0, f64::max);
    prop_assert!(peak <= 10.0 * reference, "peak {peak} vs reference {reference}");
    Ok(())
}
