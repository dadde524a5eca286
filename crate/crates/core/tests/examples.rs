//! Every bundled example runs to completion.

#[path = "../examples/lasso_network.rs"]
mod lasso_network;

#[test]
fn lasso_network_runs() {
    lasso_network::run_example().unwrap();
}

#[path = "../examples/svm_cooperation.rs"]
mod svm_cooperation;

#[test]
fn svm_cooperation_runs() {
    svm_cooperation::run_example().unwrap();
}

#[path = "../examples/topology_inspect.rs"]
mod topology_inspect;

#[test]
fn topology_inspect_runs() {
    topology_inspect::run_example().unwrap();
}

#[path = "../examples/smoothing.rs"]
mod smoothing;

#[test]
fn smoothing_runs() {
    smoothing::run_example().unwrap();
}

#[path = "../examples/step_size_sweep.rs"]
mod step_size_sweep;

#[test]
fn step_size_sweep_runs() {
    step_size_sweep::run_example().unwrap();
}

#[path = "../examples/lasso_optimum.rs"]
mod lasso_optimum;

#[test]
fn lasso_optimum_runs() {
    lasso_optimum::run_example().unwrap();
}

#[path = "../examples/lms_baselines.rs"]
mod lms_baselines;

#[test]
fn lms_baselines_runs() {
    lms_baselines::run_example().unwrap();
}

#[path = "../examples/stability_boundary.rs"]
mod stability_boundary;

#[test]
fn stability_boundary_runs() {
    stability_boundary::run_example().unwrap();
}
