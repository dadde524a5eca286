mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use atc_diffusion::cli::{
    inspect_topology, run_experiment, run_sweep, validate, CliError, OUTPUT_ROOT_ENV, PARTIAL_MARKER, PLOT_FILE,
    REPORT_FILE, SCALING_FILE, TRACE_FILE,
};
use atc_diffusion::config::{load_config, ConfigError, ModelSpec, SweepSpec, ThetaSpec};
use atc_diffusion::dataset::{parse_libsvm, shard, synthetic_svm, Dataset, ShardPolicy};
use atc_diffusion::engine::{EngineError, ThetaRule};
use atc_diffusion::metrics::MetricsTrace;
use atc_diffusion::ExperimentConfig;
use common::config_path;

const SMALL: &str = "topology = ring\ntopology.agents = 5\nmodel = lasso\nlasso.dim = 8\nlasso.sparsity = 2\n\
                     mu_o = 0.01\ntheta = mean_eta\nhorizon = 200\nrecord_every = 4\nestimate_noise = false\n";

const DIVERGENT: &str = "topology = ring\ntopology.agents = 20\nmodel = lasso\nlasso.dim = 100\nlasso.sparsity = 5\n\
                         mu_o = 1.0\ntheta = 0.99\nhorizon = 5000\nestimate_noise = false\noutput = runs/divergent\n";

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn diffsim(args: &[&str], root: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_diffsim"))
        .args(args)
        .env(OUTPUT_ROOT_ENV, root)
        .output()
        .unwrap()
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&format!("{SMALL}output = runs/small\n")).unwrap();
    let out = run_experiment(&cfg, Some(tmp.path())).unwrap();
    assert_eq!(out.dir, tmp.path().join("runs/small"));
    for f in [TRACE_FILE, REPORT_FILE, PLOT_FILE] {
        assert!(out.dir.join(f).is_file(), "{f} missing");
    }
    assert!(!out.dir.join(PARTIAL_MARKER).exists());
    let trace = MetricsTrace::read_csv(std::io::BufReader::new(fs::File::open(out.dir.join(TRACE_FILE)).unwrap())).unwrap();
    assert_eq!(trace.rows.len(), 200 / 4);
    assert_eq!(trace, out.report.trace);
}

#[test]
fn report_loads_back_as_the_same_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&format!("{SMALL}output = {}\n", tmp.path().join("o").display())).unwrap();
    let out = run_experiment(&cfg, None).unwrap();
    let again = load_config(out.dir.join(REPORT_FILE)).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn aborted_run_leaves_partial_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(DIVERGENT).unwrap();
    let err = run_experiment(&cfg, Some(tmp.path())).unwrap_err();
    let CliError::Aborted(failure) = &err else {
        panic!("expected abort, got {err}");
    };
    assert!(matches!(failure.error, EngineError::NonFiniteIterate { .. }));
    assert!(!failure.warnings.is_empty());
    assert_eq!(err.exit_code(), 2);
    let dir = tmp.path().join("runs/divergent");
    assert!(dir.join(PARTIAL_MARKER).is_file());
    assert!(dir.join(TRACE_FILE).is_file());
}

#[test]
fn sweep_writes_each_point_and_scaling_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let base = write(tmp.path(), "base.cfg", SMALL);
    let spec_text = format!(
        "base = {}\nmode = paired\nsweep.mu_o = 0.01,0.005\nsweep.horizon = 200,400\noutput = sweep\n",
        base.display()
    );
    let spec = SweepSpec::parse(&spec_text, Some(tmp.path())).unwrap();
    let out = run_sweep(&spec, Some(tmp.path())).unwrap();
    assert_eq!(out.points.len(), 2);
    for p in &out.points {
        let p = p.as_ref().unwrap();
        assert!(p.dir.join(TRACE_FILE).is_file());
    }
    let scaling = fs::read_to_string(out.dir.join(SCALING_FILE)).unwrap();
    assert_eq!(scaling.lines().count(), 3);
}

#[test]
fn validate_and_inspect() {
    let (text, warnings) = validate(Path::new(&config_path("example1_lasso.cfg"))).unwrap();
    assert!(text.contains("agents: 20"));
    assert!(warnings.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let m = write(tmp.path(), "a.txt", "3\n0.5 0.5 0\n0.5 0 0.5\n0 0.5 0.5\n");
    let s = inspect_topology(&m).unwrap();
    assert!(s.contains("doubly stochastic: true"));
    let bad = write(tmp.path(), "b.txt", "2\n0.5 0.5\n0.4 0.5\n");
    assert_eq!(inspect_topology(&bad).unwrap_err().exit_code(), 1);
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = write(tmp.path(), "ok.cfg", &format!("{SMALL}output = out\n"));
    let bad = write(tmp.path(), "bad.cfg", "model = lasso\nmu_o = fast\n");
    let div = write(tmp.path(), "div.cfg", DIVERGENT);

    let r = diffsim(&["run", ok.to_str().unwrap()], tmp.path());
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(tmp.path().join("out").join(TRACE_FILE).is_file());

    assert_eq!(diffsim(&["run", bad.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    assert_eq!(diffsim(&["validate", bad.to_str().unwrap()], tmp.path()).status.code(), Some(1));
    assert_eq!(diffsim(&["run", div.to_str().unwrap()], tmp.path()).status.code(), Some(2));
    assert!(tmp.path().join("runs/divergent").join(PARTIAL_MARKER).is_file());

    let v = diffsim(&["validate", ok.to_str().unwrap()], tmp.path());
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains("agents: 5"));
}

#[test]
fn missing_step_size_is_a_config_error() {
    let err = ExperimentConfig::parse("model = lasso\n").unwrap_err();
    assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "mu_o"), "{err}");
}

#[test]
fn zero_horizon_gives_empty_trace() {
    let cfg = ExperimentConfig::parse(&SMALL.replace("horizon = 200", "horizon = 0")).unwrap();
    let report = atc_diffusion::run(&cfg).unwrap();
    assert!(report.trace.rows.is_empty());
    assert!(report.final_state.iterates.iter().all(|v| *v == 0.0));
}

#[test]
fn adult_config_values() {
    let cfg = load_config(config_path("adult.cfg")).unwrap();
    let ModelSpec::Svm(svm) = &cfg.model else {
        panic!("svm expected");
    };
    assert_eq!(svm.rho, 0.002);
    assert_eq!(svm.dim, Some(123));
    assert_eq!(cfg.mu_o, 0.15);
    assert_eq!(cfg.theta, ThetaSpec::Rule(ThetaRule::ScaledRho(0.9)));
    assert_eq!(cfg.n_agents_hint(), Some(20));
}

#[test]
fn adult_sized_sharding() {
    let ds = Dataset {
        points: synthetic_svm(32561, 2, 0.0, 9).points,
        dim: 2,
    };
    for policy in [ShardPolicy::RoundRobin, ShardPolicy::RandomEqual] {
        let shards = shard(&ds, 20, policy, 3);
        let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 32561);
        assert_eq!(sizes.iter().filter(|s| **s == 1629).count(), 1);
        assert_eq!(sizes.iter().filter(|s| **s == 1628).count(), 19);
    }
}

#[test]
fn libsvm_round_trip() {
    let ds = synthetic_svm(50, 6, 0.1, 4);
    let text = ds.to_libsvm();
    let back = parse_libsvm(&text, Some(6)).unwrap();
    assert_eq!(back.dim, ds.dim);
    assert_eq!(back.points.len(), ds.points.len());
    for (a, b) in back.points.iter().zip(&ds.points) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.features.indices, b.features.indices);
        for (x, y) in a.features.values.iter().zip(&b.features.values) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn bundled_svm_config_builds() {
    let cfg = load_config(config_path("svm_synthetic.cfg")).unwrap();
    let exp = atc_diffusion::Experiment::build(&cfg).unwrap();
    assert_eq!(exp.n_agents(), 10);
    assert!(exp.test_set.as_ref().is_some_and(|t| t.len() == 500));
}
