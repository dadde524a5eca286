//! Plain-text `key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Unknown or repeated
//! keys are errors. [`ExperimentConfig::to_text`] writes every key with its
//! resolved value, so an echoed config loads back to an identical value.
//!
//! ```text
//! model = lasso
//! mu_o = 0.001
//! topology = geometric
//! topology.agents = 20
//! lasso.sigma_h_sq = linspace:0.5,1.0
//! theta = mean_eta
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::ShardPolicy;
use crate::engine::{StrategyKind, ThetaRule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    File(PathBuf),
    Geometric { agents: usize, radius: f64, seed: u64 },
    Ring { agents: usize },
    Complete { agents: usize },
}

/// How a per-agent scalar is assigned across agents.
#[derive(Debug, Clone, PartialEq)]
pub enum VarianceSpec {
    Constant(f64),
    /// Independent uniform draws in `[lo, hi]`.
    Uniform(f64, f64),
    /// Evenly spaced from `lo` to `hi`, assigned to agents in a seeded order.
    Linspace(f64, f64),
    List(Vec<f64>),
}

impl VarianceSpec {
    fn parse(field: &str, s: &str) -> Result<Self, ConfigError> {
        let (kind, rest) = match s.split_once(':') {
            Some((k, r)) => (k.trim(), r),
            None => return Ok(VarianceSpec::Constant(parse_f64(field, s)?)),
        };
        let vals = parse_list(field, rest)?;
        let pair = |vals: &[f64]| -> Result<(f64, f64), ConfigError> {
            match vals {
                [lo, hi] if lo <= hi => Ok((*lo, *hi)),
                _ => Err(invalid(field, "expected lo,hi with lo <= hi")),
            }
        };
        match kind {
            "const" => match vals.as_slice() {
                [v] => Ok(VarianceSpec::Constant(*v)),
                _ => Err(invalid(field, "const takes one value")),
            },
            "uniform" => pair(&vals).map(|(a, b)| VarianceSpec::Uniform(a, b)),
            "linspace" => pair(&vals).map(|(a, b)| VarianceSpec::Linspace(a, b)),
            "list" => Ok(VarianceSpec::List(vals)),
            other => Err(invalid(field, format!("unknown kind '{other}'"))),
        }
    }

    fn to_text(&self) -> String {
        match self {
            VarianceSpec::Constant(v) => format!("const:{v}"),
            VarianceSpec::Uniform(a, b) => format!("uniform:{a},{b}"),
            VarianceSpec::Linspace(a, b) => format!("linspace:{a},{b}"),
            VarianceSpec::List(v) => format!("list:{}", join(v)),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            VarianceSpec::Constant(v) => vec![*v],
            VarianceSpec::Uniform(a, b) | VarianceSpec::Linspace(a, b) => vec![*a, *b],
            VarianceSpec::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSpec {
    pub dim: usize,
    pub delta: f64,
    pub sigma_h_sq: VarianceSpec,
    pub sigma_n_sq: VarianceSpec,
    /// Number of non-zero entries in `w°`.
    pub sparsity: usize,
    /// Range of the non-zero entries of `w°`.
    pub support: (f64, f64),
    /// One `w°` for all agents instead of one per agent.
    pub shared_model: bool,
    pub model_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Synthetic {
        samples: usize,
        dim: usize,
        flip: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSpec {
    pub rho: f64,
    pub data: DataSource,
    /// Held-out file; when absent a seeded split of `data` is used.
    pub test_data: Option<PathBuf>,
    pub test_fraction: f64,
    pub shard: ShardPolicy,
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Lasso(LassoSpec),
    Svm(SvmSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightsSpec {
    /// `q = p`, so every `μ_k = μ_o`.
    Perron,
    Uniform,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThetaSpec {
    Explicit(f64),
    Rule(ThetaRule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub topology: TopologySpec,
    pub model: ModelSpec,
    pub weights: WeightsSpec,
    pub mu_o: f64,
    pub theta: ThetaSpec,
    pub horizon: u64,
    pub record_every: u64,
    pub seed: u64,
    pub strategy: StrategyKind,
    /// Constant used in the stability bound and the rate prediction.
    pub h: f64,
    /// Estimate the gradient-noise constants by sampling before the run.
    pub estimate_noise: bool,
    pub output: PathBuf,
}

/// Raw key/value pairs with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                msg: format!("expected key = value, found '{line}'"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    msg: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (idx + 1, v.trim().to_string())).is_some() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    msg: format!("duplicate key '{key}'"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), (0, value.to_string()));
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn parse_f64(field: &str, s: &str) -> Result<f64, ConfigError> {
    let v = f64::from_str(s.trim()).map_err(|_| invalid(field, format!("'{s}' is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, "must be finite"))
    }
}

fn parse_list(field: &str, s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',').map(|x| parse_f64(field, x)).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Typed accessor over [`KeyValues`] that tracks which keys were consumed.
struct Reader<'a> {
    kv: &'a KeyValues,
    used: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.used.push(key);
        self.kv.get(key)
    }

    fn required(&mut self, key: &'static str) -> Result<&'a str, ConfigError> {
        self.raw(key).ok_or_else(|| invalid(key, "missing required key"))
    }

    fn parsed<T: FromStr>(&mut self, key: &'static str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s.parse().map_err(|_| invalid(key, format!("cannot parse '{s}'"))),
        }
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => parse_f64(key, s),
        }
    }

    fn bool_or(&mut self, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(s) => Err(invalid(key, format!("expected true or false, found '{s}'"))),
        }
    }
}

fn resolve(base: Option<&Path>, p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    match base {
        Some(dir) if path.is_relative() => {
            let joined = dir.join(path);
            std::path::absolute(&joined).unwrap_or(joined)
        }
        _ => path,
    }
}

impl ExperimentConfig {
    /// Build a config from parsed pairs. Relative data paths are resolved
    /// against `base_dir` when given.
    pub fn from_key_values(kv: &KeyValues, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut r = Reader { kv, used: Vec::new() };

        let topology = match r.raw("topology").unwrap_or("geometric") {
            "file" => TopologySpec::File(resolve(base_dir, r.required("topology.file")?)),
            "geometric" => TopologySpec::Geometric {
                agents: r.parsed("topology.agents", 20)?,
                radius: r.f64_or("topology.radius", 0.4)?,
                seed: r.parsed("topology.seed", 1)?,
            },
            "ring" => TopologySpec::Ring {
                agents: r.parsed("topology.agents", 20)?,
            },
            "complete" => TopologySpec::Complete {
                agents: r.parsed("topology.agents", 20)?,
            },
            other => return Err(invalid("topology", format!("unknown generator '{other}'"))),
        };
        match &topology {
            TopologySpec::Geometric { agents, radius, .. } => {
                if *agents == 0 {
                    return Err(invalid("topology.agents", "must be at least 1"));
                }
                if radius.is_nan() || *radius <= 0.0 {
                    return Err(invalid("topology.radius", "must be positive"));
                }
            }
            TopologySpec::Ring { agents } | TopologySpec::Complete { agents } if *agents == 0 => {
                return Err(invalid("topology.agents", "must be at least 1"));
            }
            _ => {}
        }

        let model = match r.required("model")? {
            "lasso" => {
                let spec = LassoSpec {
                    dim: r.parsed("lasso.dim", 100)?,
                    delta: r.f64_or("lasso.delta", 0.005)?,
                    sigma_h_sq: match r.raw("lasso.sigma_h_sq") {
                        Some(s) => VarianceSpec::parse("lasso.sigma_h_sq", s)?,
                        None => VarianceSpec::Linspace(0.5, 1.0),
                    },
                    sigma_n_sq: match r.raw("lasso.sigma_n_sq") {
                        Some(s) => VarianceSpec::parse("lasso.sigma_n_sq", s)?,
                        None => VarianceSpec::Constant(0.01),
                    },
                    sparsity: r.parsed("lasso.sparsity", 5)?,
                    support: match r.raw("lasso.support") {
                        Some(s) => match parse_list("lasso.support", s)?.as_slice() {
                            [lo, hi] if lo <= hi => (*lo, *hi),
                            _ => return Err(invalid("lasso.support", "expected lo,hi with lo <= hi")),
                        },
                        None => (0.5, 1.5),
                    },
                    shared_model: r.bool_or("lasso.shared_model", true)?,
                    model_seed: r.parsed("lasso.seed", 7)?,
                };
                if spec.dim == 0 {
                    return Err(invalid("lasso.dim", "must be at least 1"));
                }
                if spec.delta < 0.0 {
                    return Err(invalid("lasso.delta", "must be non-negative"));
                }
                if spec.sparsity > spec.dim {
                    return Err(invalid("lasso.sparsity", "exceeds lasso.dim"));
                }
                if spec.sigma_h_sq.values().iter().any(|&v| v <= 0.0) {
                    return Err(invalid("lasso.sigma_h_sq", "variances must be positive"));
                }
                if spec.sigma_n_sq.values().iter().any(|&v| v < 0.0) {
                    return Err(invalid("lasso.sigma_n_sq", "variances must be non-negative"));
                }
                ModelSpec::Lasso(spec)
            }
            "svm" => {
                let data = match r.required("svm.data")? {
                    "synthetic" => DataSource::Synthetic {
                        samples: r.parsed("svm.synthetic.samples", 2000)?,
                        dim: r.parsed("svm.synthetic.dim", 10)?,
                        flip: r.f64_or("svm.synthetic.flip", 0.05)?,
                        seed: r.parsed("svm.synthetic.seed", 1)?,
                    },
                    path => DataSource::File(resolve(base_dir, path)),
                };
                let spec = SvmSpec {
                    rho: r.f64_or("svm.rho", 0.01)?,
                    data,
                    test_data: match r.raw("svm.test_data") {
                        None | Some("none") => None,
                        Some(p) => Some(resolve(base_dir, p)),
                    },
                    test_fraction: r.f64_or("svm.test_fraction", 0.2)?,
                    shard: match r.raw("svm.shard").unwrap_or("round_robin") {
                        "round_robin" => ShardPolicy::RoundRobin,
                        "random_equal" => ShardPolicy::RandomEqual,
                        other => return Err(invalid("svm.shard", format!("unknown policy '{other}'"))),
                    },
                    dim: match r.raw("svm.dim") {
                        None | Some("auto") => None,
                        Some(s) => Some(s.parse().map_err(|_| invalid("svm.dim", format!("cannot parse '{s}'")))?),
                    },
                };
                if spec.rho.is_nan() || spec.rho <= 0.0 {
                    return Err(invalid("svm.rho", "must be positive"));
                }
                if !(0.0..1.0).contains(&spec.test_fraction) {
                    return Err(invalid("svm.test_fraction", "must lie in [0, 1)"));
                }
                ModelSpec::Svm(spec)
            }
            other => return Err(invalid("model", format!("expected lasso or svm, found '{other}'"))),
        };

        let weights = match r.raw("weights").unwrap_or("perron") {
            "perron" => WeightsSpec::Perron,
            "uniform" => WeightsSpec::Uniform,
            s => match s.strip_prefix("explicit:") {
                Some(list) => WeightsSpec::Explicit(parse_list("weights", list)?),
                None => return Err(invalid("weights", format!("expected perron, uniform or explicit:..., found '{s}'"))),
            },
        };

        let mu_o = parse_f64("mu_o", r.required("mu_o")?)?;
        if mu_o <= 0.0 {
            return Err(invalid("mu_o", "must be positive"));
        }

        let theta = match r.raw("theta").unwrap_or("mean_eta") {
            "mean_eta" => ThetaSpec::Rule(ThetaRule::MeanEta),
            s => match s.strip_prefix("scaled_rho:") {
                Some(c) => {
                    let c = parse_f64("theta", c)?;
                    if !(c > 0.0 && c <= 1.0) {
                        return Err(invalid("theta", "scaled_rho constant must lie in (0, 1]"));
                    }
                    ThetaSpec::Rule(ThetaRule::ScaledRho(c))
                }
                None => {
                    let t = parse_f64("theta", s)?;
                    if !(t > 0.0 && t < 1.0) {
                        return Err(invalid("theta", "explicit value must lie in (0, 1)"));
                    }
                    ThetaSpec::Explicit(t)
                }
            },
        };

        let strategy = {
            let s = r.raw("strategy").unwrap_or("diffusion_subgradient");
            StrategyKind::parse(s).ok_or_else(|| invalid("strategy", format!("unknown strategy '{s}'")))?
        };
        let record_every = r.parsed("record_every", 1u64)?;
        if record_every == 0 {
            return Err(invalid("record_every", "must be at least 1"));
        }
        let h = r.f64_or("h", crate::topology::DEFAULT_H)?;
        if h < 0.0 {
            return Err(invalid("h", "must be non-negative"));
        }

        let cfg = ExperimentConfig {
            topology,
            model,
            weights,
            mu_o,
            theta,
            horizon: r.parsed("horizon", 20_000)?,
            record_every,
            seed: r.parsed("seed", 1)?,
            strategy,
            h,
            estimate_noise: r.bool_or("estimate_noise", true)?,
            output: PathBuf::from(r.raw("output").unwrap_or("runs/default")),
        };

        if let Some(k) = kv.keys().find(|k| !r.used.contains(k)) {
            return Err(invalid(k, "unknown or inapplicable key"));
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_key_values(&KeyValues::parse(text)?, None)
    }

    pub fn n_agents_hint(&self) -> Option<usize> {
        match &self.topology {
            TopologySpec::Geometric { agents, .. } | TopologySpec::Ring { agents } | TopologySpec::Complete { agents } => {
                Some(*agents)
            }
            TopologySpec::File(_) => None,
        }
    }

    /// Every key with its resolved value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        match &self.topology {
            TopologySpec::File(p) => {
                put("topology", "file".into());
                put("topology.file", p.display().to_string());
            }
            TopologySpec::Geometric { agents, radius, seed } => {
                put("topology", "geometric".into());
                put("topology.agents", agents.to_string());
                put("topology.radius", radius.to_string());
                put("topology.seed", seed.to_string());
            }
            TopologySpec::Ring { agents } => {
                put("topology", "ring".into());
                put("topology.agents", agents.to_string());
            }
            TopologySpec::Complete { agents } => {
                put("topology", "complete".into());
                put("topology.agents", agents.to_string());
            }
        }
        match &self.model {
            ModelSpec::Lasso(l) => {
                put("model", "lasso".into());
                put("lasso.dim", l.dim.to_string());
                put("lasso.delta", l.delta.to_string());
                put("lasso.sigma_h_sq", l.sigma_h_sq.to_text());
                put("lasso.sigma_n_sq", l.sigma_n_sq.to_text());
                put("lasso.sparsity", l.sparsity.to_string());
                put("lasso.support", format!("{},{}", l.support.0, l.support.1));
                put("lasso.shared_model", l.shared_model.to_string());
                put("lasso.seed", l.model_seed.to_string());
            }
            ModelSpec::Svm(m) => {
                put("model", "svm".into());
                put("svm.rho", m.rho.to_string());
                match &m.data {
                    DataSource::File(p) => put("svm.data", p.display().to_string()),
                    DataSource::Synthetic { samples, dim, flip, seed } => {
                        put("svm.data", "synthetic".into());
                        put("svm.synthetic.samples", samples.to_string());
                        put("svm.synthetic.dim", dim.to_string());
                        put("svm.synthetic.flip", flip.to_string());
                        put("svm.synthetic.seed", seed.to_string());
                    }
                }
                put(
                    "svm.test_data",
                    m.test_data.as_ref().map_or("none".into(), |p| p.display().to_string()),
                );
                put("svm.test_fraction", m.test_fraction.to_string());
                put("svm.shard", m.shard.name().into());
                put("svm.dim", m.dim.map_or("auto".into(), |d| d.to_string()));
            }
        }
        put(
            "weights",
            match &self.weights {
                WeightsSpec::Perron => "perron".into(),
                WeightsSpec::Uniform => "uniform".into(),
                WeightsSpec::Explicit(v) => format!("explicit:{}", join(v)),
            },
        );
        put("mu_o", self.mu_o.to_string());
        put(
            "theta",
            match self.theta {
                ThetaSpec::Explicit(t) => t.to_string(),
                ThetaSpec::Rule(ThetaRule::MeanEta) => "mean_eta".into(),
                ThetaSpec::Rule(ThetaRule::ScaledRho(c)) => format!("scaled_rho:{c}"),
            },
        );
        put("horizon", self.horizon.to_string());
        put("record_every", self.record_every.to_string());
        put("seed", self.seed.to_string());
        put("strategy", self.strategy.name().into());
        put("h", self.h.to_string());
        put("estimate_noise", self.estimate_noise.to_string());
        put("output", self.output.display().to_string());
        s
    }
}

fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Load a config file; relative data and topology paths are taken relative
/// to the file's directory.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let kv = KeyValues::parse(&read_text(path)?)?;
    ExperimentConfig::from_key_values(&kv, path.parent())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Cartesian product of all value lists.
    Grid,
    /// i-th values of every list together; lists must have equal length.
    Paired,
}

/// A base config plus per-key value lists.
///
/// ```text
/// base = example1.cfg
/// mode = paired
/// sweep.mu_o = 0.001,0.0005
/// sweep.horizon = 20000,40000
/// output = runs/mu_sweep
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: KeyValues,
    pub base_dir: Option<PathBuf>,
    pub mode: SweepMode,
    pub axes: Vec<(String, Vec<String>)>,
    pub output: PathBuf,
}

impl SweepSpec {
    pub fn parse(text: &str, dir: Option<&Path>) -> Result<Self, ConfigError> {
        let kv = KeyValues::parse(text)?;
        let base_path = resolve(dir, kv.get("base").ok_or_else(|| invalid("base", "missing required key"))?);
        let base = KeyValues::parse(&read_text(&base_path)?)?;
        let mode = match kv.get("mode").unwrap_or("grid") {
            "grid" => SweepMode::Grid,
            "paired" => SweepMode::Paired,
            other => return Err(invalid("mode", format!("expected grid or paired, found '{other}'"))),
        };
        let mut axes = Vec::new();
        for key in kv.keys() {
            if let Some(param) = key.strip_prefix("sweep.") {
                let vals: Vec<String> = kv.get(key).unwrap_or("").split(',').map(|v| v.trim().to_string()).collect();
                if vals.iter().any(String::is_empty) {
                    return Err(invalid(key, "empty value in list"));
                }
                axes.push((param.to_string(), vals));
            } else if !matches!(key, "base" | "mode" | "output") {
                return Err(invalid(key, "unknown key"));
            }
        }
        if axes.is_empty() {
            return Err(invalid("sweep", "no sweep.<key> entries"));
        }
        if mode == SweepMode::Paired && axes.iter().any(|(_, v)| v.len() != axes[0].1.len()) {
            return Err(invalid("mode", "paired sweep lists must have equal length"));
        }
        let spec = SweepSpec {
            base,
            base_dir: base_path.parent().map(Path::to_path_buf),
            mode,
            axes,
            output: PathBuf::from(kv.get("output").unwrap_or("runs/sweep")),
        };
        spec.points()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        Self::parse(&read_text(path)?, path.parent())
    }

    /// Assignments for each sweep point.
    pub fn assignments(&self) -> Vec<Vec<(String, String)>> {
        match self.mode {
            SweepMode::Paired => (0..self.axes[0].1.len())
                .map(|i| self.axes.iter().map(|(k, v)| (k.clone(), v[i].clone())).collect())
                .collect(),
            SweepMode::Grid => {
                let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
                for (k, vals) in &self.axes {
                    out = out
                        .into_iter()
                        .flat_map(|prefix| {
                            vals.iter().map(move |v| {
                                let mut p = prefix.clone();
                                p.push((k.clone(), v.clone()));
                                p
                            })
                        })
                        .collect();
                }
                out
            }
        }
    }

    /// One resolved config per point, each writing to `output/point_<i>`.
    pub fn points(&self) -> Result<Vec<ExperimentConfig>, ConfigError> {
        self.assignments()
            .iter()
            .enumerate()
            .map(|(i, assign)| {
                let mut kv = self.base.clone();
                for (k, v) in assign {
                    kv.set(k, v);
                }
                let mut cfg = ExperimentConfig::from_key_values(&kv, self.base_dir.as_deref())?;
                cfg.output = self.output.join(format!("point_{i}"));
                Ok(cfg)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = "
        # network
        topology = geometric
        topology.agents = 20
        model = lasso
        lasso.dim = 100
        lasso.delta = 0.005
        mu_o = 0.001
        theta = 0.9985
    ";

    #[test]
    fn example_values_and_defaults() {
        let c = ExperimentConfig::parse(EXAMPLE1).unwrap();
        assert_eq!(c.n_agents_hint(), Some(20));
        assert_eq!(c.mu_o, 0.001);
        assert_eq!(c.theta, ThetaSpec::Explicit(0.9985));
        match &c.model {
            ModelSpec::Lasso(l) => {
                assert_eq!(l.dim, 100);
                assert_eq!(l.delta, 0.005);
                assert_eq!(l.sparsity, 5);
                assert_eq!(l.support, (0.5, 1.5));
            }
            _ => panic!("expected lasso"),
        }
        assert_eq!(c.weights, WeightsSpec::Perron);
        assert_eq!(c.strategy, StrategyKind::DiffusionSubgradient);
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::parse(EXAMPLE1).unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        let svm = ExperimentConfig::parse(
            "model = svm\nsvm.data = synthetic\nsvm.rho = 0.002\nmu_o = 0.15\ntheta = scaled_rho:0.9\nweights = explicit:0.5,0.5\ntopology = ring\ntopology.agents = 2",
        )
        .unwrap();
        assert_eq!(svm.theta, ThetaSpec::Rule(ThetaRule::ScaledRho(0.9)));
        assert_eq!(ExperimentConfig::parse(&svm.to_text()).unwrap(), svm);
    }

    #[test]
    fn field_level_errors() {
        let err = ExperimentConfig::parse("model = lasso").unwrap_err();
        assert_eq!(err, invalid("mu_o", "missing required key"));
        let err = ExperimentConfig::parse("model = lasso\nmu_o = 0.1\ntheta = 1.5").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "theta"));
        let err = ExperimentConfig::parse("model = lasso\nmu_o = 0.1\nsvm.rho = 1").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "svm.rho"));
        let err = ExperimentConfig::parse("model = lasso\nmu_o = -1").unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref field, .. } if field == "mu_o"));
        assert!(matches!(
            ExperimentConfig::parse("model = lasso\nmu_o = 1\nmu_o = 2"),
            Err(ConfigError::Syntax { line: 3, .. })
        ));
    }

    #[test]
    fn variance_specs() {
        assert_eq!(VarianceSpec::parse("f", "0.3").unwrap(), VarianceSpec::Constant(0.3));
        assert_eq!(VarianceSpec::parse("f", "uniform:0.1,0.2").unwrap(), VarianceSpec::Uniform(0.1, 0.2));
        assert_eq!(VarianceSpec::parse("f", "list:1,2,3").unwrap(), VarianceSpec::List(vec![1.0, 2.0, 3.0]));
        assert!(VarianceSpec::parse("f", "uniform:0.3,0.1").is_err());
        assert!(VarianceSpec::parse("f", "gamma:1").is_err());
    }

    #[test]
    fn sweep_modes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("base.cfg"), EXAMPLE1).unwrap();
        let spec = SweepSpec::parse(
            "base = base.cfg\nmode = paired\nsweep.mu_o = 0.001,0.0005\nsweep.horizon = 100,200",
            Some(dir.path()),
        )
        .unwrap();
        let pts = spec.points().unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!((pts[1].mu_o, pts[1].horizon), (0.0005, 200));
        assert_eq!(pts[1].output, PathBuf::from("runs/sweep/point_1"));

        let grid = SweepSpec::parse("base = base.cfg\nsweep.mu_o = 0.1,0.2\nsweep.seed = 1,2,3", Some(dir.path())).unwrap();
        assert_eq!(grid.points().unwrap().len(), 6);

        let bad = SweepSpec::parse("base = base.cfg\nsweep.mu_o = 0.1,-1", Some(dir.path()));
        assert!(matches!(bad, Err(ConfigError::Invalid { ref field, .. }) if field == "mu_o"));
    }
}
