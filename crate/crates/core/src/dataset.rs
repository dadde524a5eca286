//! Sparse labelled datasets: libsvm text ingestion, sharding across agents,
//! train/test splitting and a seeded synthetic generator.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::{StreamId, StreamKind};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: label {label:?} is not a binary class label")]
    LabelDomain { line: usize, label: String },
    #[error("dataset is empty")]
    Empty,
}

/// Sparse vector with strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut v = SparseVector::default();
        for (i, &x) in dense.iter().enumerate() {
            if x != 0.0 {
                v.indices.push(i);
                v.values.push(x);
            }
        }
        v
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| w[i] * v)
            .sum()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    /// +1 or -1.
    pub label: f64,
    pub features: SparseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<LabeledPoint>,
    pub dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fraction of points whose label agrees with `sign(hᵀw)` (zero counts as +1).
    pub fn accuracy(&self, w: &[f64]) -> f64 {
        if self.points.is_empty() {
            return f64::NAN;
        }
        let hits = self
            .points
            .iter()
            .filter(|pt| {
                let s = if pt.features.dot(w) >= 0.0 { 1.0 } else { -1.0 };
                s == pt.label
            })
            .count();
        hits as f64 / self.points.len() as f64
    }

    pub fn to_libsvm(&self) -> String {
        let mut s = String::new();
        for pt in &self.points {
            let _ = write!(s, "{}", if pt.label > 0.0 { "+1" } else { "-1" });
            for (i, v) in pt.features.indices.iter().zip(&pt.features.values) {
                let _ = write!(s, " {}:{v:?}", i + 1);
            }
            s.push('\n');
        }
        s
    }
}

fn parse_label(tok: &str, line: usize) -> Result<f64, DatasetError> {
    let v: f64 = tok.parse().map_err(|_| DatasetError::LabelDomain {
        line,
        label: tok.to_string(),
    })?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1.0)
    } else {
        Err(DatasetError::LabelDomain {
            line,
            label: tok.to_string(),
        })
    }
}

/// Parse libsvm text: `label idx:val idx:val ...` with 1-based indices.
/// Labels `+1`/`1` map to +1 and `-1`/`0` to -1. Blank lines and `#` comments
/// are skipped. `dim_hint` raises the dimension above the largest index seen.
pub fn parse_libsvm(text: &str, dim_hint: Option<usize>) -> Result<Dataset, DatasetError> {
    let mut points = Vec::new();
    let mut dim = dim_hint.unwrap_or(0);
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let label = parse_label(toks.next().unwrap_or_default(), line_no)?;
        let mut pairs: Vec<(usize, f64)> = Vec::new();
        for tok in toks {
            let (i, v) = tok.split_once(':').ok_or_else(|| DatasetError::Parse {
                line: line_no,
                msg: format!("expected index:value, got {tok:?}"),
            })?;
            let idx: usize = i.parse().map_err(|_| DatasetError::Parse {
                line: line_no,
                msg: format!("bad index {i:?}"),
            })?;
            if idx == 0 {
                return Err(DatasetError::Parse {
                    line: line_no,
                    msg: "feature indices are 1-based".into(),
                });
            }
            let val: f64 = v.parse().map_err(|_| DatasetError::Parse {
                line: line_no,
                msg: format!("bad value {v:?}"),
            })?;
            if !val.is_finite() {
                return Err(DatasetError::Parse {
                    line: line_no,
                    msg: format!("non-finite value {v:?}"),
                });
            }
            pairs.push((idx - 1, val));
        }
        pairs.sort_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(DatasetError::Parse {
                line: line_no,
                msg: "duplicate feature index".into(),
            });
        }
        if let Some(&(last, _)) = pairs.last() {
            dim = dim.max(last + 1);
        }
        let (indices, values) = pairs.into_iter().filter(|p| p.1 != 0.0).unzip();
        points.push(LabeledPoint {
            label,
            features: SparseVector { indices, values },
        });
    }
    Ok(Dataset { points, dim })
}

pub fn load_libsvm(path: impl AsRef<Path>, dim_hint: Option<usize>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let ds = parse_libsvm(&text, dim_hint)?;
    log::info!(
        "loaded {} samples from {} (max feature index {})",
        ds.len(),
        path.display(),
        ds.dim
    );
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardPolicy {
    /// Sample `i` goes to agent `i mod N`.
    RoundRobin,
    /// Seeded shuffle, then round robin.
    RandomEqual,
}

impl ShardPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ShardPolicy::RoundRobin => "round_robin",
            ShardPolicy::RandomEqual => "random_equal",
        }
    }
}

/// Split a dataset across `n` agents; shard sizes differ by at most one.
pub fn shard(dataset: &Dataset, n: usize, policy: ShardPolicy, seed: u64) -> Vec<Vec<LabeledPoint>> {
    assert!(n >= 1, "need at least one agent");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if policy == ShardPolicy::RandomEqual {
        let mut rng = StreamId::new(seed, StreamKind::Data, 1, n as u64).rng();
        order.shuffle(&mut rng);
    }
    let mut shards = vec![Vec::with_capacity(dataset.len() / n + 1); n];
    for (pos, &idx) in order.iter().enumerate() {
        shards[pos % n].push(dataset.points[idx].clone());
    }
    shards
}

/// Seeded split into (train, test) with `test_fraction` of the points held out.
pub fn train_test_split(dataset: &Dataset, test_fraction: f64, seed: u64) -> (Dataset, Dataset) {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = StreamId::new(seed, StreamKind::Data, 2, 0).rng();
    order.shuffle(&mut rng);
    let n_test = ((dataset.len() as f64) * test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test.min(dataset.len()));
    let pick = |ids: &[usize]| Dataset {
        points: ids.iter().map(|&i| dataset.points[i].clone()).collect(),
        dim: dataset.dim,
    };
    (pick(train_idx), pick(test_idx))
}

/// Linearly separable-with-noise Gaussian classification data.
///
/// Features are standard normal; the label is the sign of `w_trueᵀh` flipped
/// with probability `flip`. `w_true` is drawn from the same seed.
pub fn synthetic_svm(samples: usize, dim: usize, flip: f64, seed: u64) -> Dataset {
    let mut rng = StreamId::new(seed, StreamKind::Data, 3, 0).rng();
    let w_true: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let points = (0..samples)
        .map(|_| {
            let h: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let margin: f64 = h.iter().zip(&w_true).map(|(a, b)| a * b).sum();
            let mut label = if margin >= 0.0 { 1.0 } else { -1.0 };
            if rng.random::<f64>() < flip {
                label = -label;
            }
            LabeledPoint {
                label,
                features: SparseVector::from_dense(&h),
            }
        })
        .collect();
    Dataset { points, dim }
}
