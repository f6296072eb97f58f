//! Binary classification datasets: LIBSVM text I/O, synthetic clusters and
//! label-skewed node partitions.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::std_normal;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::Vector;

/// Dense binary-labelled samples. Labels are `-1.0` or `+1.0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vector>,
    pub labels: Vec<f64>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        features: Vec<Vector>,
        labels: Vec<f64>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::InvalidDimensions(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(f0) = features.first() {
            if let Some(bad) = features.iter().position(|f| f.len() != f0.len()) {
                return Err(Error::InvalidDimensions(format!(
                    "row {bad} has a different dimension"
                )));
            }
        }
        if let Some(bad) = labels.iter().position(|&l| l != 1.0 && l != -1.0) {
            return Err(Error::InvalidParams(format!(
                "label {} at row {bad} is not +-1",
                labels[bad]
            )));
        }
        Ok(Dataset {
            features,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vector::len)
    }

    pub fn positive_fraction(&self, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().filter(|&&j| self.labels[j] > 0.0).count() as f64 / idx.len() as f64
    }
}

fn map_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let set: BTreeSet<i64> = raw.iter().map(|&l| l as i64).collect();
    let non_integer = raw.iter().any(|l| l.fract() != 0.0);
    let unsupported = || Error::UnsupportedLabelSet(set.iter().map(|l| l.to_string()).collect());
    if non_integer {
        return Err(unsupported());
    }
    let within = |allowed: &[i64]| set.iter().all(|l| allowed.contains(l));
    let map: Box<dyn Fn(f64) -> f64> = if within(&[-1, 1]) {
        Box::new(|l| l)
    } else if within(&[0, 1]) {
        Box::new(|l| if l == 0.0 { -1.0 } else { 1.0 })
    } else if within(&[1, 2]) {
        Box::new(|l| if l == 1.0 { -1.0 } else { 1.0 })
    } else {
        return Err(unsupported());
    };
    Ok(raw.iter().map(|&l| map(l)).collect())
}

/// Parses LIBSVM text (`label idx:val ...`, 1-based indices). Labels in
/// `{-1,+1}`, `{0,1}` or `{1,2}` are mapped to `{-1,+1}`.
pub fn parse_libsvm(text: &str, provenance: &str) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut dim = 0;
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: ln + 1, msg };
        let mut toks = line.split_whitespace();
        let label: f64 = toks
            .next()
            .unwrap()
            .parse()
            .map_err(|_| err(format!("bad label in '{line}'")))?;
        let mut row = Vec::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got '{tok}'")))?;
            let i: usize = i.parse().map_err(|_| err(format!("bad index '{i}'")))?;
            if i == 0 {
                return Err(err("feature indices start at 1".into()));
            }
            let v: f64 = v.parse().map_err(|_| err(format!("bad value '{v}'")))?;
            dim = dim.max(i);
            row.push((i - 1, v));
        }
        raw_labels.push(label);
        rows.push(row);
    }
    let labels = map_labels(&raw_labels)?;
    let features = rows
        .into_iter()
        .map(|row| {
            let mut v = Vector::zeros(dim);
            for (i, x) in row {
                v[i] = x;
            }
            v
        })
        .collect();
    Dataset::new(features, labels, provenance)
}

pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_libsvm(&text, &path.display().to_string())
}

/// LIBSVM text for a dataset. Zeros are omitted except that the last
/// coordinate of the first row is always written, so the dimension
/// survives a round trip.
pub fn to_libsvm_string(ds: &Dataset) -> String {
    let dim = ds.dim();
    let mut out = String::new();
    for (r, (f, &l)) in ds.features.iter().zip(&ds.labels).enumerate() {
        out.push_str(if l > 0.0 { "1" } else { "-1" });
        for (i, &v) in f.iter().enumerate() {
            if v != 0.0 || (r == 0 && i + 1 == dim) {
                out.push_str(&format!(" {}:{}", i + 1, v));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_libsvm(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_libsvm_string(ds)).map_err(|e| Error::io(path, e))
}

/// Two unit-variance Gaussian clusters centred at `+-separation * u` for a
/// random unit vector `u`, with balanced labels in shuffled order.
pub fn make_synthetic_dataset(
    p: usize,
    n_samples: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if p == 0 || n_samples < 2 {
        return Err(Error::InvalidParams(format!(
            "need p >= 1 and at least 2 samples, got p={p}, n={n_samples}"
        )));
    }
    let mut r = rng::aux_stream(seed, 0x73796e);
    let mut u = Vector::from_fn(p, |_, _| std_normal(&mut r));
    while u.norm() == 0.0 {
        u = Vector::from_fn(p, |_, _| std_normal(&mut r));
    }
    u.normalize_mut();
    let mut labels: Vec<f64> = (0..n_samples)
        .map(|k| if k < n_samples / 2 { 1.0 } else { -1.0 })
        .collect();
    labels.shuffle(&mut r);
    let features = labels
        .iter()
        .map(|&l| {
            let noise = Vector::from_fn(p, |_, _| std_normal(&mut r));
            &u * (l * separation) + noise
        })
        .collect();
    Dataset::new(
        features,
        labels,
        format!("synthetic(p={p},n={n_samples},separation={separation},seed={seed})"),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionMode {
    Iid,
    /// Half of the nodes get positive fraction 0.8, the rest 0.35.
    Weak,
    /// As `Weak`, with each node's fraction shifted by `a ~ U[-0.15, 0.15]`.
    Strong,
}

impl FromStr for PartitionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "iid" => Ok(PartitionMode::Iid),
            "weak" => Ok(PartitionMode::Weak),
            "strong" => Ok(PartitionMode::Strong),
            other => Err(format!("unknown partition mode '{other}'")),
        }
    }
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionMode::Iid => "iid",
            PartitionMode::Weak => "weak",
            PartitionMode::Strong => "strong",
        })
    }
}

/// Per-node train and validation index lists.
#[derive(Clone, Debug, PartialEq)]
pub struct NodePartition {
    pub train: Vec<Vec<usize>>,
    pub val: Vec<Vec<usize>>,
    /// Positive-label fraction of each node's samples (train and val).
    pub positive_fraction: Vec<f64>,
}

impl NodePartition {
    pub fn num_nodes(&self) -> usize {
        self.train.len()
    }
}

pub const HIGH_POSITIVE_FRACTION: f64 = 0.8;
pub const LOW_POSITIVE_FRACTION: f64 = 0.35;
pub const FRACTION_JITTER: f64 = 0.15;

/// Splits a dataset over `m` nodes with equal sample counts. Skewed modes
/// give nodes `0..m/2` a high positive fraction and the rest a low one, and
/// leave samples unused when the label supply cannot meet the fractions at
/// `len / m` samples per node.
pub fn partition_heterogeneous(
    ds: &Dataset,
    m: usize,
    mode: PartitionMode,
    val_fraction: f64,
    seed: u64,
) -> Result<NodePartition> {
    if m < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 nodes, got {m}"
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidParams(format!(
            "val_fraction {val_fraction} outside [0,1)"
        )));
    }
    let per_node = ds.len() / m;
    if per_node < 2 {
        return Err(Error::InsufficientSamples(format!(
            "{} samples for {m} nodes",
            ds.len()
        )));
    }
    let mut r = rng::aux_stream(seed, 0x70617274);
    let mut pos: Vec<usize> = (0..ds.len()).filter(|&j| ds.labels[j] > 0.0).collect();
    let mut neg: Vec<usize> = (0..ds.len()).filter(|&j| ds.labels[j] < 0.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InsufficientSamples(
            "dataset needs both labels".into(),
        ));
    }
    pos.shuffle(&mut r);
    neg.shuffle(&mut r);

    let mut nodes: Vec<Vec<usize>> = Vec::with_capacity(m);
    match mode {
        PartitionMode::Iid => {
            let mut all: Vec<usize> = (0..ds.len()).collect();
            all.shuffle(&mut r);
            for i in 0..m {
                nodes.push(all[i * per_node..(i + 1) * per_node].to_vec());
            }
        }
        PartitionMode::Weak | PartitionMode::Strong => {
            let fractions: Vec<f64> = (0..m)
                .map(|i| {
                    let base = if i < m / 2 {
                        HIGH_POSITIVE_FRACTION
                    } else {
                        LOW_POSITIVE_FRACTION
                    };
                    let a = if mode == PartitionMode::Strong {
                        r.random_range(-FRACTION_JITTER..=FRACTION_JITTER)
                    } else {
                        0.0
                    };
                    base + a
                })
                .collect();
            // Skewed fractions need not average to the dataset's label
            // balance; shrink the common node size until both labels suffice.
            let counts = |n: usize| -> (usize, usize) {
                fractions.iter().fold((0, 0), |(p, q), f| {
                    let k = (f * n as f64).round() as usize;
                    (p + k, q + n - k)
                })
            };
            let mut per_node = per_node;
            while per_node >= 2 {
                let (need_pos, need_neg) = counts(per_node);
                if need_pos <= pos.len() && need_neg <= neg.len() {
                    break;
                }
                per_node -= 1;
            }
            for (i, f) in fractions.iter().enumerate() {
                let n_pos = (f * per_node as f64).round() as usize;
                let n_neg = per_node - n_pos;
                if per_node < 2 || n_pos > pos.len() || n_neg > neg.len() {
                    return Err(Error::InsufficientSamples(format!(
                        "node {i} needs {n_pos} positive and {n_neg} negative samples"
                    )));
                }
                let mut idx: Vec<usize> = pos.split_off(pos.len() - n_pos);
                idx.extend(neg.split_off(neg.len() - n_neg));
                idx.shuffle(&mut r);
                nodes.push(idx);
            }
        }
    }

    let mut train = Vec::with_capacity(m);
    let mut val = Vec::with_capacity(m);
    let mut positive_fraction = Vec::with_capacity(m);
    for idx in nodes {
        positive_fraction.push(ds.positive_fraction(&idx));
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        let (v, t) = idx.split_at(n_val);
        val.push(v.to_vec());
        train.push(t.to_vec());
    }
    Ok(NodePartition {
        train,
        val,
        positive_fraction,
    })
}

/// Uniform sampling with replacement.
pub fn sample_minibatch(rng: &mut Stream, indices: &[usize], batch_size: usize) -> Vec<usize> {
    (0..batch_size)
        .map(|_| indices[rng.random_range(0..indices.len())])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_lines() {
        let ds = parse_libsvm("1 1:0.5 3:2.0\n-1 2:1\n", "t").unwrap();
        assert_eq!(ds.labels, vec![1.0, -1.0]);
        assert_eq!(ds.features[0].as_slice(), &[0.5, 0.0, 2.0]);
        assert_eq!(ds.features[1].as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn label_encodings() {
        let ds = parse_libsvm("0 2:1\n1 1:1\n", "t").unwrap();
        assert_eq!(ds.labels, vec![-1.0, 1.0]);
        assert_eq!(ds.features[0].as_slice(), &[0.0, 1.0]);
        let ds = parse_libsvm("1 1:1\n2 1:1\n", "t").unwrap();
        assert_eq!(ds.labels, vec![-1.0, 1.0]);
        assert!(matches!(
            parse_libsvm("3 1:1\n1 1:1\n", "t"),
            Err(Error::UnsupportedLabelSet(_))
        ));
    }

    #[test]
    fn parse_errors_carry_line() {
        match parse_libsvm("1 1:1\n1 x:1\n", "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_libsvm("1 0:1\n", "t").is_err());
    }

    #[test]
    fn round_trip() {
        let text = "1 1:0.5 3:2\n-1 2:1\n1 1:-3.25\n";
        let ds = parse_libsvm(text, "t").unwrap();
        let again = parse_libsvm(&to_libsvm_string(&ds), "t").unwrap();
        assert_eq!(ds.features, again.features);
        assert_eq!(ds.labels, again.labels);
        let zero_tail =
            Dataset::new(vec![Vector::from_vec(vec![1.0, 0.0])], vec![1.0], "t").unwrap();
        let back = parse_libsvm(&to_libsvm_string(&zero_tail), "t").unwrap();
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let a = make_synthetic_dataset(3, 100, 2.0, 5).unwrap();
        let b = make_synthetic_dataset(3, 100, 2.0, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.iter().filter(|&&l| l > 0.0).count(), 50);
        assert!(make_synthetic_dataset(0, 10, 1.0, 0).is_err());
    }

    #[test]
    fn split_arithmetic() {
        let ds = make_synthetic_dataset(2, 40, 1.0, 0).unwrap();
        let part = partition_heterogeneous(&ds, 4, PartitionMode::Iid, 0.5, 0).unwrap();
        for i in 0..4 {
            assert_eq!(part.train[i].len(), 5);
            assert_eq!(part.val[i].len(), 5);
            assert!(part.train[i].iter().all(|j| !part.val[i].contains(j)));
        }
    }

    #[test]
    fn minibatch_deterministic() {
        let idx: Vec<usize> = (10..20).collect();
        let a = sample_minibatch(&mut rng::stream(1, 2, 3, 4), &idx, 7);
        let b = sample_minibatch(&mut rng::stream(1, 2, 3, 4), &idx, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|j| idx.contains(j)));
        assert_eq!(
            sample_minibatch(&mut rng::stream(0, 0, 0, 0), &idx, 1).len(),
            1
        );
    }
}
