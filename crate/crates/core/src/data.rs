//! LIBSVM ingestion, semi-supervised splits, min-max scaling and the unlabeled
//! k-fold partitioner.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::Label;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unsupported label alphabet {0:?} (expected {{-1,+1}}, {{0,1}} or {{1,2}})")]
    LabelAlphabet(Vec<f64>),
    #[error("split failed: {0}")]
    Split(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("feature index {index} exceeds dimension {d}")]
    Dimension { index: usize, d: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse vector with strictly increasing 1-based indices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn max_index(&self) -> usize {
        self.indices.last().copied().unwrap_or(0)
    }

    pub fn to_dense(&self, d: usize) -> Result<Vec<f64>, DataError> {
        let mut out = vec![0.0; d];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            if i > d {
                return Err(DataError::Dimension { index: i, d });
            }
            out[i - 1] = v;
        }
        Ok(out)
    }

    pub fn from_dense(x: &[f64]) -> Self {
        let mut sv = SparseVec::default();
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                sv.indices.push(i + 1);
                sv.values.push(v);
            }
        }
        sv
    }
}

/// Output of [`parse_libsvm`]: sparse rows, their raw labels, and `d` (max index seen).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawData {
    pub vectors: Vec<SparseVec>,
    pub labels: Vec<f64>,
    pub d: usize,
}

impl RawData {
    pub fn dense(&self, d: usize) -> Result<Vec<Vec<f64>>, DataError> {
        self.vectors.iter().map(|v| v.to_dense(d)).collect()
    }
}

/// Parses `<label> <idx>:<val> ...` lines. Blank lines and `#` comments are skipped.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<RawData, DataError> {
    let mut data = RawData::default();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |reason: String| DataError::Parse {
            line: line_no,
            reason,
        };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("non-numeric label '{label_tok}'")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label '{label_tok}'")));
        }
        let mut vec = SparseVec::default();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("token '{tok}' is not <index>:<value>")))?;
            let idx: i64 = idx
                .parse()
                .map_err(|_| err(format!("non-numeric index in '{tok}'")))?;
            if idx < 1 {
                return Err(err(format!("index {idx} < 1")));
            }
            let idx = idx as usize;
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("non-numeric value in '{tok}'")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value in '{tok}'")));
            }
            if let Some(&prev) = vec.indices.last() {
                if idx <= prev {
                    return Err(err(format!("index {idx} does not increase after {prev}")));
                }
            }
            vec.indices.push(idx);
            vec.values.push(val);
        }
        data.d = data.d.max(vec.max_index());
        data.vectors.push(vec);
        data.labels.push(label);
    }
    Ok(data)
}

pub fn format_libsvm(vectors: &[SparseVec], labels: &[f64]) -> String {
    let mut out = String::new();
    for (v, y) in vectors.iter().zip(labels) {
        write!(out, "{y}").unwrap();
        for (i, x) in v.indices.iter().zip(&v.values) {
            write!(out, " {i}:{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Maps raw labels onto `{−1, +1}`. `{−1, +1}` is kept as is; `{0, 1}` and `{1, 2}`
/// map their smaller value to `−1`.
pub fn map_labels(raw: &[f64]) -> Result<Vec<Label>, DataError> {
    let mut alphabet: Vec<f64> = Vec::new();
    for &y in raw {
        if !alphabet.contains(&y) {
            alphabet.push(y);
        }
    }
    alphabet.sort_by(|a, b| a.partial_cmp(b).expect("labels are finite"));
    let within = |set: &[f64]| alphabet.iter().all(|y| set.contains(y));
    let neg = if within(&[-1.0, 1.0]) {
        -1.0
    } else if within(&[0.0, 1.0]) {
        0.0
    } else if within(&[1.0, 2.0]) {
        1.0
    } else {
        return Err(DataError::LabelAlphabet(alphabet));
    };
    Ok(raw
        .iter()
        .map(|&y| if y == neg { Label::Neg } else { Label::Pos })
        .collect())
}

/// Training data as seen by the trainer: labeled pairs plus an unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDataset {
    d: usize,
    labeled: Vec<(Vec<f64>, Label)>,
    unlabeled: Vec<Vec<f64>>,
}

impl SemiDataset {
    pub fn new(
        d: usize,
        labeled: Vec<(Vec<f64>, Label)>,
        unlabeled: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if d == 0 {
            return Err(DataError::Input("dimension must be >= 1".into()));
        }
        let bad = labeled
            .iter()
            .map(|(x, _)| x)
            .chain(&unlabeled)
            .find(|x| x.len() != d);
        if let Some(x) = bad {
            return Err(DataError::Input(format!(
                "point of dimension {} in a dataset of dimension {d}",
                x.len()
            )));
        }
        Ok(SemiDataset {
            d,
            labeled,
            unlabeled,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn labeled(&self) -> &[(Vec<f64>, Label)] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[Vec<f64>] {
        &self.unlabeled
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn n(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }
}

/// A [`SemiDataset`] plus the ground truth of its unlabeled pool, kept out of the
/// trainer's reach.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiSplit {
    pub dataset: SemiDataset,
    pub hidden_labels: Vec<Label>,
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
    pub seed: u64,
}

impl SemiSplit {
    pub fn manifest(&self, scaler: Option<&MinMaxScaler>) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            n_labeled: self.labeled_indices.len(),
            n_unlabeled: self.unlabeled_indices.len(),
            d: self.dataset.d(),
            labeled_indices: self.labeled_indices.clone(),
            unlabeled_indices: self.unlabeled_indices.clone(),
            scaler: scaler.cloned(),
        }
    }
}

/// JSON record of a split for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub d: usize,
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
    pub scaler: Option<MinMaxScaler>,
}

const SPLIT_RETRIES: usize = 100;

/// Samples `n_labeled` points without replacement as the labeled set; the remainder
/// becomes the unlabeled pool. Resamples (bounded) until both classes are labeled.
pub fn make_semi_split(
    points: &[Vec<f64>],
    labels: &[Label],
    n_labeled: usize,
    seed: u64,
) -> Result<SemiSplit, DataError> {
    let n = points.len();
    if labels.len() != n {
        return Err(DataError::Input(format!("{n} points but {} labels", labels.len())));
    }
    if n_labeled > n {
        return Err(DataError::Split(format!("n_labeled={n_labeled} exceeds n={n}")));
    }
    if n_labeled < 2 {
        return Err(DataError::Split("need at least 2 labeled points".into()));
    }
    let d = points.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..SPLIT_RETRIES {
        order.shuffle(&mut rng);
        let chosen = &order[..n_labeled];
        let has_pos = chosen.iter().any(|&i| labels[i] == Label::Pos);
        let has_neg = chosen.iter().any(|&i| labels[i] == Label::Neg);
        if !(has_pos && has_neg) {
            continue;
        }
        let mut labeled_indices = chosen.to_vec();
        labeled_indices.sort_unstable();
        let in_labeled: BTreeSet<usize> = labeled_indices.iter().copied().collect();
        let unlabeled_indices: Vec<usize> = (0..n).filter(|i| !in_labeled.contains(i)).collect();
        let dataset = SemiDataset::new(
            d,
            labeled_indices
                .iter()
                .map(|&i| (points[i].clone(), labels[i]))
                .collect(),
            unlabeled_indices.iter().map(|&i| points[i].clone()).collect(),
        )?;
        return Ok(SemiSplit {
            dataset,
            hidden_labels: unlabeled_indices.iter().map(|&i| labels[i]).collect(),
            labeled_indices,
            unlabeled_indices,
            seed,
        });
    }
    Err(DataError::Split(format!(
        "no two-class labeled sample after {SPLIT_RETRIES} attempts"
    )))
}

/// One cross-validation fold: train on all labeled data plus one unlabeled subset,
/// test on the remaining subsets.
#[derive(Debug, Clone)]
pub struct Fold {
    pub train: SemiDataset,
    pub test_points: Vec<Vec<f64>>,
    pub test_labels: Vec<Label>,
    /// Positions (into the split's unlabeled pool) used for training.
    pub train_unlabeled: Vec<usize>,
    /// Positions used for testing.
    pub test_unlabeled: Vec<usize>,
}

/// Partitions the unlabeled pool into `k` near-equal subsets (sizes differ by ≤ 1).
pub fn kfold_unlabeled(split: &SemiSplit, k: usize, seed: u64) -> Result<Vec<Fold>, DataError> {
    let pool = split.dataset.unlabeled();
    let n_u = pool.len();
    if k < 2 {
        return Err(DataError::Input(format!("k={k} must be >= 2")));
    }
    if n_u < k {
        return Err(DataError::Input(format!("{n_u} unlabeled points cannot form {k} folds")));
    }
    let mut order: Vec<usize> = (0..n_u).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let subsets: Vec<Vec<usize>> = (0..k)
        .map(|j| {
            let mut s = order[j * n_u / k..(j + 1) * n_u / k].to_vec();
            s.sort_unstable();
            s
        })
        .collect();

    subsets
        .iter()
        .enumerate()
        .map(|(j, train_idx)| {
            let test_idx: Vec<usize> = subsets
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != j)
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            let train = SemiDataset::new(
                split.dataset.d(),
                split.dataset.labeled().to_vec(),
                train_idx.iter().map(|&i| pool[i].clone()).collect(),
            )?;
            Ok(Fold {
                train,
                test_points: test_idx.iter().map(|&i| pool[i].clone()).collect(),
                test_labels: test_idx.iter().map(|&i| split.hidden_labels[i]).collect(),
                train_unlabeled: train_idx.clone(),
                test_unlabeled: test_idx,
            })
        })
        .collect()
}

/// Per-dimension min-max scaling to `[0, 1]`. Values outside the fitted range are
/// extrapolated linearly; constant dimensions map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self, DataError> {
        let d = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| DataError::Input("cannot fit a scaler on no points".into()))?;
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for x in points {
            if x.len() != d {
                return Err(DataError::Input("ragged points".into()));
            }
            for j in 0..d {
                min[j] = min[j].min(x[j]);
                max[j] = max[j].max(x[j]);
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn d(&self) -> usize {
        self.min.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| match (self.min.get(j), self.max.get(j)) {
                (Some(&lo), Some(&hi)) if hi > lo => (v - lo) / (hi - lo),
                (Some(_), Some(_)) => 0.0,
                _ => v,
            })
            .collect()
    }

    pub fn apply_all(&self, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points.iter().map(|x| self.apply(x)).collect()
    }
}
