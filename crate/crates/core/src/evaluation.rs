//! Clustering accuracy under the best cluster-to-class mapping.

use std::io::Write;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Minimum-cost perfect assignment of rows to columns of a square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `mapping[row] = column`.
    pub mapping: Vec<usize>,
    pub cost: f64,
}

/// Shortest-augmenting-path Hungarian algorithm with row/column potentials,
/// O(n³).
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Assignment> {
    let n = cost.nrows();
    if cost.ncols() != n {
        return Err(Error::Shape(format!("cost matrix must be square, got {:?}", cost.dim())));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("cost matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Assignment { mapping: vec![], cost: 0.0 });
    }
    // 1-based; column 0 is the virtual source of each augmentation
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut mapping = vec![0; n];
    for j in 1..=n {
        mapping[owner[j] - 1] = j - 1;
    }
    let total = mapping.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok(Assignment { mapping, cost: total })
}

/// Counts of (predicted cluster, true class) pairs, zero-padded to square.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyMatrix {
    pub counts: Array2<u64>,
}

impl ContingencyMatrix {
    pub fn new(pred: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        if let Some(&c) = pred.iter().find(|&&c| c >= k) {
            return Err(Error::Invalid(format!("predicted cluster {c} >= K = {k}")));
        }
        let k_true = truth.iter().max().map_or(0, |m| m + 1);
        let n = k.max(k_true);
        let mut counts = Array2::<u64>::zeros((n, n));
        for (&c, &y) in pred.iter().zip(truth) {
            counts[[c, y]] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }
}

/// Fraction of samples matched under the optimal mapping `cluster -> class`.
#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub acc: f64,
    pub mapping: Vec<usize>,
}

pub fn clustering_accuracy(pred: &[usize], truth: &[usize], k: usize) -> Result<Accuracy> {
    let table = ContingencyMatrix::new(pred, truth, k)?;
    if pred.is_empty() {
        return Err(Error::Invalid("accuracy of an empty prediction set".into()));
    }
    let neg = table.counts.mapv(|c| -(c as f64));
    let best = hungarian(neg.view())?;
    let hits: u64 = best
        .mapping
        .iter()
        .enumerate()
        .map(|(c, &y)| table.counts[[c, y]])
        .sum();
    Ok(Accuracy {
        acc: hits as f64 / pred.len() as f64,
        mapping: best.mapping,
    })
}

/// Counts of (mapped prediction, true class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
    /// Cluster index mapped to each class (inverse of the mapping).
    pub cluster_of_class: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn trace(&self) -> u64 {
        self.counts.diag().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.counts.sum() as f64
    }

    /// Rows are true classes, columns are mapped predictions; the header
    /// names the cluster behind each column.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let n = self.counts.nrows();
        let header: Vec<String> = (0..n)
            .map(|k| format!("cluster_{}->{k}", self.cluster_of_class[k]))
            .collect();
        writeln!(out, "true_class,{}", header.join(","))?;
        for y in 0..n {
            let row: Vec<String> = (0..n).map(|k| self.counts[[k, y]].to_string()).collect();
            writeln!(out, "{y},{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn confusion(pred: &[usize], truth: &[usize], mapping: &[usize], k: usize) -> Result<ConfusionMatrix> {
    let table = ContingencyMatrix::new(pred, truth, k)?;
    let n = table.counts.nrows();
    if mapping.len() != n {
        return Err(Error::Shape(format!("mapping over {} clusters, need {n}", mapping.len())));
    }
    let mut inverse = vec![usize::MAX; n];
    for (c, &y) in mapping.iter().enumerate() {
        if y >= n || inverse[y] != usize::MAX {
            return Err(Error::Invalid("mapping is not a permutation".into()));
        }
        inverse[y] = c;
    }
    let mut counts = Array2::<u64>::zeros((n, n));
    for (&c, &y) in pred.iter().zip(truth) {
        counts[[mapping[c], y]] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        cluster_of_class: inverse,
    })
}

/// Samples whose largest cluster probability strictly exceeds `threshold`.
pub fn confident_subset(probs: ArrayView2<'_, f64>, threshold: f64) -> Result<Vec<usize>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold", "must lie in (0, 1)"));
    }
    Ok(probs
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) > threshold)
        .map(|(i, _)| i)
        .collect())
}
