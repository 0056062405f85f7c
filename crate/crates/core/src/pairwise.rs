//! Minibatch pairwise pseudo-labels.
//!
//! Every builder returns a symmetric binary matrix with an all-ones diagonal;
//! the diagonal pairs a sample with its own augmented view.

use std::fmt;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Which similarity drives the connections, with its own hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Similarity {
    /// Connect when the squared Euclidean distance is below `tau`.
    L2 { tau: f64 },
    /// Connect when the cosine similarity exceeds `tau`.
    Cosine { tau: f64 },
    /// Connect when the symmetric SNE similarity exceeds `tau`.
    Sne { tau: f64, temperature: f64 },
    /// Connect when either sample is among the other's `k` nearest neighbours.
    Knn { k: usize },
}

/// Where the pairwise labels are extracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelSpace {
    /// Feature vectors fed to the classifier head.
    #[default]
    Feature,
    /// Pre-softmax logits of the classifier head.
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub similarity: Similarity,
    pub space: LabelSpace,
}

impl SimilarityConfig {
    pub fn feature(similarity: Similarity) -> Self {
        Self {
            similarity,
            space: LabelSpace::Feature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.similarity.validate()
    }
}

impl Similarity {
    pub fn name(&self) -> &'static str {
        match self {
            Similarity::L2 { .. } => "l2",
            Similarity::Cosine { .. } => "cosine",
            Similarity::Sne { .. } => "sne",
            Similarity::Knn { .. } => "knn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Similarity::L2 { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(Error::config("similarity.tau", "l2 threshold must be > 0"))
            }
            Similarity::Cosine { tau } if !(tau > -1.0 && tau <= 1.0) => {
                Err(Error::config("similarity.tau", "cosine threshold must lie in (-1, 1]"))
            }
            Similarity::Sne { tau, .. } if !(tau > 0.0 && tau < 1.0) => {
                Err(Error::config("similarity.tau", "sne threshold must lie in (0, 1)"))
            }
            Similarity::Sne { temperature, .. } if !(temperature > 0.0 && temperature.is_finite()) => {
                Err(Error::config("similarity.temperature", "temperature must be > 0"))
            }
            Similarity::Knn { k: 0 } => Err(Error::config("similarity.k", "k must be >= 1")),
            _ => Ok(()),
        }
    }
}

/// Symmetric binary B×B adjacency with an all-ones diagonal.
#[derive(Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    a: Array2<u8>,
}

impl fmt::Debug for AdjacencyMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdjacencyMatrix")
            .field("size", &self.len())
            .field("edges", &self.edge_count())
            .finish()
    }
}

impl AdjacencyMatrix {
    /// Builds from an arbitrary predicate on unordered pairs `i < j`.
    pub fn from_fn(b: usize, mut connected: impl FnMut(usize, usize) -> bool) -> Self {
        let mut a = Array2::<u8>::eye(b);
        for i in 0..b {
            for j in i + 1..b {
                if connected(i, j) {
                    a[[i, j]] = 1;
                    a[[j, i]] = 1;
                }
            }
        }
        Self { a }
    }

    /// Wraps a 0/1 matrix, checking symmetry and forcing the diagonal.
    pub fn from_matrix(mut a: Array2<u8>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Shape("adjacency must be square".into()));
        }
        let b = a.nrows();
        for i in 0..b {
            a[[i, i]] = 1;
            for j in 0..b {
                if a[[i, j]] > 1 || a[[i, j]] != a[[j, i]] {
                    return Err(Error::Invalid(format!(
                        "adjacency must be symmetric 0/1, violated at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { a })
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.a[[i, j]] == 1
    }

    pub fn view(&self) -> ArrayView2<'_, u8> {
        self.a.view()
    }

    /// Targets as reals, for the loss.
    pub fn to_targets(&self) -> Array2<f64> {
        self.a.mapv(f64::from)
    }

    pub fn degree(&self, i: usize) -> usize {
        self.a.row(i).iter().map(|&v| v as usize).sum()
    }

    /// Undirected off-diagonal edges `(i, j)` with `i < j`, row-major.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.len();
        (0..b).flat_map(move |i| (i + 1..b).filter(move |&j| self.get(i, j)).map(move |j| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Relabels rows and columns so that new row `r` is old row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let b = self.len();
        Self {
            a: Array2::from_shape_fn((b, b), |(i, j)| self.a[[perm[i], perm[j]]]),
        }
    }

    /// 64-bit FNV-1a digest of the matrix bits.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for &v in self.a.iter() {
            h ^= v as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h
    }

    /// Writes one `i j` line per undirected edge.
    pub fn write_edge_list(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }
}

fn check_batch(x: ArrayView2<'_, f64>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::Invalid(format!(
            "pairwise labeling needs at least 2 samples, got {}",
            x.nrows()
        )));
    }
    if let Some(row) = crate::data::first_non_finite_row(x) {
        return Err(Error::Row {
            row,
            msg: "non-finite feature value".into(),
        });
    }
    Ok(())
}

/// Dense squared Euclidean distances, filled row-parallel.
pub fn squared_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let b = x.nrows();
    let mut out = Array2::<f64>::zeros((b, b));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(b)
        .enumerate()
        .for_each(|(i, row)| {
            let xi = x.row(i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = xi
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum();
            }
        });
    out
}

pub fn adjacency_l2(features: ArrayView2<'_, f64>, tau: f64) -> Result<AdjacencyMatrix> {
    check_batch(features)?;
    Similarity::L2 { tau }.validate()?;
    let d2 = squared_distances(features);
    Ok(AdjacencyMatrix::from_fn(features.nrows(), |i, j| d2[[i, j]] < tau))
}

pub fn cosine_similarities(features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let norms: Vec<f64> = features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .collect();
    if let Some(row) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm { row });
    }
    let b = features.nrows();
    Ok(Array2::from_shape_fn((b, b), |(i, j)| {
        features.row(i).dot(&features.row(j)) / (norms[i] * norms[j])
    }))
}

pub fn adjacency_cosine(features: ArrayView2<'_, f64>, tau: f64) -> Result<AdjacencyMatrix> {
    check_batch(features)?;
    Similarity::Cosine { tau }.validate()?;
    let cos = cosine_similarities(features)?;
    Ok(AdjacencyMatrix::from_fn(features.nrows(), |i, j| cos[[i, j]] > tau))
}

/// Symmetric SNE similarities `(p_{j|i} + p_{i|j}) / 2` under one shared
/// bandwidth `temperature` for every sample.
///
/// Each row's logits `-d²/T²` are shifted by their off-diagonal maximum before
/// exponentiating, so the shifted partition function is at least 1.
pub fn sne_similarities(features: ArrayView2<'_, f64>, temperature: f64) -> Result<Array2<f64>> {
    let b = features.nrows();
    let t2 = temperature * temperature;
    let d2 = squared_distances(features);
    let mut cond = Array2::<f64>::zeros((b, b));
    for i in 0..b {
        let shift = (0..b)
            .filter(|&k| k != i)
            .map(|k| -d2[[i, k]] / t2)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in (0..b).filter(|&k| k != i) {
            let e = (-d2[[i, k]] / t2 - shift).exp();
            cond[[i, k]] = e;
            z += e;
        }
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::Underflow { row: i });
        }
        cond.row_mut(i).mapv_inplace(|v| v / z);
    }
    Ok(Array2::from_shape_fn((b, b), |(i, j)| {
        0.5 * (cond[[i, j]] + cond[[j, i]])
    }))
}

pub fn adjacency_sne(
    features: ArrayView2<'_, f64>,
    tau: f64,
    temperature: f64,
) -> Result<AdjacencyMatrix> {
    check_batch(features)?;
    Similarity::Sne { tau, temperature }.validate()?;
    let s = sne_similarities(features, temperature)?;
    Ok(AdjacencyMatrix::from_fn(features.nrows(), |i, j| s[[i, j]] > tau))
}

/// Indices of the `k` nearest neighbours of every row, excluding itself;
/// equal distances go to the lower index.
pub fn knn_indices(features: ArrayView2<'_, f64>, k: usize) -> Vec<Vec<usize>> {
    let b = features.nrows();
    let d2 = squared_distances(features);
    (0..b)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<usize> = (0..b).filter(|&j| j != i).collect();
            others.sort_by(|&p, &q| d2[[i, p]].total_cmp(&d2[[i, q]]).then(p.cmp(&q)));
            others.truncate(k);
            others
        })
        .collect()
}

pub fn adjacency_knn(features: ArrayView2<'_, f64>, k: usize) -> Result<AdjacencyMatrix> {
    check_batch(features)?;
    Similarity::Knn { k }.validate()?;
    let b = features.nrows();
    if k >= b {
        return Err(Error::config(
            "similarity.k",
            format!("k = {k} must be smaller than the batch size {b}"),
        ));
    }
    let mut a = Array2::<u8>::eye(b);
    for (i, nn) in knn_indices(features, k).into_iter().enumerate() {
        for j in nn {
            a[[i, j]] = 1;
            a[[j, i]] = 1;
        }
    }
    Ok(AdjacencyMatrix { a })
}

/// Builds the adjacency for `cfg.similarity`. The caller passes features or
/// logits according to `cfg.space`.
pub fn build_adjacency(
    cfg: &SimilarityConfig,
    features_or_logits: ArrayView2<'_, f64>,
) -> Result<AdjacencyMatrix> {
    adjacency(&cfg.similarity, features_or_logits)
}

pub fn adjacency(similarity: &Similarity, x: ArrayView2<'_, f64>) -> Result<AdjacencyMatrix> {
    match *similarity {
        Similarity::L2 { tau } => adjacency_l2(x, tau),
        Similarity::Cosine { tau } => adjacency_cosine(x, tau),
        Similarity::Sne { tau, temperature } => adjacency_sne(x, tau, temperature),
        Similarity::Knn { k } => adjacency_knn(x, k),
    }
}

/// Finds a parameter of the same similarity family (`template` supplies the
/// kind and, for SNE, the temperature) producing exactly `edges` undirected
/// edges on `features`, or `None` when no valid parameter does.
pub fn calibrate_for_edges(
    template: &Similarity,
    features: ArrayView2<'_, f64>,
    edges: usize,
) -> Result<Option<Similarity>> {
    check_batch(features)?;
    let b = features.nrows();
    let pairs = b * (b - 1) / 2;
    if edges > pairs {
        return Ok(None);
    }
    let upper = |m: &Array2<f64>| -> Vec<f64> {
        let mut v = Vec::with_capacity(pairs);
        for i in 0..b {
            for j in i + 1..b {
                v.push(m[[i, j]]);
            }
        }
        v
    };
    // threshold strictly between the edges-th and (edges+1)-th value in the
    // order edges are admitted
    let split = |mut v: Vec<f64>, ascending: bool| -> Option<f64> {
        v.sort_by(|a, c| if ascending { a.total_cmp(c) } else { c.total_cmp(a) });
        let step = if ascending { 1.0 } else { -1.0 };
        match edges {
            0 => Some(v[0] - step * (1.0 + v[0].abs()) * 1e-9),
            e if e == v.len() => Some(v[e - 1] + step * (1.0 + v[e - 1].abs())),
            e if v[e - 1] != v[e] => Some(0.5 * (v[e - 1] + v[e])),
            _ => None,
        }
    };
    let candidate = match *template {
        Similarity::L2 { .. } => {
            split(upper(&squared_distances(features)), true).map(|tau| Similarity::L2 { tau })
        }
        Similarity::Cosine { .. } => split(upper(&cosine_similarities(features)?), false)
            .map(|tau| Similarity::Cosine { tau: tau.min(1.0) }),
        Similarity::Sne { temperature, .. } => {
            split(upper(&sne_similarities(features, temperature)?), false)
                .map(|tau| Similarity::Sne { tau, temperature })
        }
        Similarity::Knn { .. } => {
            return Ok((1..b)
                .map(|k| Similarity::Knn { k })
                .find(|s| adjacency(s, features).is_ok_and(|a| a.edge_count() == edges)));
        }
    };
    Ok(candidate.filter(|s| {
        s.validate().is_ok() && adjacency(s, features).is_ok_and(|a| a.edge_count() == edges)
    }))
}
