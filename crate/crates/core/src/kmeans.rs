//! Lloyd's k-means with k-means++ seeding, the baseline clusterer.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per row (ties to the lower index) and its squared distance.
fn assign(x: ArrayView2<'_, f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            centroids
                .rows()
                .into_iter()
                .map(|c| sq_dist(row, c))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (c, d)| if d < best.1 { (c, d) } else { best })
        })
        .collect()
}

fn plus_plus_init(x: ArrayView2<'_, f64>, k: usize, rng: &mut RngState) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.below(n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining points coincide with a centre
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(next)));
        }
    }
    x.select(Axis(0), &chosen)
}

pub fn kmeans(features: ArrayView2<'_, f64>, k: usize, params: &KMeansParams, rng: &mut RngState) -> Result<KMeansModel> {
    let n = features.nrows();
    if k == 0 || k > n {
        return Err(Error::config("k_clusters", format!("K = {k} must lie in 1..={n}")));
    }
    if params.n_init == 0 {
        return Err(Error::config("n_init", "need at least one restart"));
    }
    let mut best: Option<KMeansModel> = None;
    for _ in 0..params.n_init {
        let run = lloyd(features, k, params, rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

fn lloyd(features: ArrayView2<'_, f64>, k: usize, params: &KMeansParams, rng: &mut RngState) -> KMeansModel {
    let d = features.ncols();
    let mut centroids = plus_plus_init(features, k, rng);
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;
    let mut assigned = assign(features, &centroids);
    loop {
        inertia_trace.push(assigned.iter().map(|a| a.1).sum());
        if iterations == params.max_iter {
            break;
        }
        iterations += 1;
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            sums.row_mut(c).scaled_add(1.0, &features.row(i));
            counts[c] += 1;
        }
        let mut next = centroids.clone();
        let mut taken = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // reseed at the point farthest from its own centroid
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken.contains(i))
                    .fold((0, f64::NEG_INFINITY), |best, (i, a)| if a.1 > best.1 { (i, a.1) } else { best })
                    .0;
                taken.push(far);
                next.row_mut(c).assign(&features.row(far));
            }
        }
        let shift = centroids
            .rows()
            .into_iter()
            .zip(next.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        assigned = assign(features, &centroids);
        if shift < params.tol {
            inertia_trace.push(assigned.iter().map(|a| a.1).sum());
            break;
        }
    }
    KMeansModel {
        inertia: *inertia_trace.last().unwrap(),
        assignments: assigned.into_iter().map(|a| a.0).collect(),
        centroids,
        inertia_trace,
        iterations,
    }
}
