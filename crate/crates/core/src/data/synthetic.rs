//! Toy datasets.

use std::f64::consts::PI;

use ndarray::Array2;

use super::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Two interleaving unit half-circles with isotropic Gaussian noise.
///
/// Moon 0 is the upper arc `(cos t, sin t)` centred at the origin; moon 1 is
/// the lower arc `(1 - cos t, 0.5 - sin t)` centred at `(1, 0.5)`, for `t`
/// evenly spaced on `[0, π]`. The first `n / 2` rows belong to moon 0.
pub fn gen_two_moons(
    n: usize,
    noise_sigma: f64,
    rng: &mut RngState,
) -> Result<(FeatureMatrix, LabelVector)> {
    if n < 2 {
        return Err(Error::Invalid(format!("two moons needs n >= 2, got {n}")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::Invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let n_upper = n / 2;
    let n_lower = n - n_upper;
    let mut data = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let arc = |count: usize, k: usize| {
        if count == 1 {
            0.0
        } else {
            PI * k as f64 / (count - 1) as f64
        }
    };
    for k in 0..n_upper {
        let t = arc(n_upper, k);
        data[[k, 0]] = t.cos();
        data[[k, 1]] = t.sin();
        labels.push(0);
    }
    for k in 0..n_lower {
        let t = arc(n_lower, k);
        data[[n_upper + k, 0]] = 1.0 - t.cos();
        data[[n_upper + k, 1]] = 0.5 - t.sin();
        labels.push(1);
    }
    if noise_sigma > 0.0 {
        data.mapv_inplace(|v| v + noise_sigma * rng.normal());
    }
    Ok((FeatureMatrix::new(data)?, LabelVector::new(labels)))
}

/// `n_per_cluster` isotropic Gaussian samples around each centre, in centre
/// order.
pub fn gen_blobs(
    n_per_cluster: usize,
    centers: &[Vec<f64>],
    sigma: f64,
    rng: &mut RngState,
) -> Result<(FeatureMatrix, LabelVector)> {
    if centers.len() < 2 {
        return Err(Error::Invalid("blobs need at least 2 centers".into()));
    }
    if n_per_cluster == 0 {
        return Err(Error::Invalid("blobs need n_per_cluster >= 1".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::Invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::Shape("all centers must share one nonzero dimension".into()));
    }
    let n = n_per_cluster * centers.len();
    let mut data = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for k in 0..n_per_cluster {
            let row = c * n_per_cluster + k;
            for j in 0..d {
                data[[row, j]] = center[j] + sigma * rng.normal();
            }
            labels.push(c);
        }
    }
    Ok((FeatureMatrix::new(data)?, LabelVector::new(labels)))
}
