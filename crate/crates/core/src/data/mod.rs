//! Numeric containers, dataset ingestion, toy generators and feature-space
//! augmentation.

mod augment;
pub(crate) mod io;
mod synthetic;

pub use augment::{augment, AugmentMode};
pub use io::{load_features, save_features, FeatureFormat};
pub use synthetic::{gen_blobs, gen_two_moons};

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// N×D matrix of per-sample embeddings, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Array2<f64>,
}

impl FeatureMatrix {
    /// Wraps `data`, rejecting empty shapes and non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be at least 1x1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if let Some(row) = first_non_finite_row(data.view()) {
            return Err(Error::Row {
                row,
                msg: "non-finite feature value".into(),
            });
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Row {
                    row: i,
                    msg: format!("expected {d} values, found {}", r.len()),
                });
            }
            flat.extend_from_slice(r);
        }
        let data = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }

    /// Copies the rows named by `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Array2<f64> {
        self.data.select(Axis(0), indices)
    }
}

pub(crate) fn first_non_finite_row(m: ArrayView2<'_, f64>) -> Option<usize> {
    m.rows()
        .into_iter()
        .position(|r| r.iter().any(|v| !v.is_finite()))
}

/// Ground-truth class indices, one per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    /// One past the largest label present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

impl From<Vec<usize>> for LabelVector {
    fn from(labels: Vec<usize>) -> Self {
        Self::new(labels)
    }
}

/// A minibatch gathered from a feature matrix together with its augmented
/// counterpart.
#[derive(Debug, Clone)]
pub struct Minibatch {
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
    pub augmented_features: Array2<f64>,
}

impl Minibatch {
    pub fn gather(
        source: &FeatureMatrix,
        indices: &[usize],
        mode: AugmentMode,
        strength: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::Invalid(format!(
                "a minibatch needs at least 2 samples, got {}",
                indices.len()
            )));
        }
        let mut seen = vec![false; source.n_samples()];
        for &i in indices {
            if i >= source.n_samples() {
                return Err(Error::Invalid(format!("sample index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invalid(format!("duplicate sample index {i}")));
            }
        }
        let features = source.select(indices);
        let augmented_features = augment(features.view(), mode, strength, rng)?;
        Ok(Self {
            indices: indices.to_vec(),
            features,
            augmented_features,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
