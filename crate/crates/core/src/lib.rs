//! Clustering by linearly separating pairwise-connected samples.
//!
//! Per minibatch, an adjacency matrix of pseudo-labels is extracted in feature
//! space (L2, cosine, symmetric SNE or kNN), and a classifier head is trained
//! with a pairwise binary cross-entropy so connected samples land in the same
//! cluster. Composite (MixUp-style) samples get convex-combined pairwise
//! targets, and a ramped MSE keeps predictions consistent under augmentation.

pub mod cli;
pub mod composition;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod head;
pub mod kmeans;
pub mod losses;
pub mod optim;
pub mod pairwise;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
