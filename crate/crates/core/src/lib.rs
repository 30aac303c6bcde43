//! Non-negative kernel sparse coding (NNKSC) for variable-length time series.
//!
//! Series are compared with dynamic time warping, turned into a Gaussian Gram
//! matrix, and then represented by a dictionary whose atoms are non-negative
//! combinations of training series in feature space. The label-consistent
//! variant ([`lc_classifier`]) turns the learned dictionary into a classifier.
//!
//! Module map:
//! - [`dataset`]: labeled series, file formats, synthetic data, stratified splits
//! - [`dtw_gram`]: DTW distances, Gaussian Gram matrices, PSD clipping
//! - [`sparse_coding`]: K-NNLS and NN-KOMP code inference
//! - [`dictionary_learning`]: alternating dictionary training with NNK-FISTA
//! - [`lc_classifier`]: label-consistent training and classification
//! - [`baselines`]: kNN, kernel k-means, kernel PCA, ridge one-vs-rest
//! - [`metrics`]: accuracy, reconstruction error, SP and DS sparseness
//! - [`cli`]: the `kdict` command-line front end

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod dictionary_learning;
pub mod dtw_gram;
mod error;
pub mod lc_classifier;
pub mod metrics;
pub mod sparse_coding;

pub use error::{Error, Result};
