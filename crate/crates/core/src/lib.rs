//! Two-way matrix factor modelling with global (strong) and cluster-specific
//! (weak) factors, and biclustering of matrix-valued time series.
//!
//! The pipeline runs in four stages:
//!
//! 1. count the strong and weak factors in each direction from eigenvalue
//!    ratios of lag-autocovariance aggregates ([`estimate::estimate_factor_numbers`]);
//! 2. estimate the global loading spaces by projected estimation
//!    ([`estimate::estimate_global_loadings`]);
//! 3. strip the global part and estimate the cluster-specific loading spaces
//!    ([`estimate::estimate_cluster_loadings`]);
//! 4. cluster rows and columns by K-means on similarity matrices built from the
//!    cluster-specific loadings ([`bicluster::bicluster_pipeline`]).
//!
//! [`simulate`] generates synthetic data with known ground truth and
//! [`evaluate`] runs Monte Carlo replications and rolling validation.

pub mod bicluster;
pub mod error;
pub mod estimate;
pub mod evaluate;
pub mod io;
pub mod linalg;
pub mod simulate;
pub mod spectral;
pub mod types;

pub use error::{Error, Result, Stage};
pub use types::{
    BiclusterResult, FactorNumbers, LoadingKind, LoadingMatrix, LoadingSet, MatrixSeries,
    Orientation,
};
