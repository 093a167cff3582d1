//! Spectral clustering of binary feature matrices.
//!
//! Hamming distances feed a Laplacian-kernel affinity, whose normalized form
//! is embedded by its top eigenvectors; K-Means then labels the embedding
//! rows. The elbow probe runs K-Means on the raw features.

pub mod affinity;
pub mod ari;
pub mod eigen;
pub mod elbow;
pub mod embedding;
pub mod hamming;
pub mod kmeans;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

pub use affinity::{dense_affinity, knn_affinity, laplacian_kernel_affinity, AffinityMatrix, SparseAffinity, SymmetricOperator};
pub use ari::adjusted_rand_index;
pub use eigen::{top_eigenpairs, EigenOptions, EigenPairs};
pub use elbow::{detect_elbow, elbow_sse_curve, ElbowChoice, ElbowCurve};
pub use embedding::{normalized_laplacian_embedding, Embedding};
pub use hamming::{hamming_distance_matrix, BitRows};
pub use kmeans::{kmeans, kmeans_best, ClusterAssignment, KMeansConfig, KMeansResult};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub k: usize,
    /// Kernel bandwidth; `None` means `1 / feature_count`.
    pub gamma: Option<f64>,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
    pub seed: u64,
    /// Keep this many nearest neighbours per row instead of the dense affinity.
    pub knn_sparsify: Option<usize>,
    /// Largest N for which a dense affinity is built.
    pub dense_cap: usize,
    /// Eigen residual tolerance override.
    pub eigen_tol: Option<f64>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            k: 4,
            gamma: None,
            kmeans_restarts: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-4,
            seed: 0,
            knn_sparsify: None,
            dense_cap: 20_000,
            eigen_tol: None,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("spectral k must be >= 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Config(format!("gamma must be > 0, got {g}")));
            }
        }
        if self.knn_sparsify == Some(0) {
            return Err(Error::Config("knn_sparsify must be >= 1".into()));
        }
        self.kmeans_config().validate()
    }

    pub fn kmeans_config(&self) -> KMeansConfig {
        KMeansConfig {
            restarts: self.kmeans_restarts,
            max_iter: self.kmeans_max_iter,
            tol: self.kmeans_tol,
            seed: self.seed,
        }
    }

    pub fn effective_gamma(&self, feature_count: usize) -> f64 {
        self.gamma.unwrap_or(1.0 / feature_count.max(1) as f64)
    }

    fn eigen_options(&self) -> EigenOptions {
        EigenOptions {
            tol: self.eigen_tol,
            max_basis: None,
            seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralResult<T = f64> {
    pub assignment: ClusterAssignment,
    pub embedding: Embedding<T>,
    pub gamma: f64,
    pub sparse: bool,
}

fn check_binary(x: &ArrayView2<'_, u8>) -> Result<()> {
    if let Some(v) = x.iter().find(|v| **v > 1) {
        return Err(Error::Invalid(format!("feature matrix must be binary, found {v}")));
    }
    Ok(())
}

/// Hamming -> Laplacian kernel -> normalized embedding -> K-Means.
pub fn spectral_cluster<T: Real>(x: ArrayView2<'_, u8>, config: &SpectralConfig) -> Result<SpectralResult<T>> {
    config.validate()?;
    check_binary(&x)?;
    let n = x.nrows();
    if config.k > n {
        return Err(Error::Invalid(format!("k={} exceeds N={n}", config.k)));
    }
    let gamma = config.effective_gamma(x.ncols());
    let bits = BitRows::pack(x);
    let eig = config.eigen_options();
    let (embedding, sparse) = match config.knn_sparsify {
        Some(m) => {
            let a = knn_affinity(&bits, T::lit(gamma), m)?;
            log::info!("knn affinity: n={n} nnz={}", a.nnz());
            (normalized_laplacian_embedding(&a, config.k, &eig)?, true)
        }
        None if n > config.dense_cap => {
            return Err(Error::Config(format!(
                "N={n} exceeds dense_cap={}; set knn_sparsify or raise the cap",
                config.dense_cap
            )))
        }
        None => {
            let a = dense_affinity(&bits, T::lit(gamma))?;
            (normalized_laplacian_embedding(&a, config.k, &eig)?, false)
        }
    };
    log::info!(
        "embedding k={} basis={} max_residual={:e}",
        config.k,
        embedding.basis_size,
        embedding.max_residual.as_f64()
    );
    let assignment = kmeans(embedding.values.view(), config.k, &config.kmeans_config())?;
    Ok(SpectralResult {
        assignment,
        embedding,
        gamma,
        sparse,
    })
}
