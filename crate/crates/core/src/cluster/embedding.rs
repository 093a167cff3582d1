//! Normalized-affinity spectral embedding (Ng-Jordan-Weiss).

use ndarray::{Array2, Axis};

use super::affinity::SymmetricOperator;
use super::eigen::{top_eigenpairs, EigenOptions};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `M = D^{-1/2} A D^{-1/2}` applied lazily on top of `A`.
pub struct NormalizedAffinity<'a, T: Real, Op: SymmetricOperator<T> + ?Sized> {
    inner: &'a Op,
    inv_sqrt_degree: Vec<T>,
}

impl<'a, T: Real, Op: SymmetricOperator<T> + ?Sized> NormalizedAffinity<'a, T, Op> {
    pub fn new(inner: &'a Op) -> Result<Self> {
        let degrees = inner.row_sums();
        if let Some(i) = degrees.iter().position(|d| !(*d > T::zero())) {
            return Err(Error::Degenerate(format!("row {i} of the affinity has zero degree")));
        }
        Ok(Self {
            inner,
            inv_sqrt_degree: degrees.iter().map(|d| T::one() / d.sqrt()).collect(),
        })
    }

    pub fn inv_sqrt_degree(&self) -> &[T] {
        &self.inv_sqrt_degree
    }
}

impl<T: Real, Op: SymmetricOperator<T> + ?Sized> SymmetricOperator<T> for NormalizedAffinity<'_, T, Op> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        let scaled: Vec<T> = x.iter().zip(&self.inv_sqrt_degree).map(|(a, b)| *a * *b).collect();
        self.inner.apply(&scaled, y);
        for (yi, s) in y.iter_mut().zip(&self.inv_sqrt_degree) {
            *yi *= *s;
        }
    }

    fn row_sums(&self) -> Vec<T> {
        let ones = vec![T::one(); self.dim()];
        let mut y = vec![T::zero(); self.dim()];
        self.apply(&ones, &mut y);
        y
    }
}

/// Row-normalized top-k eigenvectors of the normalized affinity, with the
/// raw eigenpairs kept for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T = f64> {
    pub values: Array2<T>,
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Array2<T>,
    pub max_residual: T,
    pub basis_size: usize,
}

impl<T: Real> Embedding<T> {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }
}

pub fn normalized_laplacian_embedding<T: Real, Op: SymmetricOperator<T> + ?Sized>(
    affinity: &Op,
    k: usize,
    options: &EigenOptions,
) -> Result<Embedding<T>> {
    let m = NormalizedAffinity::new(affinity)?;
    let pairs = top_eigenpairs(&m, k, options)?;
    let mut values = pairs.vectors.clone();
    for (i, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if !(norm > T::zero()) {
            return Err(Error::Degenerate(format!("embedding row {i} is zero")));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(Embedding {
        values,
        eigenvalues: pairs.values,
        eigenvectors: pairs.vectors,
        max_residual: pairs.max_residual,
        basis_size: pairs.basis_size,
    })
}
