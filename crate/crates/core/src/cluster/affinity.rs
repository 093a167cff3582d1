//! Laplacian-kernel affinities, dense or kNN-sparsified.

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use super::hamming::BitRows;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A symmetric linear operator exposed to the eigensolver.
pub trait SymmetricOperator<T: Real>: Sync {
    fn dim(&self) -> usize;

    /// `y = A x`.
    fn apply(&self, x: &[T], y: &mut [T]);

    fn row_sums(&self) -> Vec<T>;
}

/// Dense `N x N` affinity with entries `exp(-gamma * distance)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix<T = f64> {
    pub values: Array2<T>,
}

impl<T: Real> AffinityMatrix<T> {
    /// Wraps an arbitrary symmetric nonnegative matrix (used for hand-built
    /// graphs); kernel affinities should come from the constructors below.
    pub fn from_values(values: Array2<T>) -> Result<Self> {
        let (r, c) = values.dim();
        if r != c {
            return Err(Error::Shape(format!("affinity must be square, got {r}x{c}")));
        }
        for i in 0..r {
            for j in 0..i {
                if values[(i, j)] != values[(j, i)] {
                    return Err(Error::Invalid(format!("affinity not symmetric at ({i}, {j})")));
                }
            }
        }
        if values.iter().any(|v| *v < T::zero() || !v.is_finite()) {
            return Err(Error::Invalid("affinity entries must be finite and nonnegative".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

impl<T: Real> SymmetricOperator<T> for AffinityMatrix<T> {
    fn dim(&self) -> usize {
        self.values.nrows()
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        y.par_iter_mut()
            .zip(self.values.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(yi, row)| {
                let mut acc = T::zero();
                for (a, b) in row.iter().zip(x) {
                    acc += *a * *b;
                }
                *yi = acc;
            });
    }

    fn row_sums(&self) -> Vec<T> {
        self.values
            .axis_iter(Axis(0))
            .map(|row| row.iter().copied().sum())
            .collect()
    }
}

fn check_gamma<T: Real>(gamma: T) -> Result<()> {
    if gamma > T::zero() && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be > 0, got {gamma}")))
    }
}

/// `A(i, j) = exp(-gamma * D(i, j))`.
pub fn laplacian_kernel_affinity<T: Real>(distances: &Array2<u32>, gamma: T) -> Result<AffinityMatrix<T>> {
    check_gamma(gamma)?;
    let (r, c) = distances.dim();
    if r != c {
        return Err(Error::Shape(format!("distance matrix must be square, got {r}x{c}")));
    }
    Ok(AffinityMatrix {
        values: distances.mapv(|d| (-gamma * T::from_u32(d).unwrap()).exp()),
    })
}

/// Dense affinity computed straight from packed rows, without materializing
/// the integer distance matrix.
pub fn dense_affinity<T: Real>(bits: &BitRows, gamma: T) -> Result<AffinityMatrix<T>> {
    check_gamma(gamma)?;
    let n = bits.n_rows();
    // exp(-gamma * d) for every possible distance
    let table: Vec<T> = (0..=bits.n_bits())
        .map(|d| (-gamma * T::from_usize_lossy(d)).exp())
        .collect();
    let mut values = Array2::<T>::zeros((n, n));
    values
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for j in 0..n {
                row[j] = table[bits.distance(i, j) as usize];
            }
        });
    Ok(AffinityMatrix { values })
}

/// CSR affinity keeping each row's `m` largest entries, symmetrized by max.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAffinity<T = f64> {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> SparseAffinity<T> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => T::zero(),
        }
    }
}

impl<T: Real> SymmetricOperator<T> for SparseAffinity<T> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[T], y: &mut [T]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = T::zero();
            for p in self.indptr[i]..self.indptr[i + 1] {
                acc += self.values[p] * x[self.indices[p]];
            }
            *yi = acc;
        });
    }

    fn row_sums(&self) -> Vec<T> {
        (0..self.n)
            .map(|i| self.values[self.indptr[i]..self.indptr[i + 1]].iter().copied().sum())
            .collect()
    }
}

/// kNN-sparsified Laplacian-kernel affinity. Each row keeps itself plus its
/// `neighbors` nearest rows (ties by lower index); the union is symmetrized.
pub fn knn_affinity<T: Real>(bits: &BitRows, gamma: T, neighbors: usize) -> Result<SparseAffinity<T>> {
    check_gamma(gamma)?;
    if neighbors == 0 {
        return Err(Error::Config("knn_sparsify must be >= 1".into()));
    }
    let n = bits.n_rows();
    let keep = neighbors.min(n.saturating_sub(1));
    let lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(u32, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (bits.distance(i, j), j))
                .collect();
            if keep < cand.len() {
                cand.select_nth_unstable(keep);
                cand.truncate(keep);
            }
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for (i, list) in lists.iter().enumerate() {
        for &j in list {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for (i, mut cols) in adj.into_iter().enumerate() {
        cols.sort_unstable();
        cols.dedup();
        for j in cols {
            indices.push(j);
            values.push((-gamma * T::from_u32(bits.distance(i, j)).unwrap()).exp());
        }
        indptr.push(indices.len());
    }
    Ok(SparseAffinity {
        n,
        indptr,
        indices,
        values,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::arr2;

    use super::*;
    use crate::cluster::hamming::hamming_distance_matrix;

    #[test]
    fn kernel_values() {
        let d = arr2(&[[0u32, 2], [2, 0]]);
        let a = laplacian_kernel_affinity(&d, 0.25f64).unwrap();
        assert_eq!(a.values[(0, 0)], 1.0);
        // exp(-0.5) = 0.6065306597126334
        assert!((a.values[(0, 1)] - 0.606_530_659_712_633_4).abs() < 1e-15);
        assert!(laplacian_kernel_affinity(&d, 0.0f64).is_err());
        assert!(laplacian_kernel_affinity(&d, -1.0f64).is_err());
    }

    #[test]
    fn fused_dense_matches_two_step() {
        let x = arr2(&[[0u8, 1, 1, 0, 1], [1, 1, 0, 0, 0], [0, 0, 0, 0, 1], [0, 1, 1, 0, 1]]);
        let two = laplacian_kernel_affinity(&hamming_distance_matrix(x.view()), 0.2f64).unwrap();
        let fused = dense_affinity(&BitRows::pack(x.view()), 0.2f64).unwrap();
        assert_eq!(two, fused);
    }

    #[test]
    fn knn_is_symmetric_with_unit_diagonal() {
        let x = arr2(&[
            [0u8, 0, 0, 0],
            [0, 0, 0, 1],
            [1, 1, 0, 0],
            [1, 1, 1, 0],
            [1, 1, 1, 1],
        ]);
        let s = knn_affinity::<f64>(&BitRows::pack(x.view()), 0.5, 1).unwrap();
        for i in 0..5 {
            assert_eq!(s.get(i, i), 1.0);
            for j in 0..5 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
        assert!(s.get(0, 1) > 0.0);
        assert_eq!(s.get(0, 4), 0.0);
    }
}
