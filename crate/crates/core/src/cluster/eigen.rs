//! Top-k symmetric eigenpairs via Lanczos with full reorthogonalization.
//!
//! The Krylov basis is extended one vector at a time; on (near) breakdown a
//! fresh random direction orthogonal to the basis is injected, so repeated
//! eigenvalues are recovered. Every returned pair is checked against the
//! operator by explicit multiplication.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::affinity::SymmetricOperator;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct EigenOptions {
    /// Residual tolerance `||A v - lambda v||_inf`; `None` picks
    /// `max(1e-10, 1000 * eps)` for the scalar type.
    pub tol: Option<f64>,
    /// Largest Krylov basis before giving up; `None` = `min(n, 1000)`.
    pub max_basis: Option<usize>,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            tol: None,
            max_basis: None,
            seed: 0x5eed,
        }
    }
}

impl EigenOptions {
    pub fn tolerance<T: Real>(&self) -> T {
        match self.tol {
            Some(t) => T::lit(t),
            None => T::lit(1e-10).max(T::epsilon() * T::lit(1000.0)),
        }
    }
}

/// `k` eigenpairs in descending eigenvalue order; `vectors` holds them as
/// unit-norm columns.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenPairs<T = f64> {
    pub values: Vec<T>,
    pub vectors: Array2<T>,
    pub basis_size: usize,
    pub max_residual: T,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn orthogonalize<T: Real>(w: &mut [T], basis: &[Vec<T>]) {
    // two passes of classical Gram-Schmidt
    for _ in 0..2 {
        for q in basis {
            let c = dot(w, q);
            axpy(-c, q, w);
        }
    }
}

fn random_unit<T: Real>(rng: &mut ChaCha8Rng, n: usize, basis: &[Vec<T>]) -> Option<Vec<T>> {
    for _ in 0..8 {
        let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect();
        orthogonalize(&mut v, basis);
        let nv = norm(&v);
        if nv > T::lit(1e-3) {
            v.iter_mut().for_each(|x| *x /= nv);
            return Some(v);
        }
    }
    None
}

/// Eigen-decomposition of a symmetric tridiagonal matrix by implicit QL.
///
/// `off[i]` couples rows `i` and `i + 1`. Returns eigenvalues (unsorted) and
/// the eigenvector matrix, column `j` belonging to value `j`.
pub fn tridiagonal_eigen<T: Real>(diag: &[T], off: &[T]) -> Result<(Vec<T>, Array2<T>)> {
    let n = diag.len();
    if off.len() + 1 != n.max(1) {
        return Err(Error::Shape(format!(
            "tridiagonal: {} diagonal vs {} off-diagonal entries",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e: Vec<T> = off.iter().copied().chain(std::iter::once(T::zero())).collect();
    let mut z = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= T::epsilon() * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Eigen(format!("tridiagonal QL: no convergence for index {l}")));
            }
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            g = d[m] - d[l] + e[l] / (g + if g >= T::zero() { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut early = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    let f = z[(k, i + 1)];
                    z[(k, i + 1)] = s * z[(k, i)] + c * f;
                    z[(k, i)] = c * z[(k, i)] - s * f;
                }
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    Ok((d, z))
}

/// Flips `v` so its largest-magnitude entry (lowest index on ties) is positive.
fn canonical_sign<T: Real>(v: &mut [T]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < T::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `k` largest eigenpairs of a symmetric operator.
pub fn top_eigenpairs<T: Real, Op: SymmetricOperator<T> + ?Sized>(
    op: &Op,
    k: usize,
    options: &EigenOptions,
) -> Result<EigenPairs<T>> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("need 1 <= k <= n, got k={k}, n={n}")));
    }
    let tol: T = options.tolerance();
    let max_basis = options.max_basis.unwrap_or(1000).min(n).max(k);
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let mut basis: Vec<Vec<T>> = Vec::with_capacity(max_basis.min(n));
    let mut alphas: Vec<T> = Vec::new();
    let mut betas: Vec<T> = Vec::new();
    let mut v = random_unit(&mut rng, n, &basis)
        .ok_or_else(|| Error::Eigen("could not draw a start vector".into()))?;
    let mut w = vec![T::zero(); n];
    let mut scale = T::zero();
    let mut last_estimate = T::infinity();
    let mut last_explicit = T::infinity();

    loop {
        op.apply(&v, &mut w);
        let alpha = dot(&w, &v);
        axpy(-alpha, &v, &mut w);
        if let (Some(prev), Some(beta)) = (basis.last(), betas.last()) {
            axpy(-*beta, prev, &mut w);
        }
        basis.push(std::mem::take(&mut v));
        orthogonalize(&mut w, &basis);
        let beta = norm(&w);
        alphas.push(alpha);
        scale = scale.max(alpha.abs() + beta);

        let dim = basis.len();
        let breakdown = beta <= T::epsilon() * T::lit(1000.0) * scale.max(T::one());
        let check_every = (dim / 10).max(5);
        let exhausted = dim == n;
        // A breakdown only proves an invariant subspace was found, not that it holds
        // the top k; keep extending unless the space is exhausted.
        if dim >= k && (exhausted || (!breakdown && (dim % check_every == 0 || dim >= max_basis))) {
            let (theta, s) = tridiagonal_eigen(&alphas, &betas)?;
            let mut order: Vec<usize> = (0..dim).collect();
            order.sort_by(|&a, &b| theta[b].partial_cmp(&theta[a]).unwrap().then(a.cmp(&b)));
            let top = &order[..k];
            let estimate = top
                .iter()
                .map(|&i| (beta * s[(dim - 1, i)]).abs())
                .fold(T::zero(), T::max);
            last_estimate = estimate;
            if estimate <= tol || exhausted {
                let mut vectors = Array2::<T>::zeros((n, k));
                let mut values = Vec::with_capacity(k);
                let mut max_residual = T::zero();
                let mut y = vec![T::zero(); n];
                for (col, &i) in top.iter().enumerate() {
                    let mut x = vec![T::zero(); n];
                    for (j, q) in basis.iter().enumerate() {
                        axpy(s[(j, i)], q, &mut x);
                    }
                    let nx = norm(&x);
                    x.iter_mut().for_each(|xi| *xi /= nx);
                    canonical_sign(&mut x);
                    op.apply(&x, &mut y);
                    let lambda = dot(&x, &y);
                    let res = y
                        .iter()
                        .zip(&x)
                        .map(|(a, b)| (*a - lambda * *b).abs())
                        .fold(T::zero(), T::max);
                    max_residual = max_residual.max(res);
                    values.push(lambda);
                    for (r, xi) in x.into_iter().enumerate() {
                        vectors[(r, col)] = xi;
                    }
                }
                last_explicit = max_residual;
                if max_residual <= tol {
                    return Ok(EigenPairs {
                        values,
                        vectors,
                        basis_size: dim,
                        max_residual,
                    });
                }
                if exhausted {
                    return Err(Error::Eigen(format!(
                        "full basis of {dim} reached; max residual {max_residual:e} > tol {tol:e}"
                    )));
                }
            }
        }
        if dim >= max_basis {
            return Err(Error::Eigen(format!(
                "basis limit {max_basis} reached (n={n}, k={k}); residual estimate {last_estimate:e}, \
                 last explicit residual {last_explicit:e}, tol {tol:e}"
            )));
        }
        if breakdown {
            betas.push(T::zero());
            v = random_unit(&mut rng, n, &basis).ok_or_else(|| {
                Error::Eigen(format!("could not extend Krylov basis beyond {dim}"))
            })?;
        } else {
            betas.push(beta);
            v = w.iter().map(|x| *x / beta).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::arr2;

    use super::*;
    use crate::cluster::affinity::AffinityMatrix;

    #[test]
    fn tridiagonal_2x2() {
        // [[2,1],[1,2]] -> eigenvalues 1 and 3
        let (mut vals, _) = tridiagonal_eigen(&[2.0f64, 2.0], &[1.0]).unwrap();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_reconstructs() {
        let d = [4.0f64, -1.0, 2.5, 0.3, 7.0];
        let e = [1.0f64, 0.5, -2.0, 0.1];
        let (vals, z) = tridiagonal_eigen(&d, &e).unwrap();
        let n = d.len();
        for j in 0..n {
            for i in 0..n {
                let mut tv = d[i] * z[(i, j)];
                if i > 0 {
                    tv += e[i - 1] * z[(i - 1, j)];
                }
                if i + 1 < n {
                    tv += e[i] * z[(i + 1, j)];
                }
                assert!((tv - vals[j] * z[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn repeated_eigenvalue_is_found_twice() {
        let a = AffinityMatrix::from_values(arr2(&[
            [1.0f64, 1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0],
            [0.0, 0.0, 1.0, 1.0],
        ]))
        .unwrap();
        let pairs = top_eigenpairs(&a, 2, &EigenOptions::default()).unwrap();
        assert!((pairs.values[0] - 2.0).abs() < 1e-12);
        assert!((pairs.values[1] - 2.0).abs() < 1e-12);
        assert!(pairs.max_residual <= 1e-10);
    }

    #[test]
    fn rejects_bad_k() {
        let a = AffinityMatrix::from_values(Array2::<f64>::eye(3)).unwrap();
        assert!(top_eigenpairs(&a, 0, &EigenOptions::default()).is_err());
        assert!(top_eigenpairs(&a, 4, &EigenOptions::default()).is_err());
    }
}
