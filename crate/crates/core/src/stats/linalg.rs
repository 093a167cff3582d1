//! Small dense symmetric solvers for the regression code.

use ndarray::{Array1, Array2};

use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky<T: Real>(a: &Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b`.
pub fn cholesky_solve<T: Real>(l: &Array2<T>, b: &Array1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let t = l[(i, k)] * y[k];
            y[i] -= t;
        }
        y[i] /= l[(i, i)];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            let t = l[(k, i)] * y[k];
            y[i] -= t;
        }
        y[i] /= l[(i, i)];
    }
    y
}

pub fn cholesky_inverse<T: Real>(l: &Array2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut inv = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<T>::zeros(n);
        e[j] = T::one();
        inv.column_mut(j).assign(&cholesky_solve(l, &e));
    }
    // symmetrize away rounding
    for i in 0..n {
        for j in 0..i {
            let m = (inv[(i, j)] + inv[(j, i)]) / T::lit(2.0);
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    inv
}

/// Columns left unpivoted by a diagonal-pivoted Cholesky of the
/// correlation-scaled Gram matrix, i.e. those within `tol` of the span of
/// the others. Zero columns are always reported.
pub fn dependent_columns(gram: &Array2<f64>, tol: f64) -> Vec<usize> {
    let n = gram.nrows();
    let mut dependent: Vec<usize> = (0..n).filter(|&j| gram[(j, j)] <= 0.0).collect();
    let live: Vec<usize> = (0..n).filter(|j| !dependent.contains(j)).collect();
    let m = live.len();
    let mut a = Array2::from_shape_fn((m, m), |(i, j)| {
        let (p, q) = (live[i], live[j]);
        gram[(p, q)] / (gram[(p, p)] * gram[(q, q)]).sqrt()
    });
    let mut perm: Vec<usize> = (0..m).collect();
    let mut rank = 0;
    for k in 0..m {
        // pivot on the largest remaining diagonal, lowest index on ties
        let mut best = k;
        for i in k + 1..m {
            if a[(i, i)] > a[(best, best)] {
                best = i;
            }
        }
        if a[(best, best)] <= tol {
            break;
        }
        if best != k {
            perm.swap(k, best);
            for j in 0..m {
                a.swap((k, j), (best, j));
            }
            for i in 0..m {
                a.swap((i, k), (i, best));
            }
        }
        let d = a[(k, k)].sqrt();
        a[(k, k)] = d;
        for i in k + 1..m {
            a[(i, k)] /= d;
        }
        for j in k + 1..m {
            for i in j..m {
                let v = a[(i, k)] * a[(j, k)];
                a[(i, j)] -= v;
                if i != j {
                    a[(j, i)] -= v;
                }
            }
        }
        rank += 1;
    }
    dependent.extend(perm[rank..].iter().map(|&i| live[i]));
    dependent.sort_unstable();
    dependent
}
