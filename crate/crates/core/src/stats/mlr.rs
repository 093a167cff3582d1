//! Multinomial logistic regression with HC0 robust standard errors.
//!
//! The reference cluster's coefficients are pinned at zero; the remaining
//! `(K - 1) x p` block is fitted by full Newton steps with step halving.

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::contingency::Categorical;
use super::linalg::{cholesky, cholesky_inverse, cholesky_solve, dependent_columns};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const INTERCEPT: &str = "Constant";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlrOptions {
    pub max_iter: usize,
    /// Target for the gradient infinity norm. The effective target is never
    /// below `100 * eps * n` of the working scalar type.
    pub grad_tol: f64,
    /// Any fitted `|coefficient|` above this is reported as separation.
    pub separation_threshold: f64,
    pub collinearity_tol: f64,
}

impl Default for MlrOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            grad_tol: 1e-8,
            separation_threshold: 20.0,
            collinearity_tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlrFit<T = f64> {
    pub predictors: Vec<String>,
    /// Cluster of each coefficient row (all clusters except the reference).
    pub classes: Vec<usize>,
    pub class_sizes: Vec<usize>,
    pub reference_cluster: usize,
    pub coefficients: Array2<T>,
    pub robust_se: Array2<T>,
    pub rrr: Array2<T>,
    pub z: Array2<T>,
    pub p_values: Array2<T>,
    pub log_likelihood: T,
    pub aic: T,
    pub n_obs: usize,
    pub iterations: usize,
    pub gradient_norm: T,
}

impl<T: Real> MlrFit<T> {
    pub fn predict_proba(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        class_probabilities(&self.coefficients, x, self.reference_cluster)
    }
}

fn check_shapes<T: Real>(beta: &Array2<T>, x: &ArrayView2<'_, T>, y: Option<&[usize]>, reference: usize) -> Result<usize> {
    let k = beta.nrows() + 1;
    if beta.ncols() != x.ncols() {
        return Err(Error::Shape(format!("beta has {} columns, design has {}", beta.ncols(), x.ncols())));
    }
    if reference >= k {
        return Err(Error::Shape(format!("reference {reference} out of range for {k} classes")));
    }
    if let Some(y) = y {
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.nrows())));
        }
        if let Some(l) = y.iter().find(|l| **l >= k) {
            return Err(Error::Shape(format!("label {l} out of range for {k} classes")));
        }
    }
    Ok(k)
}

/// Coefficient row for class `c`, or `None` for the reference.
fn beta_row(c: usize, reference: usize) -> Option<usize> {
    match c.cmp(&reference) {
        std::cmp::Ordering::Less => Some(c),
        std::cmp::Ordering::Equal => None,
        std::cmp::Ordering::Greater => Some(c - 1),
    }
}

fn row_probs<T: Real>(beta: &Array2<T>, x: &[T], reference: usize, out: &mut [T]) {
    let k = out.len();
    for (c, o) in out.iter_mut().enumerate() {
        *o = match beta_row(c, reference) {
            Some(r) => beta.row(r).iter().zip(x).map(|(b, v)| *b * *v).sum(),
            None => T::zero(),
        };
    }
    let m = out.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for o in out.iter_mut() {
        *o = (*o - m).exp();
        s += *o;
    }
    for o in out.iter_mut().take(k) {
        *o /= s;
    }
}

/// `N x K` fitted probabilities.
pub fn class_probabilities<T: Real>(beta: &Array2<T>, x: ArrayView2<'_, T>, reference: usize) -> Result<Array2<T>> {
    let k = check_shapes(beta, &x, None, reference)?;
    let mut p = Array2::<T>::zeros((x.nrows(), k));
    let mut buf = vec![T::zero(); k];
    for (i, row) in x.rows().into_iter().enumerate() {
        row_probs(beta, &row.to_vec(), reference, &mut buf);
        for c in 0..k {
            p[(i, c)] = buf[c];
        }
    }
    Ok(p)
}

pub fn log_likelihood<T: Real>(beta: &Array2<T>, x: ArrayView2<'_, T>, y: &[usize], reference: usize) -> Result<T> {
    check_shapes(beta, &x, Some(y), reference)?;
    Ok(accumulate(beta, &x, y, reference, false).ll)
}

/// Analytic gradient of the log-likelihood, `(K - 1) x p`.
pub fn mlr_gradient<T: Real>(beta: &Array2<T>, x: ArrayView2<'_, T>, y: &[usize], reference: usize) -> Result<Array2<T>> {
    check_shapes(beta, &x, Some(y), reference)?;
    let acc = accumulate(beta, &x, y, reference, false);
    Array2::from_shape_vec(beta.dim(), acc.grad.to_vec()).map_err(|e| Error::Shape(e.to_string()))
}

struct Accumulated<T> {
    ll: T,
    grad: Array1<T>,
    /// Observed information, or the score outer-product sum when requested.
    matrix: Option<Array2<T>>,
    outer: Option<Array2<T>>,
}

const CHUNK: usize = 512;

/// One pass over the data. Chunks are reduced in order so results do not
/// depend on the thread count.
fn accumulate<T: Real>(beta: &Array2<T>, x: &ArrayView2<'_, T>, y: &[usize], reference: usize, second_order: bool) -> Accumulated<T> {
    let (km1, p) = beta.dim();
    let k = km1 + 1;
    let m = km1 * p;
    let n = x.nrows();
    let parts: Vec<Accumulated<T>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut ll = T::zero();
            let mut grad = Array1::<T>::zeros(m);
            let mut info = second_order.then(|| Array2::<T>::zeros((m, m)));
            let mut outer = second_order.then(|| Array2::<T>::zeros((m, m)));
            let mut probs = vec![T::zero(); k];
            let mut score = vec![T::zero(); m];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let xi = x.row(i).to_vec();
                row_probs(beta, &xi, reference, &mut probs);
                ll += probs[y[i]].ln();
                for c in 0..k {
                    let Some(r) = beta_row(c, reference) else { continue };
                    let resid = if y[i] == c { T::one() } else { T::zero() } - probs[c];
                    for j in 0..p {
                        score[r * p + j] = resid * xi[j];
                    }
                }
                for (g, s) in grad.iter_mut().zip(&score) {
                    *g += *s;
                }
                if let (Some(info), Some(outer)) = (info.as_mut(), outer.as_mut()) {
                    let nonref: Vec<(usize, T)> = (0..k).filter_map(|c| beta_row(c, reference).map(|r| (r, probs[c]))).collect();
                    for &(a, pa) in &nonref {
                        for &(b, pb) in &nonref {
                            let w = if a == b { pa * (T::one() - pa) } else { -pa * pb };
                            for j in 0..p {
                                let wx = w * xi[j];
                                for l in 0..p {
                                    info[(a * p + j, b * p + l)] += wx * xi[l];
                                }
                            }
                        }
                    }
                    for u in 0..m {
                        for v in 0..m {
                            outer[(u, v)] += score[u] * score[v];
                        }
                    }
                }
            }
            Accumulated {
                ll,
                grad,
                matrix: info,
                outer,
            }
        })
        .collect();
    let mut total = Accumulated {
        ll: T::zero(),
        grad: Array1::zeros(m),
        matrix: second_order.then(|| Array2::zeros((m, m))),
        outer: second_order.then(|| Array2::zeros((m, m))),
    };
    for part in parts {
        total.ll += part.ll;
        total.grad += &part.grad;
        if let (Some(t), Some(p)) = (total.matrix.as_mut(), part.matrix) {
            *t += &p;
        }
        if let (Some(t), Some(p)) = (total.outer.as_mut(), part.outer) {
            *t += &p;
        }
    }
    total
}

fn inf_norm<T: Real>(v: &Array1<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Reports design columns that are linearly dependent on the others.
pub fn check_full_rank<T: Real>(x: ArrayView2<'_, T>, names: &[String], tol: f64) -> Result<()> {
    let xf = x.mapv(|v| v.as_f64());
    let dep = dependent_columns(&xf.t().dot(&xf), tol);
    if dep.is_empty() {
        Ok(())
    } else {
        Err(Error::Collinear(dep.into_iter().map(|j| names[j].clone()).collect()))
    }
}

pub fn fit_multinomial_logit<T: Real>(
    x: ArrayView2<'_, T>,
    names: &[String],
    y: &[usize],
    reference: usize,
    options: &MlrOptions,
) -> Result<MlrFit<T>> {
    let (n, p) = x.dim();
    if names.len() != p {
        return Err(Error::Shape(format!("{} names for {p} design columns", names.len())));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", y.len())));
    }
    let k = y.iter().copied().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::Invalid("multinomial logit needs at least two clusters".into()));
    }
    if reference >= k {
        return Err(Error::Invalid(format!("reference cluster {reference} not among labels 0..{k}")));
    }
    let mut class_sizes = vec![0usize; k];
    for &l in y {
        class_sizes[l] += 1;
    }
    if let Some(c) = class_sizes.iter().position(|s| *s == 0) {
        return Err(Error::Degenerate(format!("cluster {c} has no observations")));
    }
    check_full_rank(x, names, options.collinearity_tol)?;

    let m = (k - 1) * p;
    let tol = T::lit(options.grad_tol).max(T::lit(100.0) * T::epsilon() * T::from_usize_lossy(n));
    let mut beta = Array2::<T>::zeros((k - 1, p));
    let mut acc = accumulate(&beta, &x, y, reference, true);
    let mut iterations = 0;
    let mut grad_norm = inf_norm(&acc.grad);
    while grad_norm > tol {
        if iterations >= options.max_iter {
            check_separation(&beta, names, reference, options)?;
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm: grad_norm.as_f64(),
            });
        }
        iterations += 1;
        let info = acc.matrix.as_ref().unwrap();
        let l = cholesky(info).ok_or_else(|| {
            Error::Degenerate("information matrix is not positive definite (separation or empty cells)".into())
        })?;
        let step = cholesky_solve(&l, &acc.grad);
        let step = Array2::from_shape_vec((k - 1, p), step.to_vec()).unwrap();
        let mut t = T::one();
        let mut accepted = None;
        // near the optimum a full step gains less than the rounding in ll
        let slack = T::lit(64.0) * T::epsilon() * acc.ll.abs().max(T::one());
        for _ in 0..40 {
            let trial = &beta + &step.mapv(|s| s * t);
            let ll = accumulate(&trial, &x, y, reference, false).ll;
            if ll >= acc.ll - slack {
                accepted = Some(trial);
                break;
            }
            t /= T::lit(2.0);
        }
        let Some(next) = accepted else {
            log::warn!("multinomial logit: step halving stalled at gradient norm {grad_norm:e}");
            check_separation(&beta, names, reference, options)?;
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm: grad_norm.as_f64(),
            });
        };
        beta = next;
        acc = accumulate(&beta, &x, y, reference, true);
        grad_norm = inf_norm(&acc.grad);
        log::debug!("mlr iter {iterations}: ll={:.6} |g|={grad_norm:e}", acc.ll.as_f64());
    }
    check_separation(&beta, names, reference, options)?;

    let info = acc.matrix.as_ref().unwrap();
    let l = cholesky(info)
        .ok_or_else(|| Error::Degenerate("information matrix is not positive definite at the optimum".into()))?;
    let inv = cholesky_inverse(&l);
    let cov = inv.dot(acc.outer.as_ref().unwrap()).dot(&inv);
    let se = Array2::from_shape_fn((k - 1, p), |(r, j)| cov[(r * p + j, r * p + j)].max(T::zero()).sqrt());
    let z = Array2::from_shape_fn((k - 1, p), |(r, j)| beta[(r, j)] / se[(r, j)]);
    let p_values = z.mapv(|v| T::lit(erfc(v.as_f64().abs() / std::f64::consts::SQRT_2)));
    debug_assert_eq!(m, cov.nrows());
    Ok(MlrFit {
        predictors: names.to_vec(),
        classes: (0..k).filter(|c| *c != reference).collect(),
        class_sizes,
        reference_cluster: reference,
        rrr: beta.mapv(|b| b.exp()),
        aic: T::lit(2.0) * T::from_usize_lossy(m) - T::lit(2.0) * acc.ll,
        coefficients: beta,
        robust_se: se,
        z,
        p_values,
        log_likelihood: acc.ll,
        n_obs: n,
        iterations,
        gradient_norm: grad_norm,
    })
}

fn check_separation<T: Real>(beta: &Array2<T>, names: &[String], reference: usize, options: &MlrOptions) -> Result<()> {
    let k = beta.nrows() + 1;
    let classes: Vec<usize> = (0..k).filter(|c| *c != reference).collect();
    for ((r, j), b) in beta.indexed_iter() {
        let v = b.as_f64();
        if v.abs() > options.separation_threshold {
            return Err(Error::Separation {
                name: format!("cluster {}: {}", classes[r], names[j]),
                value: v,
            });
        }
    }
    Ok(())
}

/// A categorical predictor expanded to indicators against `reference`.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPredictor {
    pub variable: Categorical,
    pub reference: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignGroup {
    pub predictor: String,
    pub reference: String,
    /// `(design column, level)` pairs.
    pub columns: Vec<(usize, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Design<T = f64> {
    pub x: Array2<T>,
    pub names: Vec<String>,
    pub groups: Vec<DesignGroup>,
    /// Levels dropped because no observation takes them.
    pub dropped: Vec<String>,
}

/// Indicator columns for every present non-reference level, then the
/// intercept as the last column.
pub fn build_design<T: Real>(predictors: &[CategoricalPredictor]) -> Result<Design<T>> {
    let n = predictors.first().map_or(0, |p| p.variable.len());
    let mut columns: Vec<Vec<T>> = Vec::new();
    let mut names = Vec::new();
    let mut groups = Vec::new();
    let mut dropped = Vec::new();
    for pred in predictors {
        let v = &pred.variable;
        if v.len() != n {
            return Err(Error::Shape(format!("{}: {} values, expected {n}", v.name, v.len())));
        }
        let r = v
            .level_index(&pred.reference)
            .ok_or_else(|| Error::Config(format!("{}: reference level {:?} not declared", v.name, pred.reference)))?;
        let mut counts = vec![0usize; v.levels.len()];
        for &c in &v.codes {
            counts[c] += 1;
        }
        if counts[r] == 0 {
            return Err(Error::Invalid(format!("{}: reference level {:?} has no observations", v.name, pred.reference)));
        }
        let mut group = DesignGroup {
            predictor: v.name.clone(),
            reference: pred.reference.clone(),
            columns: Vec::new(),
        };
        for (li, level) in v.levels.iter().enumerate() {
            if li == r {
                continue;
            }
            if counts[li] == 0 {
                dropped.push(format!("{}:{}", v.name, level));
                continue;
            }
            group.columns.push((columns.len(), level.clone()));
            names.push(format!("{}:{}", v.name, level));
            columns.push(v.codes.iter().map(|&c| if c == li { T::one() } else { T::zero() }).collect());
        }
        groups.push(group);
    }
    names.push(INTERCEPT.to_string());
    columns.push(vec![T::one(); n]);
    let p = columns.len();
    let x = Array2::from_shape_fn((n, p), |(i, j)| columns[j][i]);
    Ok(Design { x, names, groups, dropped })
}
