//! K-Means with k-means++ seeding and Lloyd iterations.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Relative to the mean per-feature variance, compared against the
    /// summed squared centroid shift.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-4,
            seed: 0,
        }
    }
}

impl KMeansConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("kmeans restarts must be >= 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("kmeans max_iter must be >= 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config(format!("kmeans tol must be >= 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// One converged Lloyd run.
#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult<T = f64> {
    pub labels: Vec<usize>,
    pub centroids: Array2<T>,
    pub sse: T,
    pub iterations: usize,
    pub converged: bool,
    /// SSE after every assignment step, the last entry equal to `sse`.
    pub sse_history: Vec<T>,
    pub restart: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub sse: f64,
    pub seed: u64,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x - *y;
            d * d
        })
        .sum()
}

fn row<T: Real>(x: &ArrayView2<'_, T>, i: usize) -> Vec<T> {
    x.row(i).to_vec()
}

/// k-means++ seeding; draws are resolved to the lowest index on ties.
fn plus_plus<T: Real>(x: &ArrayView2<'_, T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = x.nrows();
    let rows: Vec<Vec<T>> = (0..n).map(|i| row(x, i)).collect();
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    let mut centers = vec![rows[first].clone()];
    let mut d2: Vec<T> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: T = d2.iter().copied().sum();
        let pick = if total > T::zero() {
            let u = T::lit(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = None;
            for (i, d) in d2.iter().enumerate() {
                acc += *d;
                if *d > T::zero() && acc > u {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave u at the very top of the cumulative sum
            pick.unwrap_or_else(|| d2.iter().rposition(|d| *d > T::zero()).unwrap())
        } else {
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(pick);
        centers.push(rows[pick].clone());
        let c = centers.last().unwrap();
        for (d, r) in d2.iter_mut().zip(&rows) {
            let nd = sq_dist(r, c);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centers
}

fn assign<T: Real>(rows: &[Vec<T>], centers: &[Vec<T>], labels: &mut [usize], dists: &mut [T]) -> T {
    let mut sse = T::zero();
    for (i, r) in rows.iter().enumerate() {
        let mut best = 0;
        let mut bd = sq_dist(r, &centers[0]);
        for (c, center) in centers.iter().enumerate().skip(1) {
            let d = sq_dist(r, center);
            if d < bd {
                bd = d;
                best = c;
            }
        }
        labels[i] = best;
        dists[i] = bd;
        sse += bd;
    }
    sse
}

/// Absolute shift tolerance: `tol` times the mean per-feature variance.
fn absolute_tol<T: Real>(x: &ArrayView2<'_, T>, tol: f64) -> T {
    let n = T::from_usize_lossy(x.nrows());
    let d = x.ncols();
    if d == 0 {
        return T::zero();
    }
    let mut total = T::zero();
    for col in x.axis_iter(Axis(1)) {
        let mean = col.iter().copied().sum::<T>() / n;
        total += col.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
    }
    total / T::from_usize_lossy(d) * T::lit(tol)
}

/// A single seeded run: k-means++ then Lloyd until the summed squared
/// centroid shift falls to `tol_abs` or `max_iter` is hit.
pub fn lloyd<T: Real>(
    x: ArrayView2<'_, T>,
    k: usize,
    max_iter: usize,
    tol_abs: T,
    rng: &mut ChaCha8Rng,
) -> Result<KMeansResult<T>> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("kmeans needs 1 <= k <= N, got k={k}, N={n}")));
    }
    let d = x.ncols();
    let rows: Vec<Vec<T>> = (0..n).map(|i| row(&x, i)).collect();
    let mut centers = plus_plus(&x, k, rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![T::zero(); n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut sse = assign(&rows, &centers, &mut labels, &mut dists);
    history.push(sse);
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![T::zero(); d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += *v;
            }
        }
        let mut shift = T::zero();
        let mut taken: Vec<usize> = Vec::new();
        for c in 0..k {
            let next: Vec<T> = if counts[c] > 0 {
                let cnt = T::from_usize_lossy(counts[c]);
                sums[c].iter().map(|s| *s / cnt).collect()
            } else {
                // empty cluster: move it onto the point farthest from its centroid
                let mut far = None;
                for i in 0..n {
                    if taken.contains(&i) {
                        continue;
                    }
                    match far {
                        None => far = Some(i),
                        Some(f) if dists[i] > dists[f] => far = Some(i),
                        _ => {}
                    }
                }
                let f = far.unwrap_or(0);
                taken.push(f);
                dists[f] = T::zero();
                rows[f].clone()
            };
            shift += sq_dist(&next, &centers[c]);
            centers[c] = next;
        }
        sse = assign(&rows, &centers, &mut labels, &mut dists);
        history.push(sse);
        if shift <= tol_abs {
            converged = true;
            break;
        }
    }
    let mut centroids = Array2::<T>::zeros((k, d));
    for (c, center) in centers.iter().enumerate() {
        for (j, v) in center.iter().enumerate() {
            centroids[(c, j)] = *v;
        }
    }
    Ok(KMeansResult {
        labels,
        centroids,
        sse,
        iterations,
        converged,
        sse_history: history,
        restart: 0,
    })
}

/// RNG for a given restart: one ChaCha stream per restart so restarts can
/// run concurrently without changing results.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// All restarts, in restart order.
pub fn kmeans_runs<T: Real>(x: ArrayView2<'_, T>, k: usize, config: &KMeansConfig) -> Result<Vec<KMeansResult<T>>> {
    config.validate()?;
    let tol_abs = absolute_tol(&x, config.tol);
    (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = restart_rng(config.seed, r);
            lloyd(x, k, config.max_iter, tol_abs, &mut rng).map(|mut res| {
                res.restart = r;
                res
            })
        })
        .collect()
}

/// Best restart by SSE, lowest restart index on ties.
pub fn kmeans_best<T: Real>(x: ArrayView2<'_, T>, k: usize, config: &KMeansConfig) -> Result<KMeansResult<T>> {
    let runs = kmeans_runs(x, k, config)?;
    let mut best: Option<KMeansResult<T>> = None;
    for run in runs {
        if !run.converged {
            log::debug!("kmeans restart {} hit max_iter={}", run.restart, config.max_iter);
        }
        match &best {
            Some(b) if run.sse >= b.sse => {}
            _ => best = Some(run),
        }
    }
    Ok(best.expect("restarts >= 1"))
}

pub fn kmeans<T: Real>(x: ArrayView2<'_, T>, k: usize, config: &KMeansConfig) -> Result<ClusterAssignment> {
    let best = kmeans_best(x, k, config)?;
    Ok(ClusterAssignment {
        labels: best.labels,
        k,
        sse: best.sse.as_f64(),
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use ndarray::arr2;
    use proptest::prelude::*;

    use super::*;

    fn brute_force_sse(points: &[[f64; 2]], k: usize) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let labels: Vec<usize> = (0..n)
                .map(|_| {
                    let l = c % k;
                    c /= k;
                    l
                })
                .collect();
            if (0..k).any(|g| !labels.contains(&g)) {
                continue;
            }
            let mut sse = 0.0;
            for g in 0..k {
                let members: Vec<&[f64; 2]> = points.iter().zip(&labels).filter(|(_, l)| **l == g).map(|(p, _)| p).collect();
                let m = members.len() as f64;
                let cx = members.iter().map(|p| p[0]).sum::<f64>() / m;
                let cy = members.iter().map(|p| p[1]).sum::<f64>() / m;
                sse += members.iter().map(|p| (p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sum::<f64>();
            }
            best = best.min(sse);
        }
        best
    }

    #[test]
    fn four_points_two_clusters() {
        let pts = [[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let x = arr2(&pts);
        let a = kmeans(x.view(), 2, &KMeansConfig::default()).unwrap();
        assert_eq!(a.labels[0], a.labels[1]);
        assert_eq!(a.labels[2], a.labels[3]);
        assert_ne!(a.labels[0], a.labels[2]);
        assert!((a.sse - 1.0).abs() < 1e-12);
        assert!((brute_force_sse(&pts, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k1_is_total_scatter() {
        let x = arr2(&[[1.0, 2.0], [3.0, 0.0], [5.0, 7.0], [0.0, 1.0], [2.0, 2.0]]);
        let res = kmeans_best(x.view(), 1, &KMeansConfig::default()).unwrap();
        let means = x.mean_axis(Axis(0)).unwrap();
        let scatter: f64 = x.rows().into_iter().map(|r| (&r - &means).mapv(|v| v * v).sum()).sum();
        assert!((res.sse - scatter).abs() < 1e-12);
        for j in 0..2 {
            assert!((res.centroids[(0, j)] - means[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_gives_zero() {
        let x = arr2(&[[0.0, 0.0], [1.0, 0.0], [0.0, 3.0], [2.0, 2.0], [9.0, 1.0]]);
        let a = kmeans(x.view(), 5, &KMeansConfig::default()).unwrap();
        assert_eq!(a.sse, 0.0);
        let mut sorted = a.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let x = arr2(&[[0.0], [1.0]]);
        assert!(kmeans(x.view(), 3, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn best_is_no_worse_than_any_restart() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((60, 3), |_| rng.random::<f64>());
        let cfg = KMeansConfig { seed: 9, ..Default::default() };
        let runs = kmeans_runs(x.view(), 4, &cfg).unwrap();
        let best = kmeans_best(x.view(), 4, &cfg).unwrap();
        assert!(runs.iter().all(|r| best.sse <= r.sse));
    }

    #[test]
    fn lloyd_is_monotone_on_100_instances() {
        for inst in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(inst);
            let n = rng.random_range(10..60);
            let d = rng.random_range(1..6);
            let k = rng.random_range(1..8).min(n);
            let x = Array2::from_shape_fn((n, d), |_| rng.random_range(0..3) as f64 + rng.random::<f64>() * 0.1);
            let res = lloyd(x.view(), k, 300, 0.0, &mut rng).unwrap();
            for w in res.sse_history.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "instance {inst}: {:?}", res.sse_history);
            }
        }
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((80, 4), |_| rng.random::<f64>());
        let cfg = KMeansConfig { seed: 42, ..Default::default() };
        let a = kmeans(x.view(), 3, &cfg).unwrap();
        let b = kmeans(x.view(), 3, &cfg).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn labels_in_range(seed in 0u64..1000, n in 3usize..30, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((n, 2), |_| rng.random::<f64>());
            let a = kmeans(x.view(), k, &KMeansConfig { seed, restarts: 2, ..Default::default() }).unwrap();
            prop_assert_eq!(a.labels.len(), n);
            prop_assert!(a.labels.iter().all(|l| *l < k));
            prop_assert_eq!(a.sizes().iter().sum::<usize>(), n);
            prop_assert!(a.sse >= 0.0);
        }
    }
}
