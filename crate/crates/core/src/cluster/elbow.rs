//! SSE-versus-k curves and chord-distance elbow detection.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_best, KMeansConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    /// `(k, sse)` in ascending, consecutive `k`.
    pub points: Vec<(usize, f64)>,
    pub chosen_k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElbowChoice {
    pub k: usize,
    /// Perpendicular distance of every point to the first-last chord.
    pub distances: Vec<f64>,
    pub warning: Option<String>,
}

/// Best-of-restarts SSE for each `k` in `kmin..=kmax`.
pub fn elbow_sse_curve<T: Real>(
    x: ArrayView2<'_, T>,
    kmin: usize,
    kmax: usize,
    config: &KMeansConfig,
) -> Result<ElbowCurve> {
    if kmin == 0 || kmin > kmax {
        return Err(Error::Config(format!("elbow range must satisfy 1 <= kmin <= kmax, got {kmin}..{kmax}")));
    }
    if kmax > x.nrows() {
        return Err(Error::Invalid(format!("kmax={kmax} exceeds N={}", x.nrows())));
    }
    let mut points = Vec::with_capacity(kmax - kmin + 1);
    for k in kmin..=kmax {
        let best = kmeans_best(x, k, config)?;
        log::info!("elbow k={k} sse={:.4}", best.sse.as_f64());
        points.push((k, best.sse.as_f64()));
    }
    Ok(ElbowCurve { points, chosen_k: None })
}

pub fn detect_elbow(curve: &ElbowCurve) -> Result<ElbowChoice> {
    let pts = &curve.points;
    if pts.len() < 3 {
        return Err(Error::Invalid(format!("elbow detection needs >= 3 points, got {}", pts.len())));
    }
    if pts.windows(2).any(|w| w[1].0 != w[0].0 + 1) || pts.iter().any(|p| !(p.1 >= 0.0)) {
        return Err(Error::Invalid("elbow curve needs consecutive k and nonnegative SSE".into()));
    }
    let (x1, y1) = (pts[0].0 as f64, pts[0].1);
    let (x2, y2) = (pts[pts.len() - 1].0 as f64, pts[pts.len() - 1].1);
    let (dx, dy) = (x2 - x1, y2 - y1);
    let len = dx.hypot(dy);
    let distances: Vec<f64> = pts
        .iter()
        .map(|&(k, y)| (dx * (y1 - y) - (x1 - k as f64) * dy).abs() / len)
        .collect();
    let interior = &distances[1..distances.len() - 1];
    let max = interior.iter().copied().fold(0.0, f64::max);
    // relative slack so that y-rescaling cannot flip an exact tie
    let slack = max * 1e-12;
    let pos = interior.iter().position(|d| *d >= max - slack).unwrap();
    let k = pts[pos + 1].0;
    let scale = dx * dy.abs().max(y1.abs()).max(f64::MIN_POSITIVE);
    let warning = (max * len <= 1e-9 * scale).then(|| format!("no clear elbow; defaulting to k={k}"));
    Ok(ElbowChoice { k, distances, warning })
}
