//! Pearson chi-square tests of independence.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::checked_gamma_ur;

use super::contingency::ContingencyTable;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub yates_applied: bool,
    pub expected_min: f64,
    /// Set when some expected count is below 5.
    pub warning: Option<String>,
}

/// Upper tail `Q(df / 2, x / 2)` of the chi-square distribution.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::Invalid("chi-square df must be >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::Invalid(format!("chi-square statistic must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    checked_gamma_ur(df as f64 / 2.0, x / 2.0)
        .map(|p| p.clamp(0.0, 1.0))
        .map_err(|e| Error::Invalid(format!("chi-square tail: {e}")))
}

/// Expected counts under independence.
pub fn expected_counts(counts: &Array2<u64>) -> Result<Array2<f64>> {
    let (r, c) = counts.dim();
    let rows: Vec<f64> = (0..r).map(|i| counts.row(i).sum() as f64).collect();
    let cols: Vec<f64> = (0..c).map(|j| counts.column(j).sum() as f64).collect();
    if let Some(i) = rows.iter().position(|v| *v == 0.0) {
        return Err(Error::Degenerate(format!("row {i} has zero total")));
    }
    if let Some(j) = cols.iter().position(|v| *v == 0.0) {
        return Err(Error::Degenerate(format!("column {j} has zero total")));
    }
    let total: f64 = rows.iter().sum();
    Ok(Array2::from_shape_fn((r, c), |(i, j)| rows[i] * cols[j] / total))
}

/// Yates' correction is used only when `yates` is set and the table is 2x2.
pub fn chi_square_test(table: &ContingencyTable, yates: bool) -> Result<ChiSquareResult> {
    let (r, c) = table.counts.dim();
    if r < 2 || c < 2 {
        return Err(Error::Degenerate(format!("chi-square needs at least a 2x2 table, got {r}x{c}")));
    }
    let expected = expected_counts(&table.counts)?;
    let yates_applied = yates && r == 2 && c == 2;
    let mut statistic = 0.0;
    for ((i, j), e) in expected.indexed_iter() {
        let o = table.counts[(i, j)] as f64;
        let dev = if yates_applied {
            ((o - e).abs() - 0.5).max(0.0)
        } else {
            o - e
        };
        statistic += dev * dev / e;
    }
    let df = (r - 1) * (c - 1);
    let expected_min = expected.iter().copied().fold(f64::INFINITY, f64::min);
    let warning = (expected_min < 5.0)
        .then(|| format!("smallest expected count {expected_min:.3} < 5; chi-square approximation is rough"));
    Ok(ChiSquareResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df)?,
        yates_applied,
        expected_min,
        warning,
    })
}
