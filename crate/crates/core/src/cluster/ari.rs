//! Adjusted Rand index between two labelings.

use std::collections::HashMap;

use crate::error::{Error, Result};

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("label lengths differ: {} vs {}", a.len(), b.len())));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((*x, *y)).or_default() += 1;
        *rows.entry(*x).or_default() += 1;
        *cols.entry(*y).or_default() += 1;
    }
    let index: f64 = table.values().map(|n| choose2(*n)).sum();
    let sum_a: f64 = rows.values().map(|n| choose2(*n)).sum();
    let sum_b: f64 = cols.values().map(|n| choose2(*n)).sum();
    let total = choose2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
