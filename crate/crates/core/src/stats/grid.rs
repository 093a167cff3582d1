//! Pairwise and all-clusters chi-square grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chi2::{chi_square_test, ChiSquareResult};
use super::contingency::{contingency, Categorical};
use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};

pub const OMNIBUS_COLUMN: &str = "All-clusters";

/// A variable tested as a whole and, when `per_level` is set, once per level
/// as level-versus-rest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridVariable {
    pub label: String,
    pub variable: Categorical,
    pub per_level: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    /// Continuity correction for 2x2 tables in the pairwise columns.
    pub pairwise_yates: bool,
    /// Continuity correction for 2x2 tables in the all-clusters column.
    pub omnibus_yates: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            pairwise_yates: true,
            omnibus_yates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub column: String,
    pub result: std::result::Result<ChiSquareResult, String>,
}

impl GridCell {
    pub fn p_value(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.p_value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub variable: String,
    pub level: Option<String>,
    pub cells: Vec<GridCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestGrid {
    pub columns: Vec<String>,
    pub rows: Vec<GridRow>,
}

impl TestGrid {
    pub fn row(&self, label: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn pairwise_count(&self) -> usize {
        self.columns.len() - 1
    }
}

pub fn pair_label(a: usize, b: usize) -> String {
    format!("{a} vs. {b}")
}

fn cell(
    assignment: &ClusterAssignment,
    variable: &Categorical,
    pair: Option<(usize, usize)>,
    level: Option<&str>,
    yates: bool,
) -> Result<ChiSquareResult> {
    let mut table = contingency(assignment, variable, pair, level)?;
    if level.is_none() {
        // levels absent from every cluster in scope carry no information
        table = table.without_empty_columns();
    }
    if table.counts.ncols() < 2 {
        return Err(Error::Degenerate(format!("{} takes a single value in scope", variable.name)));
    }
    chi_square_test(&table, yates)
}

pub fn pairwise_test_grid(assignment: &ClusterAssignment, variables: &[GridVariable], options: &GridOptions) -> Result<TestGrid> {
    let k = assignment.k;
    if k < 2 {
        return Err(Error::Invalid(format!("test grid needs k >= 2, got {k}")));
    }
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let mut columns: Vec<String> = pairs.iter().map(|&(a, b)| pair_label(a, b)).collect();
    columns.push(OMNIBUS_COLUMN.to_string());

    let mut specs: Vec<(String, &Categorical, Option<String>)> = Vec::new();
    for v in variables {
        if v.variable.len() != assignment.labels.len() {
            return Err(Error::Shape(format!("{}: {} values for {} patients", v.label, v.variable.len(), assignment.labels.len())));
        }
        specs.push((v.label.clone(), &v.variable, None));
        if v.per_level {
            for l in &v.variable.levels {
                specs.push((l.clone(), &v.variable, Some(l.clone())));
            }
        }
    }
    let rows = specs
        .par_iter()
        .map(|(label, var, level)| {
            let mut cells: Vec<GridCell> = pairs
                .iter()
                .map(|&(a, b)| GridCell {
                    column: pair_label(a, b),
                    result: cell(assignment, var, Some((a, b)), level.as_deref(), options.pairwise_yates)
                        .map_err(|e| e.to_string()),
                })
                .collect();
            cells.push(GridCell {
                column: OMNIBUS_COLUMN.to_string(),
                result: cell(assignment, var, None, level.as_deref(), options.omnibus_yates).map_err(|e| e.to_string()),
            });
            GridRow {
                label: label.clone(),
                variable: var.name.clone(),
                level: level.clone(),
                cells,
            }
        })
        .collect();
    Ok(TestGrid { columns, rows })
}

/// `alpha / m`.
pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    assert!(m >= 1, "need at least one hypothesis");
    alpha / m as f64
}
