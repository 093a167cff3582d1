//! Cluster-by-category count tables.

use ndarray::Array2;

use crate::cluster::ClusterAssignment;
use crate::error::{Error, Result};

/// A per-patient categorical variable aligned with the cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    pub name: String,
    pub levels: Vec<String>,
    /// Index into `levels` for every patient.
    pub codes: Vec<usize>,
}

impl Categorical {
    /// Levels are kept in the given order; every value must be one of them.
    pub fn new(name: &str, levels: &[&str], values: &[&str]) -> Result<Self> {
        let levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        let codes = values
            .iter()
            .map(|v| {
                levels
                    .iter()
                    .position(|l| l == v)
                    .ok_or_else(|| Error::Invalid(format!("{name}: value {v:?} is not a declared level")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            name: name.to_string(),
            levels,
            codes,
        })
    }

    pub fn from_codes(name: &str, levels: Vec<String>, codes: Vec<usize>) -> Result<Self> {
        if let Some(c) = codes.iter().find(|c| **c >= levels.len()) {
            return Err(Error::Invalid(format!("{name}: level code {c} out of range")));
        }
        Ok(Self {
            name: name.to_string(),
            levels,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContingencyTable {
    pub counts: Array2<u64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl ContingencyTable {
    pub fn unlabeled(counts: Array2<u64>) -> Self {
        let (r, c) = counts.dim();
        Self {
            counts,
            row_labels: (0..r).map(|i| i.to_string()).collect(),
            col_labels: (0..c).map(|j| j.to_string()).collect(),
        }
    }

    /// Drops columns whose total is zero.
    pub fn without_empty_columns(&self) -> Self {
        let keep: Vec<usize> = (0..self.counts.ncols())
            .filter(|&j| self.counts.column(j).sum() > 0)
            .collect();
        let counts = Array2::from_shape_fn((self.counts.nrows(), keep.len()), |(i, j)| self.counts[(i, keep[j])]);
        Self {
            counts,
            row_labels: self.row_labels.clone(),
            col_labels: keep.iter().map(|&j| self.col_labels[j].clone()).collect(),
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }
}

/// Counts clusters (rows) against a variable (columns).
///
/// `restrict` keeps only the two given clusters; `binarize` collapses the
/// variable to `[level, not level]`.
pub fn contingency(
    assignment: &ClusterAssignment,
    variable: &Categorical,
    restrict: Option<(usize, usize)>,
    binarize: Option<&str>,
) -> Result<ContingencyTable> {
    if variable.len() != assignment.labels.len() {
        return Err(Error::Shape(format!(
            "{}: {} values for {} patients",
            variable.name,
            variable.len(),
            assignment.labels.len()
        )));
    }
    let clusters: Vec<usize> = match restrict {
        Some((a, b)) => {
            if a == b || a >= assignment.k || b >= assignment.k {
                return Err(Error::Invalid(format!("bad cluster pair ({a}, {b}) for k={}", assignment.k)));
            }
            vec![a, b]
        }
        None => (0..assignment.k).collect(),
    };
    let (col_labels, column_of): (Vec<String>, Box<dyn Fn(usize) -> usize>) = match binarize {
        Some(level) => {
            let target = variable
                .level_index(level)
                .ok_or_else(|| Error::Invalid(format!("{}: unknown level {level:?}", variable.name)))?;
            (
                vec![level.to_string(), format!("not {level}")],
                Box::new(move |c| usize::from(c != target)),
            )
        }
        None => (variable.levels.clone(), Box::new(|c| c)),
    };
    let mut counts = Array2::<u64>::zeros((clusters.len(), col_labels.len()));
    for (label, code) in assignment.labels.iter().zip(&variable.codes) {
        if let Some(r) = clusters.iter().position(|c| c == label) {
            counts[(r, column_of(*code))] += 1;
        }
    }
    for (r, c) in clusters.iter().enumerate() {
        if counts.row(r).sum() == 0 {
            return Err(Error::Degenerate(format!("cluster {c} is empty")));
        }
    }
    Ok(ContingencyTable {
        counts,
        row_labels: clusters.iter().map(|c| c.to_string()).collect(),
        col_labels,
    })
}
