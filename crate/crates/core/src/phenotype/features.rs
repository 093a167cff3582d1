use std::fmt;
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PhecodeMap, PhenotypeVocabulary};
use crate::artifact::{write_csv, Provenance};
use crate::cohort::{open_reader, Cohort};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Aggregate,
    Temporal,
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::Aggregate => "aggregate",
            Layout::Temporal => "temporal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnLabel {
    pub phecode: String,
    pub slot: Option<usize>,
}

impl fmt::Display for ColumnLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Some(s) => write!(f, "{}_t{}", self.phecode, s),
            None => f.write_str(&self.phecode),
        }
    }
}

impl ColumnLabel {
    fn parse(s: &str) -> Result<Self> {
        match s.rsplit_once("_t") {
            Some((ph, slot)) => Ok(Self {
                phecode: ph.to_string(),
                slot: Some(
                    slot.parse()
                        .map_err(|_| Error::Invalid(format!("bad column label {s:?}")))?,
                ),
            }),
            None => Ok(Self {
                phecode: s.to_string(),
                slot: None,
            }),
        }
    }
}

/// Binary patient-by-condition matrix. Temporal columns are phecode-major,
/// slot-minor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMatrix {
    pub patient_ids: Vec<String>,
    pub layout: Layout,
    pub phecodes: Vec<String>,
    /// Columns per phecode: the cohort's slot count, or 1 when aggregated.
    pub slot_count: usize,
    pub columns: Vec<ColumnLabel>,
    pub values: Array2<u8>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_index(&self, phecode_idx: usize, slot: usize) -> usize {
        match self.layout {
            Layout::Aggregate => phecode_idx,
            Layout::Temporal => phecode_idx * self.slot_count + (slot - 1),
        }
    }

    pub fn to_real<T: Real>(&self) -> Array2<T> {
        self.values.mapv(|v| if v == 0 { T::zero() } else { T::one() })
    }

    /// Element-wise OR over slots; identity for aggregate matrices.
    pub fn collapse_slots(&self) -> FeatureMatrix {
        if self.layout == Layout::Aggregate {
            return self.clone();
        }
        let v = self.phecodes.len();
        let mut values = Array2::<u8>::zeros((self.n_rows(), v));
        for (i, row) in self.values.axis_iter(Axis(0)).enumerate() {
            for j in 0..v {
                values[(i, j)] = (1..=self.slot_count)
                    .map(|s| row[self.column_index(j, s)])
                    .max()
                    .unwrap_or(0);
            }
        }
        FeatureMatrix {
            patient_ids: self.patient_ids.clone(),
            layout: Layout::Aggregate,
            phecodes: self.phecodes.clone(),
            slot_count: 1,
            columns: aggregate_columns(&self.phecodes),
            values,
        }
    }

    fn check_rows_nonzero(&self) -> Result<()> {
        for (i, row) in self.values.axis_iter(Axis(0)).enumerate() {
            if row.iter().all(|v| *v == 0) {
                return Err(Error::Invalid(format!(
                    "patient {} has no vocabulary condition in any timeslot",
                    self.patient_ids[i]
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path, provenance: Option<&Provenance>) -> Result<usize> {
        let mut header = vec!["patient_id".to_string()];
        header.extend(self.columns.iter().map(|c| c.to_string()));
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = self
            .values
            .axis_iter(Axis(0))
            .zip(&self.patient_ids)
            .map(|(row, id)| {
                std::iter::once(id.clone())
                    .chain(row.iter().map(|v| v.to_string()))
                    .collect::<Vec<_>>()
            });
        write_csv(path, provenance, &header_ref, rows)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = open_reader(path)?;
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        if headers.get(0) != Some("patient_id") {
            return Err(Error::MissingColumns {
                path: path.to_path_buf(),
                missing: vec!["patient_id".into()],
            });
        }
        let columns: Vec<ColumnLabel> = headers
            .iter()
            .skip(1)
            .map(ColumnLabel::parse)
            .collect::<Result<_>>()?;
        let temporal = columns.first().is_some_and(|c| c.slot.is_some());
        let slot_count = columns.iter().filter_map(|c| c.slot).max().unwrap_or(1);
        let mut phecodes: Vec<String> = Vec::new();
        for c in &columns {
            if phecodes.last() != Some(&c.phecode) {
                phecodes.push(c.phecode.clone());
            }
        }
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != columns.len() + 1 {
                return Err(Error::BadRecord {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("expected {} fields, got {}", columns.len() + 1, rec.len()),
                });
            }
            ids.push(rec[0].to_string());
            for v in rec.iter().skip(1) {
                data.push(match v {
                    "0" => 0u8,
                    "1" => 1u8,
                    other => {
                        return Err(Error::BadRecord {
                            path: path.to_path_buf(),
                            line,
                            reason: format!("non-binary value {other:?}"),
                        })
                    }
                });
            }
        }
        let values = Array2::from_shape_vec((ids.len(), columns.len()), data)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(FeatureMatrix {
            patient_ids: ids,
            layout: if temporal { Layout::Temporal } else { Layout::Aggregate },
            phecodes,
            slot_count,
            columns,
            values,
        })
    }
}

fn aggregate_columns(phecodes: &[String]) -> Vec<ColumnLabel> {
    phecodes
        .iter()
        .map(|p| ColumnLabel {
            phecode: p.clone(),
            slot: None,
        })
        .collect()
}

fn build(cohort: &Cohort, vocabulary: &PhenotypeVocabulary, map: &PhecodeMap, layout: Layout) -> Result<FeatureMatrix> {
    let phecodes: Vec<String> = vocabulary.phecodes().map(str::to_string).collect();
    let s = cohort.slot_count;
    let columns = match layout {
        Layout::Aggregate => aggregate_columns(&phecodes),
        Layout::Temporal => phecodes
            .iter()
            .flat_map(|p| {
                (1..=s).map(move |slot| ColumnLabel {
                    phecode: p.clone(),
                    slot: Some(slot),
                })
            })
            .collect(),
    };
    let width = columns.len();
    let rows: Vec<Vec<u8>> = cohort
        .patients
        .par_iter()
        .map(|p| {
            let mut row = vec![0u8; width];
            for e in cohort.events(&p.patient_id) {
                let Some((ph, _)) = map.lookup(&e.code, e.system) else {
                    continue;
                };
                if let Some(j) = vocabulary.position(ph) {
                    let col = match layout {
                        Layout::Aggregate => j,
                        Layout::Temporal => j * s + (e.slot - 1),
                    };
                    row[col] = 1;
                }
            }
            row
        })
        .collect();
    let values = Array2::from_shape_vec((rows.len(), width), rows.concat())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let m = FeatureMatrix {
        patient_ids: cohort.patient_ids(),
        layout,
        phecodes,
        slot_count: if layout == Layout::Aggregate { 1 } else { s },
        columns,
        values,
    };
    m.check_rows_nonzero()?;
    Ok(m)
}

/// Entry `(i, j)` is 1 iff patient `i` has phecode `j` in any slot.
pub fn build_aggregate_matrix(
    cohort: &Cohort,
    vocabulary: &PhenotypeVocabulary,
    map: &PhecodeMap,
) -> Result<FeatureMatrix> {
    build(cohort, vocabulary, map, Layout::Aggregate)
}

/// Entry `(i, (j, s))` is 1 iff patient `i` has phecode `j` in slot `s`.
pub fn build_temporal_matrix(
    cohort: &Cohort,
    vocabulary: &PhenotypeVocabulary,
    map: &PhecodeMap,
) -> Result<FeatureMatrix> {
    build(cohort, vocabulary, map, Layout::Temporal)
}
