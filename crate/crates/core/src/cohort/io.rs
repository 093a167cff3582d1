//! CSV ingestion of the four CDM-like input tables.

use std::collections::HashSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use csv::StringRecord;
use serde::{Deserialize, Serialize};

use super::types::{CodeSystem, DeathRecord, DiagnosisEvent, PatientRecord, PrescriptionEvent};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TablePaths {
    pub demographics: PathBuf,
    pub diagnoses: PathBuf,
    #[serde(default)]
    pub prescriptions: Option<PathBuf>,
    #[serde(default)]
    pub deaths: Option<PathBuf>,
}

/// A row that could not be parsed. Line numbers are 1-based file lines.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub table: String,
    pub line: u64,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct RawTables {
    pub patients: Vec<PatientRecord>,
    pub diagnoses: Vec<DiagnosisEvent>,
    pub prescriptions: Vec<PrescriptionEvent>,
    pub deaths: Vec<DeathRecord>,
    pub rejects: Vec<Reject>,
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Invalid(format!("bad date {s:?}: {e}")))
}

pub(crate) fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Resolves the position of every required column, failing if any is absent.
pub(crate) fn column_indices<const N: usize>(
    path: &Path,
    headers: &StringRecord,
    required: [&str; N],
) -> Result<[usize; N]> {
    let mut idx = [0usize; N];
    let mut missing = Vec::new();
    for (slot, name) in idx.iter_mut().zip(required) {
        match headers.iter().position(|h| h.trim_start_matches('\u{feff}') == name) {
            Some(i) => *slot = i,
            None => missing.push(name.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(idx)
    } else {
        Err(Error::MissingColumns {
            path: path.to_path_buf(),
            missing,
        })
    }
}

fn field<'a>(record: &'a StringRecord, i: usize, name: &str) -> Result<&'a str> {
    match record.get(i) {
        Some(v) if !v.is_empty() => Ok(v),
        Some(_) => Err(Error::Invalid(format!("empty {name}"))),
        None => Err(Error::Invalid(format!("missing {name}"))),
    }
}

/// Reads one table, routing per-row failures into `rejects`.
fn read_table<T, const N: usize>(
    path: &Path,
    table: &str,
    columns: [&str; N],
    parse: impl Fn(&StringRecord, &[usize; N]) -> Result<T>,
) -> Result<(Vec<T>, Vec<Reject>)> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let idx = column_indices(path, &headers, columns)?;
    let mut rows = Vec::new();
    let mut rejects = Vec::new();
    for result in reader.records() {
        let record = match result {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                rejects.push(Reject {
                    table: table.to_string(),
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse(&record, &idx) {
            Ok(row) => rows.push(row),
            Err(e) => rejects.push(Reject {
                table: table.to_string(),
                line,
                reason: match e {
                    Error::Invalid(msg) => msg,
                    other => other.to_string(),
                },
            }),
        }
    }
    Ok((rows, rejects))
}

pub fn read_demographics(path: &Path) -> Result<(Vec<PatientRecord>, Vec<Reject>)> {
    let (rows, mut rejects) = read_table(
        path,
        "demographics",
        ["patient_id", "sex", "race", "birth_date"],
        |r, [id, sex, race, birth]| {
            Ok((
                r.position().map(|p| p.line()).unwrap_or(0),
                PatientRecord {
                    patient_id: field(r, *id, "patient_id")?.to_string(),
                    sex: r.get(*sex).unwrap_or("").parse()?,
                    race: field(r, *race, "race")?.parse()?,
                    birth_date: parse_date(field(r, *birth, "birth_date")?)?,
                    died: false,
                },
            ))
        },
    )?;
    let mut seen = HashSet::new();
    let mut patients = Vec::with_capacity(rows.len());
    for (line, p) in rows {
        if seen.insert(p.patient_id.clone()) {
            patients.push(p);
        } else {
            rejects.push(Reject {
                table: "demographics".into(),
                line,
                reason: format!("duplicate patient_id {:?}", p.patient_id),
            });
        }
    }
    rejects.sort_by_key(|r| r.line);
    Ok((patients, rejects))
}

pub fn read_diagnoses(path: &Path) -> Result<(Vec<DiagnosisEvent>, Vec<Reject>)> {
    read_table(
        path,
        "diagnoses",
        ["patient_id", "code", "system", "date"],
        |r, [id, code, system, date]| {
            Ok(DiagnosisEvent {
                patient_id: field(r, *id, "patient_id")?.to_string(),
                code: field(r, *code, "code")?.to_string(),
                system: field(r, *system, "system")?.parse::<CodeSystem>()?,
                date: parse_date(field(r, *date, "date")?)?,
            })
        },
    )
}

pub fn read_prescriptions(path: &Path) -> Result<(Vec<PrescriptionEvent>, Vec<Reject>)> {
    read_table(
        path,
        "prescriptions",
        ["patient_id", "rxcui", "date"],
        |r, [id, rxcui, date]| {
            Ok(PrescriptionEvent {
                patient_id: field(r, *id, "patient_id")?.to_string(),
                rxcui: field(r, *rxcui, "rxcui")?.to_string(),
                date: parse_date(field(r, *date, "date")?)?,
            })
        },
    )
}

pub fn read_deaths(path: &Path) -> Result<(Vec<DeathRecord>, Vec<Reject>)> {
    read_table(
        path,
        "deaths",
        ["patient_id", "death_date"],
        |r, [id, date]| {
            Ok(DeathRecord {
                patient_id: field(r, *id, "patient_id")?.to_string(),
                death_date: parse_date(field(r, *date, "death_date")?)?,
            })
        },
    )
}

/// Parses all configured tables. Missing files and unusable headers are
/// fatal; individual bad rows end up in [`RawTables::rejects`].
pub fn parse_tables(paths: &TablePaths) -> Result<RawTables> {
    fn optional<T>(
        path: &Option<PathBuf>,
        read: fn(&Path) -> Result<(Vec<T>, Vec<Reject>)>,
    ) -> Result<(Vec<T>, Vec<Reject>)> {
        match path {
            Some(p) => read(p),
            None => Ok((Vec::new(), Vec::new())),
        }
    }

    let ((demo, diag), (rx, deaths)) = rayon::join(
        || {
            rayon::join(
                || read_demographics(&paths.demographics),
                || read_diagnoses(&paths.diagnoses),
            )
        },
        || {
            rayon::join(
                || optional(&paths.prescriptions, read_prescriptions),
                || optional(&paths.deaths, read_deaths),
            )
        },
    );
    let (patients, r1) = demo?;
    let (diagnoses, r2) = diag?;
    let (prescriptions, r3) = rx?;
    let (deaths, r4) = deaths?;
    let rejects = r1.into_iter().chain(r2).chain(r3).chain(r4).collect();
    Ok(RawTables {
        patients,
        diagnoses,
        prescriptions,
        deaths,
        rejects,
    })
}
