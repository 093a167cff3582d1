use std::path::Path;

use serde::{Deserialize, Serialize};

use super::format::{format_p, format_rrr_cell, format_thousands, significance_stars};
use super::{CrossTab, DemographicTable, PrevalenceTable};
use crate::artifact::{fmt_fixed, fmt_real, manifest_entry, write_csv, write_json, ManifestEntry, Provenance};
use crate::cluster::{ClusterAssignment, ElbowCurve};
use crate::drugs::DrugUsageTable;
use crate::error::Result;
use crate::stats::{MlrFit, TestGrid, INTERCEPT};

pub const ASSIGNMENTS_CSV: &str = "assignments.csv";
pub const ELBOW_CSV: &str = "elbow.csv";
pub const STATS_GRID_CSV: &str = "stats_grid.csv";
pub const STATS_GRID_RAW_CSV: &str = "stats_grid_raw.csv";
pub const MLR_CSV: &str = "mlr.csv";
pub const MLR_TABLE_CSV: &str = "mlr_table.csv";
pub const MLR_JSON: &str = "mlr.json";
pub const DRUG_USAGE_CSV: &str = "drug_usage.csv";
pub const DEMOGRAPHICS_CSV: &str = "demographics_by_cluster.csv";
pub const PREVALENCE_AGGREGATE_CSV: &str = "prevalence_aggregate.csv";
pub const PREVALENCE_TEMPORAL_CSV: &str = "prevalence_temporal.csv";
pub const CROSSTAB_CSV: &str = "crosstab.csv";

fn opt_pct(p: Option<f64>) -> String {
    p.map_or_else(|| "NA".to_string(), |v| fmt_fixed(v, 4))
}

/// Splits a design column name `predictor:level` (the intercept has no level).
fn split_term(term: &str) -> (&str, &str) {
    term.split_once(':').unwrap_or((term, ""))
}

pub fn write_assignments(
    path: &Path,
    prov: Option<&Provenance>,
    patient_ids: &[String],
    assignment: &ClusterAssignment,
) -> Result<usize> {
    let rows = patient_ids
        .iter()
        .zip(&assignment.labels)
        .map(|(id, l)| [id.clone(), l.to_string()]);
    write_csv(path, prov, &["patient_id", "cluster"], rows)
}

pub fn write_elbow(path: &Path, prov: Option<&Provenance>, curve: &ElbowCurve) -> Result<usize> {
    let rows = curve.points.iter().map(|(k, sse)| {
        [
            k.to_string(),
            fmt_real(*sse),
            u8::from(curve.chosen_k == Some(*k)).to_string(),
        ]
    });
    write_csv(path, prov, &["k", "sse", "chosen"], rows)
}

/// `names` maps a phecode to its phenotype label.
pub fn write_prevalence(
    path: &Path,
    prov: Option<&Provenance>,
    table: &PrevalenceTable,
    names: &dyn Fn(&str) -> String,
) -> Result<usize> {
    let rows = table.rows.iter().map(|r| {
        [
            r.cluster.to_string(),
            r.phecode.clone(),
            names(&r.phecode),
            r.slot.map(|s| s.to_string()).unwrap_or_default(),
            r.numerator.to_string(),
            r.denominator.to_string(),
            opt_pct(r.pct),
            if r.denominator == 0 { "zero_denominator" } else { "" }.to_string(),
        ]
    });
    write_csv(
        path,
        prov,
        &["cluster", "phecode", "phenotype", "slot", "numerator", "denominator", "pct", "note"],
        rows,
    )
}

pub fn write_demographics(path: &Path, prov: Option<&Provenance>, table: &DemographicTable) -> Result<usize> {
    let rows = table.rows.iter().map(|r| {
        [
            r.variable.clone(),
            r.level.clone(),
            r.cluster.to_string(),
            r.count.to_string(),
            r.cluster_size.to_string(),
            fmt_fixed(r.pct, 4),
        ]
    });
    write_csv(path, prov, &["variable", "level", "cluster", "count", "cluster_size", "pct"], rows)
}

pub fn write_crosstab(path: &Path, prov: Option<&Provenance>, table: &CrossTab) -> Result<usize> {
    let rows = table
        .counts
        .indexed_iter()
        .map(|((a, b), c)| [a.to_string(), b.to_string(), c.to_string()]);
    write_csv(path, prov, &["cluster_a", "cluster_b", "count"], rows)
}

/// Published layout: one row per variable or level, one column per cluster
/// pair plus the omnibus test, p-values rendered with [`format_p`].
pub fn write_stats_grid(path: &Path, prov: Option<&Provenance>, grid: &TestGrid) -> Result<usize> {
    let mut header = vec!["row"];
    header.extend(grid.columns.iter().map(String::as_str));
    let rows = grid.rows.iter().map(|r| {
        let mut out = vec![r.label.clone()];
        out.extend(r.cells.iter().map(|c| c.p_value().map_or_else(|| "NA".to_string(), format_p)));
        out
    });
    write_csv(path, prov, &header, rows)
}

/// Tidy, unformatted companion of [`write_stats_grid`].
pub fn write_stats_grid_raw(path: &Path, prov: Option<&Provenance>, grid: &TestGrid) -> Result<usize> {
    let mut rows = Vec::new();
    for r in &grid.rows {
        for c in &r.cells {
            let mut row = vec![
                r.label.clone(),
                r.variable.clone(),
                r.level.clone().unwrap_or_default(),
                c.column.clone(),
            ];
            match &c.result {
                Ok(t) => row.extend([
                    fmt_real(t.statistic),
                    t.df.to_string(),
                    fmt_real(t.p_value),
                    t.yates_applied.to_string(),
                    fmt_real(t.expected_min),
                    t.warning.clone().unwrap_or_default(),
                    String::new(),
                ]),
                Err(e) => row.extend([
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    String::new(),
                    "NA".into(),
                    String::new(),
                    e.clone(),
                ]),
            }
            rows.push(row);
        }
    }
    write_csv(
        path,
        prov,
        &[
            "row", "variable", "level", "column", "statistic", "df", "p_value", "yates", "expected_min", "warning",
            "error",
        ],
        rows,
    )
}

/// One row per (non-reference cluster, design term).
pub fn write_mlr(path: &Path, prov: Option<&Provenance>, fit: &MlrFit<f64>) -> Result<usize> {
    let mut rows = Vec::new();
    for (r, cl) in fit.classes.iter().enumerate() {
        for (j, term) in fit.predictors.iter().enumerate() {
            let (pred, level) = split_term(term);
            let p = fit.p_values[(r, j)];
            rows.push([
                cl.to_string(),
                pred.to_string(),
                level.to_string(),
                fmt_real(fit.coefficients[(r, j)]),
                fmt_real(fit.robust_se[(r, j)]),
                fmt_real(fit.rrr[(r, j)]),
                fmt_real(fit.z[(r, j)]),
                fmt_real(p),
                significance_stars(p).to_string(),
            ]);
        }
    }
    write_csv(
        path,
        prov,
        &["cluster", "predictor", "level", "coef", "robust_se", "rrr", "z", "p_value", "stars"],
        rows,
    )
}

/// Published layout: RRR with stars and robust SE per term and cluster,
/// intercept last, then the AIC.
pub fn write_mlr_table(path: &Path, prov: Option<&Provenance>, fit: &MlrFit<f64>) -> Result<usize> {
    let cols: Vec<String> = fit.classes.iter().map(|c| format!("Cluster {c}")).collect();
    let mut header = vec!["term"];
    header.extend(cols.iter().map(String::as_str));
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (j, term) in fit.predictors.iter().enumerate() {
        let (pred, level) = split_term(term);
        let mut row = vec![if term == INTERCEPT || level.is_empty() { pred } else { level }.to_string()];
        for r in 0..fit.classes.len() {
            row.push(format_rrr_cell(fit.rrr[(r, j)], fit.robust_se[(r, j)], fit.p_values[(r, j)]));
        }
        rows.push(row);
    }
    let mut aic = vec!["AIC".to_string(), format_thousands(fit.aic, 2)];
    aic.resize(header.len(), String::new());
    rows.push(aic);
    write_csv(path, prov, &header, rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlrSummary {
    pub reference_cluster: usize,
    pub classes: Vec<usize>,
    pub class_sizes: Vec<usize>,
    pub predictors: Vec<String>,
    pub n_obs: usize,
    pub parameters: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    pub dropped_levels: Vec<String>,
}

impl MlrSummary {
    pub fn new(fit: &MlrFit<f64>, dropped_levels: &[String]) -> Self {
        Self {
            reference_cluster: fit.reference_cluster,
            classes: fit.classes.clone(),
            class_sizes: fit.class_sizes.clone(),
            predictors: fit.predictors.clone(),
            n_obs: fit.n_obs,
            parameters: fit.coefficients.len(),
            log_likelihood: fit.log_likelihood,
            aic: fit.aic,
            iterations: fit.iterations,
            gradient_norm: fit.gradient_norm,
            converged: true,
            dropped_levels: dropped_levels.to_vec(),
        }
    }
}

pub fn write_drug_usage(path: &Path, prov: Option<&Provenance>, table: &DrugUsageTable) -> Result<usize> {
    let rows = table.rows.iter().map(|r| {
        [
            r.cluster.to_string(),
            r.atc3.clone(),
            r.atc3_name.clone(),
            r.numerator.to_string(),
            r.denominator.to_string(),
            opt_pct(r.pct),
        ]
    });
    write_csv(
        path,
        prov,
        &["cluster", "atc3", "atc3_name", "numerator", "denominator", "pct"],
        rows,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Whatever tables a run produced; absent ones are skipped.
#[derive(Default)]
pub struct ReportBundle<'a> {
    pub patient_ids: Option<&'a [String]>,
    pub assignment: Option<&'a ClusterAssignment>,
    pub elbow: Option<&'a ElbowCurve>,
    pub prevalence_aggregate: Option<&'a PrevalenceTable>,
    pub prevalence_temporal: Option<&'a PrevalenceTable>,
    pub phenotype_names: Option<&'a dyn Fn(&str) -> String>,
    pub demographics: Option<&'a DemographicTable>,
    pub crosstab: Option<&'a CrossTab>,
    pub stats_grid: Option<&'a TestGrid>,
    pub mlr: Option<(&'a MlrFit<f64>, &'a [String])>,
    pub drug_usage: Option<&'a DrugUsageTable>,
}

fn json_name(csv_name: &str) -> String {
    format!("{}.json", csv_name.trim_end_matches(".csv"))
}

/// Writes every present table in the requested formats and returns the
/// manifest entries, sorted by file name.
pub fn emit_reports(
    bundle: &ReportBundle<'_>,
    out_dir: &Path,
    prov: Option<&Provenance>,
    formats: &[ReportFormat],
) -> Result<Vec<ManifestEntry>> {
    let csv = formats.contains(&ReportFormat::Csv);
    let json = formats.contains(&ReportFormat::Json);
    let mut written: Vec<String> = Vec::new();
    let put_json = |name: &str, value: &dyn erased::Json, written: &mut Vec<String>| -> Result<()> {
        if json {
            let n = json_name(name);
            value.write(&out_dir.join(&n))?;
            written.push(n);
        }
        Ok(())
    };
    let plain = |p: &str| p.to_string();
    let names: &dyn Fn(&str) -> String = bundle.phenotype_names.unwrap_or(&plain);

    if let (Some(ids), Some(a)) = (bundle.patient_ids, bundle.assignment) {
        if csv {
            write_assignments(&out_dir.join(ASSIGNMENTS_CSV), prov, ids, a)?;
            written.push(ASSIGNMENTS_CSV.into());
        }
        let pairs: Vec<(&String, &usize)> = ids.iter().zip(&a.labels).collect();
        put_json(ASSIGNMENTS_CSV, &pairs, &mut written)?;
    }
    if let Some(e) = bundle.elbow {
        if csv {
            write_elbow(&out_dir.join(ELBOW_CSV), prov, e)?;
            written.push(ELBOW_CSV.into());
        }
        put_json(ELBOW_CSV, e, &mut written)?;
    }
    for (table, name) in [
        (bundle.prevalence_aggregate, PREVALENCE_AGGREGATE_CSV),
        (bundle.prevalence_temporal, PREVALENCE_TEMPORAL_CSV),
    ] {
        if let Some(t) = table {
            if csv {
                write_prevalence(&out_dir.join(name), prov, t, names)?;
                written.push(name.into());
            }
            put_json(name, t, &mut written)?;
        }
    }
    if let Some(t) = bundle.demographics {
        if csv {
            write_demographics(&out_dir.join(DEMOGRAPHICS_CSV), prov, t)?;
            written.push(DEMOGRAPHICS_CSV.into());
        }
        put_json(DEMOGRAPHICS_CSV, t, &mut written)?;
    }
    if let Some(t) = bundle.crosstab {
        if csv {
            write_crosstab(&out_dir.join(CROSSTAB_CSV), prov, t)?;
            written.push(CROSSTAB_CSV.into());
        }
        let rows: Vec<Vec<usize>> = t.counts.rows().into_iter().map(|r| r.to_vec()).collect();
        put_json(CROSSTAB_CSV, &rows, &mut written)?;
    }
    if let Some(g) = bundle.stats_grid {
        if csv {
            write_stats_grid(&out_dir.join(STATS_GRID_CSV), prov, g)?;
            write_stats_grid_raw(&out_dir.join(STATS_GRID_RAW_CSV), prov, g)?;
            written.push(STATS_GRID_CSV.into());
            written.push(STATS_GRID_RAW_CSV.into());
        }
        put_json(STATS_GRID_CSV, g, &mut written)?;
    }
    if let Some((fit, dropped)) = bundle.mlr {
        if csv {
            write_mlr(&out_dir.join(MLR_CSV), prov, fit)?;
            write_mlr_table(&out_dir.join(MLR_TABLE_CSV), prov, fit)?;
            written.push(MLR_CSV.into());
            written.push(MLR_TABLE_CSV.into());
        }
        // the summary is always JSON
        write_json(&out_dir.join(MLR_JSON), &MlrSummary::new(fit, dropped))?;
        written.push(MLR_JSON.into());
    }
    if let Some(t) = bundle.drug_usage {
        if csv {
            write_drug_usage(&out_dir.join(DRUG_USAGE_CSV), prov, t)?;
            written.push(DRUG_USAGE_CSV.into());
        }
        put_json(DRUG_USAGE_CSV, t, &mut written)?;
    }
    written.sort();
    written.dedup();
    written.iter().map(|f| manifest_entry(out_dir, f)).collect()
}

mod erased {
    use std::path::Path;

    use crate::artifact::write_json;
    use crate::error::Result;

    /// Object-safe JSON writing for heterogeneous tables.
    pub trait Json {
        fn write(&self, path: &Path) -> Result<()>;
    }

    impl<T: serde::Serialize> Json for T {
        fn write(&self, path: &Path) -> Result<()> {
            write_json(path, self)
        }
    }
}
