//! Cluster characterization tables and their CSV/JSON emission.

mod emit;
mod format;

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::cohort::{AgeGroup, Cohort, Race, Sex};
use crate::error::{Error, Result};
use crate::phenotype::{FeatureMatrix, Layout};

pub use emit::*;
pub use format::{format_p, format_ratio, format_rrr_cell, format_thousands, significance_stars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrevalenceMode {
    Aggregate,
    Temporal,
}

/// Denominator of a temporal prevalence cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotDenominator {
    /// Cluster members with any vocabulary condition in the slot.
    #[default]
    ActivePatients,
    ClusterSize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrevalenceOptions {
    pub top_k: usize,
    pub slot_denominator: SlotDenominator,
}

impl Default for PrevalenceOptions {
    fn default() -> Self {
        Self {
            top_k: 20,
            slot_denominator: SlotDenominator::ActivePatients,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceRow {
    pub cluster: usize,
    pub phecode: String,
    pub slot: Option<usize>,
    pub numerator: usize,
    pub denominator: usize,
    /// `None` when the denominator is zero.
    pub pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceTable {
    pub mode: PrevalenceMode,
    /// Displayed phecodes, most prevalent cohort-wide first.
    pub phecodes: Vec<String>,
    pub cluster_sizes: Vec<usize>,
    pub rows: Vec<PrevalenceRow>,
}

fn pct(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn check_labels(n: usize, assignment: &ClusterAssignment) -> Result<()> {
    if assignment.labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} patients", assignment.labels.len())));
    }
    if let Some(l) = assignment.labels.iter().find(|l| **l >= assignment.k) {
        return Err(Error::Shape(format!("label {l} out of range for k={}", assignment.k)));
    }
    Ok(())
}

/// Percentage of each cluster's patients having each of the `top_k`
/// cohort-wide most prevalent conditions, overall or per timeslot.
pub fn condition_prevalence(
    assignment: &ClusterAssignment,
    features: &FeatureMatrix,
    mode: PrevalenceMode,
    options: &PrevalenceOptions,
) -> Result<PrevalenceTable> {
    let expected = match mode {
        PrevalenceMode::Aggregate => Layout::Aggregate,
        PrevalenceMode::Temporal => Layout::Temporal,
    };
    if features.layout != expected {
        return Err(Error::Invalid(format!(
            "{} prevalence needs a {} feature matrix, got {}",
            expected.as_str(),
            expected.as_str(),
            features.layout.as_str()
        )));
    }
    let n = features.n_rows();
    check_labels(n, assignment)?;
    let k = assignment.k;
    let slots = features.slot_count;
    let x = &features.values;
    let has = |i: usize, j: usize| (0..slots).any(|s| x[(i, j * slots + s)] != 0);

    let mut cohort_counts: Vec<(usize, usize)> = (0..features.phecodes.len())
        .map(|j| (j, (0..n).filter(|&i| has(i, j)).count()))
        .collect();
    cohort_counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let chosen: Vec<usize> = cohort_counts.iter().take(options.top_k).map(|c| c.0).collect();

    let mut sizes = vec![0usize; k];
    for &l in &assignment.labels {
        sizes[l] += 1;
    }
    let mut rows = Vec::new();
    match mode {
        PrevalenceMode::Aggregate => {
            let mut num = vec![vec![0usize; chosen.len()]; k];
            for i in 0..n {
                for (c, &j) in chosen.iter().enumerate() {
                    if has(i, j) {
                        num[assignment.labels[i]][c] += 1;
                    }
                }
            }
            for cl in 0..k {
                for (c, &j) in chosen.iter().enumerate() {
                    rows.push(PrevalenceRow {
                        cluster: cl,
                        phecode: features.phecodes[j].clone(),
                        slot: None,
                        numerator: num[cl][c],
                        denominator: sizes[cl],
                        pct: pct(num[cl][c], sizes[cl]),
                    });
                }
            }
        }
        PrevalenceMode::Temporal => {
            let p = features.phecodes.len();
            let mut active = vec![vec![0usize; slots]; k];
            let mut num = vec![vec![vec![0usize; slots]; chosen.len()]; k];
            for i in 0..n {
                let cl = assignment.labels[i];
                for s in 0..slots {
                    if (0..p).any(|j| x[(i, j * slots + s)] != 0) {
                        active[cl][s] += 1;
                    }
                }
                for (c, &j) in chosen.iter().enumerate() {
                    for s in 0..slots {
                        if x[(i, j * slots + s)] != 0 {
                            num[cl][c][s] += 1;
                        }
                    }
                }
            }
            for cl in 0..k {
                for (c, &j) in chosen.iter().enumerate() {
                    for s in 0..slots {
                        let den = match options.slot_denominator {
                            SlotDenominator::ActivePatients => active[cl][s],
                            SlotDenominator::ClusterSize => sizes[cl],
                        };
                        rows.push(PrevalenceRow {
                            cluster: cl,
                            phecode: features.phecodes[j].clone(),
                            slot: Some(s + 1),
                            numerator: num[cl][c][s],
                            denominator: den,
                            pct: pct(num[cl][c][s], den),
                        });
                    }
                }
            }
        }
    }
    Ok(PrevalenceTable {
        mode,
        phecodes: chosen.iter().map(|&j| features.phecodes[j].clone()).collect(),
        cluster_sizes: sizes,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemographicRow {
    pub variable: String,
    pub level: String,
    pub cluster: usize,
    pub count: usize,
    pub cluster_size: usize,
    pub pct: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DemographicTable {
    pub rows: Vec<DemographicRow>,
}

impl DemographicTable {
    /// Died / cluster size, per cluster.
    pub fn mortality_rates(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.variable == "Mortality" && r.level == "Died")
            .map(|r| r.pct / 100.0)
            .collect()
    }
}

pub const DEMOGRAPHIC_VARIABLES: [&str; 4] = ["Sex", "Race", "Age group", "Mortality"];

/// Per-cluster counts and within-cluster percentages of sex, race, age
/// group at index and mortality. Every level is listed, including empty ones.
pub fn demographic_breakdown(
    assignment: &ClusterAssignment,
    patient_ids: &[String],
    cohort: &Cohort,
) -> Result<DemographicTable> {
    check_labels(patient_ids.len(), assignment)?;
    let by_id: HashMap<&str, &crate::cohort::PatientRecord> =
        cohort.patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let k = assignment.k;
    let mut sizes = vec![0usize; k];
    let levels: [Vec<&str>; 4] = [
        Sex::ALL.iter().map(|s| s.label()).collect(),
        Race::ALL.iter().map(|r| r.label()).collect(),
        AgeGroup::ALL.iter().map(|a| a.label()).collect(),
        vec!["Died", "Alive"],
    ];
    let mut counts: Vec<Vec<Vec<usize>>> = levels.iter().map(|l| vec![vec![0; l.len()]; k]).collect();
    for (id, &cl) in patient_ids.iter().zip(&assignment.labels) {
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Invalid(format!("patient {id} is not in the cohort")))?;
        sizes[cl] += 1;
        let age = cohort.age_group(p)?;
        let idx = [
            Sex::ALL.iter().position(|s| *s == p.sex).unwrap(),
            Race::ALL.iter().position(|r| *r == p.race).unwrap(),
            AgeGroup::ALL.iter().position(|a| *a == age).unwrap(),
            usize::from(!p.died),
        ];
        for (v, &i) in idx.iter().enumerate() {
            counts[v][cl][i] += 1;
        }
    }
    let mut rows = Vec::new();
    for (v, name) in DEMOGRAPHIC_VARIABLES.iter().enumerate() {
        for (li, level) in levels[v].iter().enumerate() {
            for cl in 0..k {
                let c = counts[v][cl][li];
                rows.push(DemographicRow {
                    variable: name.to_string(),
                    level: level.to_string(),
                    cluster: cl,
                    count: c,
                    cluster_size: sizes[cl],
                    pct: pct(c, sizes[cl]).unwrap_or(0.0),
                });
            }
        }
    }
    Ok(DemographicTable { rows })
}

/// Overlap counts between two partitions of the same patients.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossTab {
    pub counts: Array2<usize>,
}

impl CrossTab {
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        self.counts.columns().into_iter().map(|c| c.sum()).collect()
    }
}

pub fn cluster_crosstab(
    ids_a: &[String],
    a: &ClusterAssignment,
    ids_b: &[String],
    b: &ClusterAssignment,
) -> Result<CrossTab> {
    check_labels(ids_a.len(), a)?;
    check_labels(ids_b.len(), b)?;
    if ids_a.len() != ids_b.len() {
        return Err(Error::Shape(format!("partitions cover {} and {} patients", ids_a.len(), ids_b.len())));
    }
    let lookup: HashMap<&str, usize> = ids_b.iter().map(String::as_str).zip(b.labels.iter().copied()).collect();
    let mut counts = Array2::zeros((a.k, b.k));
    for (id, &la) in ids_a.iter().zip(&a.labels) {
        let lb = lookup
            .get(id.as_str())
            .ok_or_else(|| Error::Shape(format!("patient {id} is missing from the second partition")))?;
        counts[(la, *lb)] += 1;
    }
    Ok(CrossTab { counts })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use chrono::NaiveDate;

    use super::*;
    use crate::cohort::PatientRecord;
    use crate::phenotype::ColumnLabel;

    fn assignment(labels: &[usize], k: usize) -> ClusterAssignment {
        ClusterAssignment {
            labels: labels.to_vec(),
            k,
            sse: 0.0,
            seed: 0,
        }
    }

    fn matrix(layout: Layout, phecodes: &[&str], slots: usize, rows: &[Vec<u8>]) -> FeatureMatrix {
        let n = rows.len();
        let m = rows[0].len();
        let columns = phecodes
            .iter()
            .flat_map(|p| {
                (1..=slots).map(move |s| ColumnLabel {
                    phecode: p.to_string(),
                    slot: (layout == Layout::Temporal).then_some(s),
                })
            })
            .collect();
        FeatureMatrix {
            patient_ids: (0..n).map(|i| format!("p{i}")).collect(),
            layout,
            phecodes: phecodes.iter().map(|s| s.to_string()).collect(),
            slot_count: slots,
            columns,
            values: Array2::from_shape_vec((n, m), rows.concat()).unwrap(),
        }
    }

    #[test]
    fn seven_of_ten_is_seventy_percent() {
        let rows: Vec<Vec<u8>> = (0..10).map(|i| vec![u8::from(i < 7), 1]).collect();
        let fm = matrix(Layout::Aggregate, &["401.1", "272.1"], 1, &rows);
        let t = condition_prevalence(&assignment(&[0; 10], 1), &fm, PrevalenceMode::Aggregate, &Default::default())
            .unwrap();
        assert_eq!(t.phecodes, ["272.1", "401.1"]);
        let r = t.rows.iter().find(|r| r.phecode == "401.1").unwrap();
        assert_eq!((r.numerator, r.denominator, r.pct), (7, 10, Some(70.0)));
    }

    #[test]
    fn top_k_and_layout_checks() {
        let rows = vec![vec![1, 0, 1], vec![1, 1, 0], vec![1, 0, 0]];
        let fm = matrix(Layout::Aggregate, &["a", "b", "c"], 1, &rows);
        let opts = PrevalenceOptions {
            top_k: 2,
            ..Default::default()
        };
        let t = condition_prevalence(&assignment(&[0, 1, 0], 2), &fm, PrevalenceMode::Aggregate, &opts).unwrap();
        // b and c tie on one patient; the earlier column wins
        assert_eq!(t.phecodes, ["a", "b"]);
        assert_eq!(t.rows.len(), 4);
        assert!(condition_prevalence(&assignment(&[0, 1, 0], 2), &fm, PrevalenceMode::Temporal, &opts).is_err());
    }

    #[test]
    fn temporal_denominators() {
        // two phecodes x two slots; columns a_t1 a_t2 b_t1 b_t2
        let rows = vec![vec![1, 0, 0, 0], vec![0, 0, 1, 0], vec![1, 0, 0, 0], vec![0, 0, 1, 1]];
        let fm = matrix(Layout::Temporal, &["a", "b"], 2, &rows);
        let asg = assignment(&[0, 0, 1, 1], 2);
        let t = condition_prevalence(&asg, &fm, PrevalenceMode::Temporal, &Default::default()).unwrap();
        let get = |cl: usize, ph: &str, s: usize| {
            t.rows.iter().find(|r| r.cluster == cl && r.phecode == ph && r.slot == Some(s)).unwrap().clone()
        };
        assert_eq!((get(0, "a", 1).numerator, get(0, "a", 1).denominator), (1, 2));
        // nobody in cluster 0 has anything in slot 2
        assert_eq!((get(0, "a", 2).denominator, get(0, "a", 2).pct), (0, None));
        assert_eq!((get(1, "b", 2).numerator, get(1, "b", 2).denominator), (1, 1));
        let by_size = PrevalenceOptions {
            slot_denominator: SlotDenominator::ClusterSize,
            ..Default::default()
        };
        let t2 = condition_prevalence(&asg, &fm, PrevalenceMode::Temporal, &by_size).unwrap();
        assert!(t2.rows.iter().all(|r| r.denominator == 2));
        for r in t.rows.iter().chain(&t2.rows) {
            assert!(r.numerator <= r.denominator);
        }
    }

    fn cohort(n: usize, female: bool) -> (Cohort, Vec<String>) {
        let index = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap();
        let mut c = Cohort {
            slot_count: 6,
            slot_days: 183,
            ..Default::default()
        };
        let mut ids = Vec::new();
        for i in 0..n {
            let id = format!("p{i:02}");
            c.patients.push(PatientRecord {
                patient_id: id.clone(),
                sex: if female || i % 2 == 0 { Sex::F } else { Sex::M },
                race: Race::ALL[i % Race::ALL.len()],
                birth_date: NaiveDate::from_ymd_opt(1930 + (i as i32 * 3) % 40, 3, 1).unwrap(),
                died: i % 3 == 0,
            });
            c.index_date.insert(id.clone(), index);
            ids.push(id);
        }
        c.pre_index_events = BTreeMap::new();
        (c, ids)
    }

    #[test]
    fn all_female_cohort() {
        let (c, ids) = cohort(12, true);
        let asg = assignment(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2], 3);
        let t = demographic_breakdown(&asg, &ids, &c).unwrap();
        for r in t.rows.iter().filter(|r| r.variable == "Sex") {
            let want = if r.level == "Female" { 100.0 } else { 0.0 };
            assert_eq!(r.pct, want);
        }
    }

    #[test]
    fn demographic_percentages_sum_to_100() {
        let (c, ids) = cohort(40, false);
        let labels: Vec<usize> = (0..40).map(|i| (i * 7 + 3) % 4).collect();
        let t = demographic_breakdown(&assignment(&labels, 4), &ids, &c).unwrap();
        for v in DEMOGRAPHIC_VARIABLES {
            for cl in 0..4 {
                let s: f64 = t.rows.iter().filter(|r| r.variable == v && r.cluster == cl).map(|r| r.pct).sum();
                assert!((s - 100.0).abs() < 0.01, "{v} cluster {cl}: {s}");
            }
        }
        let rates = t.mortality_rates();
        assert_eq!(rates.len(), 4);
        let died = (0..40).filter(|i| i % 3 == 0 && labels[*i] == 0).count() as f64;
        let size = labels.iter().filter(|l| **l == 0).count() as f64;
        assert_eq!(rates[0], died / size);
    }

    #[test]
    fn crosstab_shapes() {
        let ids: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
        let a = assignment(&[0, 0, 1, 1, 2, 2], 3);
        let same = cluster_crosstab(&ids, &a, &ids, &a).unwrap();
        assert_eq!(same.counts, Array2::from_diag(&ndarray::arr1(&[2, 2, 2])));
        let x = assignment(&[0, 0, 0, 1, 1, 1], 2);
        let y = assignment(&[1, 1, 1, 0, 0, 0], 2);
        let anti = cluster_crosstab(&ids, &x, &ids, &y).unwrap();
        assert_eq!(anti.counts, ndarray::arr2(&[[0, 3], [3, 0]]));
        // second partition in a different row order
        let rev: Vec<String> = ids.iter().rev().cloned().collect();
        let yr = assignment(&[0, 0, 0, 1, 1, 1], 2);
        assert_eq!(cluster_crosstab(&ids, &x, &rev, &yr).unwrap().counts, anti.counts);
        let mut other = ids.clone();
        other[0] = "zz".into();
        assert!(cluster_crosstab(&ids, &x, &other, &y).is_err());
    }

    #[test]
    fn crosstab_marginals_reproduce_sizes() {
        // partition sizes shaped like the aggregate-format clusters
        let sizes = [10141usize, 5910, 6599, 7272];
        let n: usize = sizes.iter().sum();
        let ids: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let a: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, s)| std::iter::repeat_n(c, *s)).collect();
        let b: Vec<usize> = (0..n).map(|i| (i * 31 + 7) % 4).collect();
        let t = cluster_crosstab(&ids, &assignment(&a, 4), &ids, &assignment(&b, 4)).unwrap();
        assert_eq!(t.row_sums(), sizes);
        let mut bs = vec![0; 4];
        for l in &b {
            bs[*l] += 1;
        }
        assert_eq!(t.col_sums(), bs);
    }
}
