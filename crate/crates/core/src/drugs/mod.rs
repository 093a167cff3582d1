//! RxCUI to ATC level-3 mapping and per-cluster prescription prevalence.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterAssignment;
use crate::cohort::{column_indices, PrescriptionEvent, Reject};
use crate::error::{Error, Result};

const FIXTURE_ATC_MAP: &str = include_str!("../../fixtures/atc_map.csv");
const FIXTURE_DRUG_CLASSES: &str = include_str!("../../fixtures/drug_classes.csv");

fn atc3_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Z]\d\d[A-Z]$").unwrap())
}

pub fn is_valid_atc3(code: &str) -> bool {
    atc3_pattern().is_match(code)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DrugClass {
    pub atc3: String,
    pub name: String,
}

/// `rxcui -> {ATC3 classes}`; one RxCUI may sit in several classes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AtcMap {
    entries: BTreeMap<String, BTreeSet<DrugClass>>,
}

impl AtcMap {
    pub fn from_rows(rows: impl IntoIterator<Item = (String, String, String)>) -> Result<Self> {
        let mut map = Self::default();
        for (rxcui, atc3, name) in rows {
            if !is_valid_atc3(&atc3) {
                return Err(Error::Invalid(format!("ATC3 code {atc3:?} does not match letter-digit-digit-letter")));
            }
            map.entries.entry(rxcui).or_default().insert(DrugClass { atc3, name });
        }
        Ok(map)
    }

    /// Bundled map covering the default drug classes.
    pub fn fixture() -> Self {
        let (map, rejects) = parse_atc_reader(FIXTURE_ATC_MAP.as_bytes(), Path::new("<fixture>")).expect("bundled ATC map");
        debug_assert!(rejects.is_empty());
        map
    }

    pub fn lookup(&self, rxcui: &str) -> impl Iterator<Item = &DrugClass> {
        self.entries.get(rxcui.trim()).into_iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// RxCUIs in the given class, ascending.
    pub fn rxcuis_for(&self, atc3: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, cs)| cs.iter().any(|c| c.atc3 == atc3))
            .map(|(r, _)| r.as_str())
            .collect()
    }

    pub fn class_name(&self, atc3: &str) -> Option<&str> {
        self.entries.values().flatten().find(|c| c.atc3 == atc3).map(|c| c.name.as_str())
    }
}

fn parse_atc_reader(reader: impl std::io::Read, path: &Path) -> Result<(AtcMap, Vec<Reject>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let [rx, code, name] = column_indices(path, &headers, ["rxcui", "atc3", "atc3_name"])?;
    let mut map = AtcMap::default();
    let mut rejects = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| rec.get(i).unwrap_or("").to_string();
        let (rxcui, atc3) = (get(rx), get(code));
        let reason = if rxcui.is_empty() {
            Some("empty rxcui".to_string())
        } else if !is_valid_atc3(&atc3) {
            Some(format!("ATC3 code {atc3:?} does not match letter-digit-digit-letter"))
        } else {
            None
        };
        match reason {
            Some(reason) => rejects.push(Reject {
                table: "atc_map".into(),
                line,
                reason,
            }),
            None => {
                map.entries.entry(rxcui).or_default().insert(DrugClass { atc3, name: get(name) });
            }
        }
    }
    Ok((map, rejects))
}

/// Loads `rxcui,atc3,atc3_name`; malformed codes become rejects.
pub fn load_atc_map(path: &Path) -> Result<(AtcMap, Vec<Reject>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (map, rejects) = parse_atc_reader(file, path)?;
    for r in &rejects {
        log::warn!("{}:{}: {}", path.display(), r.line, r.reason);
    }
    if map.is_empty() {
        log::warn!("{}: ATC map is empty", path.display());
    }
    Ok((map, rejects))
}

/// The bundled thirteen-class selection.
pub fn default_drug_classes() -> Vec<DrugClass> {
    parse_classes(FIXTURE_DRUG_CLASSES.as_bytes(), Path::new("<fixture>")).expect("bundled drug classes")
}

fn parse_classes(reader: impl std::io::Read, path: &Path) -> Result<Vec<DrugClass>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let [code, name] = column_indices(path, &headers, ["atc3", "atc3_name"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let atc3 = rec.get(code).unwrap_or("").to_string();
        if !is_valid_atc3(&atc3) {
            return Err(Error::BadRecord {
                path: path.to_path_buf(),
                line: rec.position().map(|p| p.line()).unwrap_or(0),
                reason: format!("ATC3 code {atc3:?} does not match letter-digit-digit-letter"),
            });
        }
        out.push(DrugClass {
            atc3,
            name: rec.get(name).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

pub fn load_drug_classes(path: &Path) -> Result<Vec<DrugClass>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_classes(file, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugUsageRow {
    pub cluster: usize,
    pub atc3: String,
    pub atc3_name: String,
    pub numerator: usize,
    pub denominator: usize,
    /// `None` when the cluster has no prescribed patients.
    pub pct: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DrugUsageTable {
    pub rows: Vec<DrugUsageRow>,
    /// Per cluster: members with at least one post-index prescription.
    pub denominators: Vec<usize>,
    pub warnings: Vec<String>,
}

fn cluster_of<'a>(patient_ids: &'a [String], assignment: &ClusterAssignment) -> Result<HashMap<&'a str, usize>> {
    if patient_ids.len() != assignment.labels.len() {
        return Err(Error::Shape(format!("{} patient ids for {} labels", patient_ids.len(), assignment.labels.len())));
    }
    Ok(patient_ids.iter().map(String::as_str).zip(assignment.labels.iter().copied()).collect())
}

/// Distinct-patient prevalence of each selected class among the patients of
/// each cluster who have any post-index prescription. Prescriptions of
/// patients outside `patient_ids` are ignored.
pub fn drug_prevalence_by_cluster(
    prescriptions: &[PrescriptionEvent],
    patient_ids: &[String],
    assignment: &ClusterAssignment,
    map: &AtcMap,
    selected: &[DrugClass],
) -> Result<DrugUsageTable> {
    let cluster = cluster_of(patient_ids, assignment)?;
    let k = assignment.k;
    let mut prescribed: HashSet<&str> = HashSet::new();
    let mut in_class: HashSet<(&str, &str)> = HashSet::new();
    for rx in prescriptions {
        let Some((&pid, _)) = cluster.get_key_value(rx.patient_id.as_str()) else {
            continue;
        };
        prescribed.insert(pid);
        for c in map.lookup(&rx.rxcui) {
            in_class.insert((pid, c.atc3.as_str()));
        }
    }
    let mut denominators = vec![0usize; k];
    for pid in &prescribed {
        denominators[cluster[pid]] += 1;
    }
    let mut warnings = Vec::new();
    if selected.is_empty() {
        warnings.push("no drug classes selected; drug usage table is empty".to_string());
    }
    let mut numerators = vec![vec![0usize; selected.len()]; k];
    let index: HashMap<&str, usize> = selected.iter().enumerate().map(|(i, c)| (c.atc3.as_str(), i)).collect();
    for (pid, atc3) in &in_class {
        if let Some(&j) = index.get(atc3) {
            numerators[cluster[pid]][j] += 1;
        }
    }
    let mut rows = Vec::with_capacity(k * selected.len());
    for (c, nums) in numerators.iter().enumerate() {
        if denominators[c] == 0 && !selected.is_empty() {
            warnings.push(format!("cluster {c} has no patients with post-index prescriptions"));
        }
        for (j, class) in selected.iter().enumerate() {
            let d = denominators[c];
            rows.push(DrugUsageRow {
                cluster: c,
                atc3: class.atc3.clone(),
                atc3_name: class.name.clone(),
                numerator: nums[j],
                denominator: d,
                pct: (d > 0).then(|| 100.0 * nums[j] as f64 / d as f64),
            });
        }
    }
    Ok(DrugUsageTable {
        rows,
        denominators,
        warnings,
    })
}

/// Classes ranked by distinct prescribed patients cohort-wide, ties by code.
pub fn most_frequent_classes(prescriptions: &[PrescriptionEvent], map: &AtcMap, n: usize) -> Vec<(DrugClass, usize)> {
    let mut patients: BTreeMap<&DrugClass, HashSet<&str>> = BTreeMap::new();
    for rx in prescriptions {
        for c in map.lookup(&rx.rxcui) {
            patients.entry(c).or_default().insert(rx.patient_id.as_str());
        }
    }
    let mut ranked: Vec<(DrugClass, usize)> = patients.into_iter().map(|(c, s)| (c.clone(), s.len())).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.atc3.cmp(&b.0.atc3)));
    ranked.truncate(n);
    ranked
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrugCoverage {
    pub prescriptions: usize,
    pub mapped: usize,
    pub mapped_pct: f64,
}

pub fn drug_coverage(prescriptions: &[PrescriptionEvent], map: &AtcMap) -> DrugCoverage {
    let mapped = prescriptions.iter().filter(|rx| map.lookup(&rx.rxcui).next().is_some()).count();
    let total = prescriptions.len();
    DrugCoverage {
        prescriptions: total,
        mapped,
        mapped_pct: if total == 0 { 0.0 } else { 100.0 * mapped as f64 / total as f64 },
    }
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;

    fn rx(pid: &str, rxcui: &str) -> PrescriptionEvent {
        PrescriptionEvent {
            patient_id: pid.into(),
            rxcui: rxcui.into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        }
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn fixture_hits_insulin() {
        let map = AtcMap::fixture();
        let hits: Vec<&str> = map.lookup("860975").map(|c| c.atc3.as_str()).collect();
        assert_eq!(hits, vec!["A10A"]);
        assert_eq!(map.class_name("A10A"), Some("Insulins and analogues"));
        // aspirin sits in two classes
        assert_eq!(map.lookup("1191").count(), 2);
        assert_eq!(default_drug_classes().len(), 13);
    }

    #[test]
    fn malformed_codes_are_rejected_with_lines() {
        let text = "rxcui,atc3,atc3_name\n1,A10A,Insulins\n2,XYZ,Bad\n3,a10a,Lower\n";
        let (map, rejects) = parse_atc_reader(text.as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(rejects.iter().map(|r| r.line).collect::<Vec<_>>(), vec![3, 4]);
        assert!(parse_atc_reader("rxcui,code\n".as_bytes(), Path::new("t.csv")).is_err());
    }

    #[test]
    fn denominators_and_distinct_patients() {
        let a = ClusterAssignment {
            labels: vec![0, 0, 1, 1, 1],
            k: 2,
            sse: 0.0,
            seed: 0,
        };
        let map = AtcMap::fixture();
        let presc = vec![
            rx("p0", "860975"),
            rx("p0", "274783"),
            rx("p1", "999999"),
            rx("p2", "7646"),
            rx("p2", "860975"),
            rx("outsider", "860975"),
        ];
        let selected = default_drug_classes();
        let t = drug_prevalence_by_cluster(&presc, &ids(5), &a, &map, &selected).unwrap();
        assert_eq!(t.denominators, vec![2, 1]);
        let get = |c: usize, code: &str| t.rows.iter().find(|r| r.cluster == c && r.atc3 == code).unwrap().clone();
        assert_eq!(get(0, "A10A").numerator, 1);
        assert_eq!(get(0, "A10A").pct, Some(50.0));
        assert_eq!(get(1, "A02B").numerator, 1);
        assert!(t.rows.iter().all(|r| r.numerator <= r.denominator));

        // a repeated (patient, class) pair changes nothing
        let mut more = presc.clone();
        more.push(rx("p2", "86009"));
        assert_eq!(drug_prevalence_by_cluster(&more, &ids(5), &a, &map, &selected).unwrap(), t);
    }

    #[test]
    fn empty_selection_and_empty_map() {
        let a = ClusterAssignment {
            labels: vec![0, 1],
            k: 2,
            sse: 0.0,
            seed: 0,
        };
        let presc = vec![rx("p0", "860975")];
        let t = drug_prevalence_by_cluster(&presc, &ids(2), &a, &AtcMap::fixture(), &[]).unwrap();
        assert!(t.rows.is_empty() && !t.warnings.is_empty());
        assert_eq!(drug_coverage(&presc, &AtcMap::default()).mapped_pct, 0.0);
    }

    #[test]
    fn ranking_by_distinct_patients() {
        let presc = vec![rx("a", "7646"), rx("a", "40790"), rx("b", "161"), rx("c", "161"), rx("c", "7646")];
        let r = most_frequent_classes(&presc, &AtcMap::fixture(), 2);
        assert_eq!(r[0].0.atc3, "A02B");
        assert_eq!(r[0].1, 2);
        assert_eq!(r[1].0.atc3, "N02B");
    }
}
