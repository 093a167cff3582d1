//! ICD to phecode mapping, prevalence ranking and the top-V vocabulary.

mod features;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use features::{
    build_aggregate_matrix, build_temporal_matrix, ColumnLabel, FeatureMatrix, Layout,
};

use crate::cohort::{column_indices, normalize_code, CodeSystem, Cohort, DiagnosisEvent};
use crate::error::{Error, Result};

const FIXTURE_PHECODE_MAP: &str = include_str!("../../fixtures/phecode_map.csv");
const FIXTURE_VOCABULARY: &str = include_str!("../../fixtures/vocabulary_table1.csv");

fn phecode_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{3}(\.\d{1,2})?$").unwrap())
}

pub fn is_valid_phecode(s: &str) -> bool {
    phecode_pattern().is_match(s)
}

/// `(normalized ICD code, system) -> (phecode, phenotype)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhecodeMap {
    entries: BTreeMap<(String, CodeSystem), (String, String)>,
}

impl PhecodeMap {
    /// Builds a map from `(icd_code, system, phecode, phenotype)` rows.
    /// Exact duplicate rows are tolerated; conflicting ones are not.
    pub fn from_entries(
        rows: impl IntoIterator<Item = (String, CodeSystem, String, String)>,
    ) -> Result<Self> {
        Self::from_numbered(rows.into_iter().enumerate().map(|(i, r)| (i as u64 + 1, r)), Path::new("<memory>"))
    }

    fn from_numbered(
        rows: impl IntoIterator<Item = (u64, (String, CodeSystem, String, String))>,
        path: &Path,
    ) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut first_line: HashMap<(String, CodeSystem), u64> = HashMap::new();
        let mut conflicts = Vec::new();
        for (line, (code, system, phecode, name)) in rows {
            if !is_valid_phecode(&phecode) {
                return Err(Error::BadRecord {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("phecode {phecode:?} is not decimal formatted"),
                });
            }
            let key = (normalize_code(&code), system);
            match entries.get(&key) {
                Some((existing, _)) if *existing != phecode => conflicts.push(format!(
                    "{} ({}) -> {} at line {} vs {} at line {}",
                    code, system, existing, first_line[&key], phecode, line
                )),
                Some(_) => {}
                None => {
                    first_line.insert(key.clone(), line);
                    entries.insert(key, (phecode, name));
                }
            }
        }
        if conflicts.is_empty() {
            Ok(Self { entries })
        } else {
            Err(Error::MappingConflict {
                path: path.to_path_buf(),
                details: conflicts.join("; "),
            })
        }
    }

    /// Bundled map covering the Table-1 phenotypes plus AD itself.
    pub fn fixture() -> Self {
        Self::parse_reader(FIXTURE_PHECODE_MAP.as_bytes(), Path::new("<fixture>"))
            .expect("bundled phecode map is valid")
    }

    fn parse_reader(reader: impl std::io::Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let [code, flag, phecode, name] =
            column_indices(path, &headers, ["icd_code", "system_flag", "phecode", "phenotype"])?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let get = |i: usize| rec.get(i).unwrap_or("").to_string();
            let system = CodeSystem::from_flag(&get(flag)).ok_or_else(|| Error::BadRecord {
                path: path.to_path_buf(),
                line,
                reason: format!("system_flag must be 9 or 10, got {:?}", get(flag)),
            })?;
            rows.push((line, (get(code), system, get(phecode), get(name))));
        }
        Self::from_numbered(rows, path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact lookup after code normalization.
    pub fn lookup(&self, code: &str, system: CodeSystem) -> Option<(&str, &str)> {
        self.entries
            .get(&(normalize_code(code), system))
            .map(|(p, n)| (p.as_str(), n.as_str()))
    }

    pub fn phenotype_name(&self, phecode: &str) -> Option<&str> {
        self.entries
            .values()
            .find(|(p, _)| p == phecode)
            .map(|(_, n)| n.as_str())
    }

    /// Phecodes reached by any of the given (normalized) codes in any system.
    pub fn phecodes_of(&self, codes: &HashSet<String>) -> BTreeSet<String> {
        self.entries
            .iter()
            .filter(|((c, _), _)| codes.contains(c))
            .map(|(_, (p, _))| p.clone())
            .collect()
    }

    /// Codes (as stored, normalized) mapping to `phecode` in `system`.
    pub fn codes_for(&self, phecode: &str, system: CodeSystem) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|((_, s), (p, _))| *s == system && p == phecode)
            .map(|((c, _), _)| c.as_str())
            .collect()
    }
}

/// Loads `icd_code,system_flag,phecode,phenotype`. An empty table is legal
/// but logged.
pub fn load_phecode_map(path: &Path) -> Result<PhecodeMap> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let map = PhecodeMap::parse_reader(file, path)?;
    if map.is_empty() {
        log::warn!("{}: phecode map is empty", path.display());
    }
    Ok(map)
}

pub fn map_diagnosis<'m>(event: &DiagnosisEvent, map: &'m PhecodeMap) -> Option<&'m str> {
    map.lookup(&event.code, event.system).map(|(p, _)| p)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub rank: usize,
    pub phecode: String,
    pub phenotype: String,
    pub patient_count: Option<usize>,
}

/// Ordered phenotype vocabulary, most prevalent first.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhenotypeVocabulary {
    entries: Vec<VocabularyEntry>,
    pub exclusions: BTreeSet<String>,
}

impl PhenotypeVocabulary {
    pub fn new(phecodes: Vec<(String, String)>) -> Result<Self> {
        let entries = phecodes
            .into_iter()
            .enumerate()
            .map(|(i, (phecode, phenotype))| VocabularyEntry {
                rank: i + 1,
                phecode,
                phenotype,
                patient_count: None,
            })
            .collect();
        Self::from_entries(entries, BTreeSet::new())
    }

    fn from_entries(entries: Vec<VocabularyEntry>, exclusions: BTreeSet<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.phecode.as_str()) {
                return Err(Error::Invalid(format!("duplicate phecode {} in vocabulary", e.phecode)));
            }
        }
        Ok(Self {
            entries,
            exclusions,
        })
    }

    /// The bundled 40-phenotype vocabulary.
    pub fn table1() -> Self {
        Self::parse_reader(FIXTURE_VOCABULARY.as_bytes(), Path::new("<fixture>"))
            .expect("bundled vocabulary is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse_reader(file, path)
    }

    fn parse_reader(reader: impl std::io::Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
        let [rank, phecode, name, count] =
            column_indices(path, &headers, ["rank", "phecode", "phenotype", "patient_count"])?;
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let bad = |reason: String| Error::BadRecord {
                path: path.to_path_buf(),
                line,
                reason,
            };
            let rank: usize = rec[rank]
                .parse()
                .map_err(|_| bad(format!("bad rank {:?}", &rec[rank])))?;
            let count = match rec.get(count).unwrap_or("") {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad patient_count {s:?}")))?),
            };
            entries.push(VocabularyEntry {
                rank,
                phecode: rec[phecode].to_string(),
                phenotype: rec[name].to_string(),
                patient_count: count,
            });
        }
        entries.sort_by_key(|e| e.rank);
        Self::from_entries(entries, BTreeSet::new())
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let path = Path::new("<vocabulary>");
        wtr.write_record(["rank", "phecode", "phenotype", "patient_count"])
            .map_err(|e| Error::csv(path, e))?;
        for e in &self.entries {
            wtr.write_record([
                e.rank.to_string(),
                e.phecode.clone(),
                e.phenotype.clone(),
                e.patient_count.map(|c| c.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn phecodes(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.phecode.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, phecode: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.phecode == phecode)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankingOptions {
    pub review_size: usize,
    pub keep: usize,
    /// Phecodes dropped during manual review.
    pub exclusions: BTreeSet<String>,
}

impl Default for RankingOptions {
    fn default() -> Self {
        Self {
            review_size: 60,
            keep: 40,
            exclusions: BTreeSet::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub rank: usize,
    pub phecode: String,
    pub phenotype: String,
    pub patient_count: usize,
}

/// Distinct-patient prevalence of every phecode over slots `1..=S`, sorted by
/// count descending then phecode ascending.
pub fn phecode_prevalence(cohort: &Cohort, map: &PhecodeMap) -> Vec<(String, usize)> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in &cohort.patients {
        let phecodes: HashSet<&str> = cohort
            .events(&p.patient_id)
            .iter()
            .filter_map(|e| map.lookup(&e.code, e.system).map(|(ph, _)| ph))
            .collect();
        for ph in phecodes {
            *counts.entry(ph).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().map(|(p, c)| (p.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

/// Ranks phenotypes, reports the top `review_size`, and keeps the first
/// `keep` reviewed entries not listed in `exclusions` or `ad_phecodes`.
pub fn rank_phenotypes(
    cohort: &Cohort,
    map: &PhecodeMap,
    options: &RankingOptions,
    ad_phecodes: &BTreeSet<String>,
) -> Result<(PhenotypeVocabulary, Vec<FrequencyRow>)> {
    let name = |ph: &str| map.phenotype_name(ph).unwrap_or("").to_string();
    let ranked: Vec<(String, usize)> = phecode_prevalence(cohort, map)
        .into_iter()
        .filter(|(p, _)| !ad_phecodes.contains(p))
        .collect();
    let review: Vec<FrequencyRow> = ranked
        .iter()
        .take(options.review_size)
        .enumerate()
        .map(|(i, (p, c))| FrequencyRow {
            rank: i + 1,
            phecode: p.clone(),
            phenotype: name(p),
            patient_count: *c,
        })
        .collect();
    let survivors: Vec<&FrequencyRow> = review
        .iter()
        .filter(|r| !options.exclusions.contains(&r.phecode))
        .collect();
    if survivors.len() < options.keep {
        return Err(Error::TooFewPhenotypes {
            found: survivors.len(),
            needed: options.keep,
        });
    }
    let entries = survivors
        .into_iter()
        .take(options.keep)
        .enumerate()
        .map(|(i, r)| VocabularyEntry {
            rank: i + 1,
            phecode: r.phecode.clone(),
            phenotype: r.phenotype.clone(),
            patient_count: Some(r.patient_count),
        })
        .collect();
    let vocab = PhenotypeVocabulary::from_entries(entries, options.exclusions.clone())?;
    Ok((vocab, review))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total_events: usize,
    pub mapped_events: usize,
    pub unmapped_events: usize,
    pub mapped_pct: f64,
    /// Most frequent unmapped codes, `(normalized code, system, count)`.
    pub top_unmapped: Vec<(String, CodeSystem, usize)>,
}

pub fn coverage_report(cohort: &Cohort, map: &PhecodeMap) -> CoverageReport {
    let mut report = CoverageReport::default();
    let mut unmapped: HashMap<(String, CodeSystem), usize> = HashMap::new();
    for events in cohort.pre_index_events.values() {
        for e in events {
            report.total_events += 1;
            if map.lookup(&e.code, e.system).is_some() {
                report.mapped_events += 1;
            } else {
                report.unmapped_events += 1;
                *unmapped.entry((normalize_code(&e.code), e.system)).or_default() += 1;
            }
        }
    }
    report.mapped_pct = if report.total_events == 0 {
        0.0
    } else {
        100.0 * report.mapped_events as f64 / report.total_events as f64
    };
    let mut top: Vec<_> = unmapped.into_iter().map(|((c, s), n)| (c, s, n)).collect();
    top.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| (&a.0, a.1).cmp(&(&b.0, b.1))));
    top.truncate(20);
    report.top_unmapped = top;
    report
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDate;

    use super::*;
    use crate::cohort::{PatientRecord, Race, Sex, SlottedEvent};

    fn map() -> PhecodeMap {
        PhecodeMap::fixture()
    }

    #[test]
    fn fixture_lookup_is_case_and_dot_insensitive() {
        let m = map();
        assert_eq!(m.lookup("I10", CodeSystem::Icd10Cm), Some(("401.1", "Essential hypertension")));
        assert_eq!(m.lookup("i10", CodeSystem::Icd10Cm).map(|x| x.0), Some("401.1"));
        assert_eq!(m.lookup("E119", CodeSystem::Icd10Cm).map(|x| x.0), Some("250.2"));
        assert_eq!(m.lookup("ZZZ9", CodeSystem::Icd10Cm), None);
        assert_eq!(m.lookup("I10", CodeSystem::Icd9), None);
    }

    #[test]
    fn conflicting_rows_are_fatal() {
        let err = PhecodeMap::from_entries([
            ("I10".into(), CodeSystem::Icd10Cm, "401.1".into(), "a".into()),
            ("I10".into(), CodeSystem::Icd10Cm, "401.22".into(), "b".into()),
        ])
        .unwrap_err();
        match err {
            Error::MappingConflict { details, .. } => {
                assert!(details.contains("line 1") && details.contains("line 2"))
            }
            e => panic!("{e:?}"),
        }
        // identical duplicates are fine
        PhecodeMap::from_entries([
            ("I10".into(), CodeSystem::Icd10Cm, "401.1".into(), "a".into()),
            ("I10".into(), CodeSystem::Icd10Cm, "401.1".into(), "a".into()),
        ])
        .unwrap();
    }

    #[test]
    fn load_empty_and_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "icd_code,system_flag,phecode,phenotype\n").unwrap();
        assert!(load_phecode_map(&p).unwrap().is_empty());
        std::fs::write(&p, "icd_code,phecode\nI10,401.1\n").unwrap();
        assert!(matches!(load_phecode_map(&p), Err(Error::MissingColumns { .. })));
    }

    #[test]
    fn table1_vocabulary_shape() {
        let v = PhenotypeVocabulary::table1();
        assert_eq!(v.len(), 40);
        assert_eq!(v.entries()[0].phecode, "290.1");
        assert!(v.position("290.11").is_none());
        let m = map();
        for e in v.entries() {
            assert!(is_valid_phecode(&e.phecode));
            assert!(!m.codes_for(&e.phecode, CodeSystem::Icd10Cm).is_empty(), "{}", e.phecode);
            assert!(!m.codes_for(&e.phecode, CodeSystem::Icd9).is_empty(), "{}", e.phecode);
        }
    }

    fn cohort_with(events: &[(&str, &[(&str, usize)])]) -> Cohort {
        let d = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let mut c = Cohort {
            slot_count: 6,
            slot_days: 183,
            ..Default::default()
        };
        for (id, evs) in events {
            c.patients.push(PatientRecord {
                patient_id: id.to_string(),
                sex: Sex::F,
                race: Race::White,
                birth_date: NaiveDate::from_ymd_opt(1940, 1, 1).unwrap(),
                died: false,
            });
            c.index_date.insert(id.to_string(), d);
            c.pre_index_events.insert(
                id.to_string(),
                evs.iter()
                    .map(|(code, slot)| SlottedEvent {
                        code: code.to_string(),
                        system: CodeSystem::Icd10Cm,
                        date: d,
                        slot: *slot,
                    })
                    .collect(),
            );
        }
        c
    }

    #[test]
    fn ranking_counts_patients_and_breaks_ties_by_phecode() {
        let c = cohort_with(&[
            ("a", &[("I10", 1), ("I10", 2), ("E11.9", 3)]),
            ("b", &[("I10", 1)]),
            ("c", &[("I10", 4)]),
        ]);
        let ranked = phecode_prevalence(&c, &map());
        assert_eq!(ranked, vec![("401.1".to_string(), 3), ("250.2".to_string(), 1)]);

        let ties = cohort_with(&[("a", &[("E11.9", 1), ("A41.9", 1)])]);
        let ranked = phecode_prevalence(&ties, &map());
        assert_eq!(ranked[0].0, "038");
        assert_eq!(ranked[1].0, "250.2");
    }

    #[test]
    fn exclusions_skip_top_ranks() {
        let c = cohort_with(&[
            ("a", &[("I10", 1), ("E11.9", 1), ("F03.90", 2)]),
            ("b", &[("I10", 1), ("E11.9", 1)]),
            ("c", &[("I10", 1)]),
        ]);
        let opts = RankingOptions {
            review_size: 3,
            keep: 2,
            exclusions: ["401.1".to_string()].into(),
        };
        let (v, review) = rank_phenotypes(&c, &map(), &opts, &BTreeSet::new()).unwrap();
        assert_eq!(review.len(), 3);
        assert_eq!(v.phecodes().collect::<Vec<_>>(), vec!["250.2", "290.1"]);
        assert_eq!(v.entries()[0].patient_count, Some(2));

        let opts = RankingOptions {
            review_size: 60,
            keep: 4,
            exclusions: BTreeSet::new(),
        };
        assert!(matches!(
            rank_phenotypes(&c, &map(), &opts, &BTreeSet::new()),
            Err(Error::TooFewPhenotypes { found: 3, needed: 4 })
        ));
    }

    #[test]
    fn ad_phecode_never_ranked() {
        let c = cohort_with(&[("a", &[("I10", 1), ("G30.9", 1)])]);
        let m = map();
        let ad = m.phecodes_of(&crate::cohort::CohortConfig::default().normalized_ad_codes());
        assert_eq!(ad, ["290.11".to_string()].into());
        let opts = RankingOptions { review_size: 60, keep: 1, exclusions: BTreeSet::new() };
        let (v, review) = rank_phenotypes(&c, &m, &opts, &ad).unwrap();
        assert!(review.iter().all(|r| r.phecode != "290.11"));
        assert_eq!(v.phecodes().collect::<Vec<_>>(), vec!["401.1"]);
    }

    #[test]
    fn coverage_adds_up() {
        let c = cohort_with(&[("a", &[("I10", 1), ("ZZZ", 2)]), ("b", &[("ZZZ", 1)])]);
        let r = coverage_report(&c, &map());
        assert_eq!(r.total_events, 3);
        assert_eq!(r.mapped_events + r.unmapped_events, r.total_events);
        assert_eq!(r.top_unmapped[0], ("ZZZ".to_string(), CodeSystem::Icd10Cm, 2));
    }
}
