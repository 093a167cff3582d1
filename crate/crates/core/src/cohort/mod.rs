//! Cohort construction: index dates, inclusion criteria and timeslots.

mod io;
mod types;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub use io::{
    parse_date, parse_tables, read_deaths, read_demographics, read_diagnoses, read_prescriptions,
    RawTables, Reject, TablePaths,
};
pub(crate) use io::{column_indices, open_reader};
pub use types::{
    AgeGroup, CodeSystem, DeathRecord, DiagnosisEvent, PatientRecord, PrescriptionEvent, Race, Sex,
};

use crate::error::{Error, Result};
use crate::phenotype::{PhecodeMap, PhenotypeVocabulary};

pub const DEFAULT_AD_CODES: [&str; 9] = [
    "331.0", "G30", "G300", "G30.0", "G301", "G308", "G30.8", "G309", "G30.9",
];

/// Uppercases and strips dots and whitespace so `"g30.9"` and `"G309"`
/// compare equal.
pub fn normalize_code(code: &str) -> String {
    code.chars()
        .filter(|c| *c != '.' && !c.is_whitespace())
        .map(|c| c.to_ascii_uppercase())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub ad_code_set: Vec<String>,
    pub min_age_years: u32,
    pub diagnosis_window: (NaiveDate, NaiveDate),
    pub slot_count: usize,
    pub slot_days: u32,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            ad_code_set: DEFAULT_AD_CODES.iter().map(|s| s.to_string()).collect(),
            min_age_years: 20,
            diagnosis_window: (
                NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2021, 1, 31).unwrap(),
            ),
            slot_count: 6,
            slot_days: 183,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.slot_count < 1 {
            return Err(Error::Config("slot_count must be >= 1".into()));
        }
        if self.slot_days < 1 {
            return Err(Error::Config("slot_days must be >= 1".into()));
        }
        if self.diagnosis_window.0 >= self.diagnosis_window.1 {
            return Err(Error::Config("diagnosis window start must precede end".into()));
        }
        if self.ad_code_set.is_empty() {
            return Err(Error::Config("ad_code_set is empty".into()));
        }
        Ok(())
    }

    pub fn normalized_ad_codes(&self) -> HashSet<String> {
        self.ad_code_set.iter().map(|c| normalize_code(c)).collect()
    }

    /// Days covered by all slots together; day offsets `0..span` are slotted.
    pub fn span_days(&self) -> i64 {
        self.slot_count as i64 * self.slot_days as i64
    }
}

/// Earliest AD-coded event per patient. Patients without an AD code are absent.
pub fn find_first_ad_date(
    diagnoses: &[DiagnosisEvent],
    ad_codes: &HashSet<String>,
) -> BTreeMap<String, NaiveDate> {
    let mut first: BTreeMap<String, NaiveDate> = BTreeMap::new();
    for ev in diagnoses {
        if !ad_codes.contains(&normalize_code(&ev.code)) {
            continue;
        }
        first
            .entry(ev.patient_id.clone())
            .and_modify(|d| *d = (*d).min(ev.date))
            .or_insert(ev.date);
    }
    first
}

/// Maps an event to its 1-based timeslot counting back from the index date.
///
/// With `d = index - event` in days, slot `s` covers
/// `(s-1)*slot_days <= d < s*slot_days`. Events on the index date are slot 1;
/// events after it, or older than the last slot, get `None`.
pub fn assign_timeslot(
    event_date: NaiveDate,
    index_date: NaiveDate,
    slot_days: u32,
    slot_count: usize,
) -> Option<usize> {
    let d = (index_date - event_date).num_days();
    let span = slot_count as i64 * slot_days as i64;
    if (0..span).contains(&d) {
        Some((d / slot_days as i64) as usize + 1)
    } else {
        None
    }
}

/// Completed years at `index_date` and the corresponding bin.
pub fn compute_age_group(birth_date: NaiveDate, index_date: NaiveDate) -> Result<(u32, AgeGroup)> {
    if birth_date > index_date {
        return Err(Error::Invalid(format!(
            "birth date {birth_date} is after index date {index_date}"
        )));
    }
    let mut years = index_date.year() - birth_date.year();
    if (index_date.month(), index_date.day()) < (birth_date.month(), birth_date.day()) {
        years -= 1;
    }
    let years = years as u32;
    Ok((years, AgeGroup::from_age(years)))
}

/// A pre-index, non-AD diagnosis with its timeslot.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlottedEvent {
    pub code: String,
    pub system: CodeSystem,
    pub date: NaiveDate,
    pub slot: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub slot_count: usize,
    pub slot_days: u32,
    /// Sorted by `patient_id`; this order fixes feature-matrix rows.
    pub patients: Vec<PatientRecord>,
    pub index_date: BTreeMap<String, NaiveDate>,
    pub pre_index_events: BTreeMap<String, Vec<SlottedEvent>>,
    /// Prescriptions dated on or after the index date.
    pub post_index_prescriptions: BTreeMap<String, Vec<PrescriptionEvent>>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    pub fn events(&self, patient_id: &str) -> &[SlottedEvent] {
        self.pre_index_events
            .get(patient_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn age_group(&self, patient: &PatientRecord) -> Result<AgeGroup> {
        let index = self.index_date.get(&patient.patient_id).ok_or_else(|| {
            Error::Invalid(format!("patient {} has no index date", patient.patient_id))
        })?;
        Ok(compute_age_group(patient.birth_date, *index)?.1)
    }

    pub fn all_post_index_prescriptions(&self) -> Vec<PrescriptionEvent> {
        self.post_index_prescriptions.values().flatten().cloned().collect()
    }

    /// Keeps only the listed patients (and their views).
    fn retain(&mut self, keep: &HashSet<String>) {
        self.patients.retain(|p| keep.contains(&p.patient_id));
        self.index_date.retain(|k, _| keep.contains(k));
        self.pre_index_events.retain(|k, _| keep.contains(k));
        self.post_index_prescriptions.retain(|k, _| keep.contains(k));
    }

    pub fn check_invariants(&self) -> Result<()> {
        let ids: HashSet<&str> = self.patients.iter().map(|p| p.patient_id.as_str()).collect();
        if ids.len() != self.patients.len() {
            return Err(Error::Invalid("duplicate patient ids in cohort".into()));
        }
        for id in self.index_date.keys() {
            if !ids.contains(id.as_str()) {
                return Err(Error::Invalid(format!("index date for unknown patient {id}")));
            }
        }
        for events in self.pre_index_events.values() {
            if events.iter().any(|e| e.slot < 1 || e.slot > self.slot_count) {
                return Err(Error::Invalid("slot index out of range".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStep {
    pub criterion: String,
    pub remaining: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub steps: Vec<FunnelStep>,
}

impl FunnelReport {
    fn push(&mut self, criterion: impl Into<String>, remaining: usize) {
        self.steps.push(FunnelStep {
            criterion: criterion.into(),
            remaining,
        });
    }
}

#[derive(Clone, Debug)]
pub struct CohortSelection {
    pub cohort: Cohort,
    pub funnel: FunnelReport,
    pub warnings: Vec<String>,
}

/// Applies the index-date, window and age criteria and slots pre-index events.
///
/// The result is the population phenotypes are ranked on; [`select_cohort`]
/// adds the condition criterion on top of it.
pub fn candidate_cohort(raw: &RawTables, config: &CohortConfig) -> Result<CohortSelection> {
    config.validate()?;
    let ad_codes = config.normalized_ad_codes();
    let mut funnel = FunnelReport::default();
    let mut warnings = Vec::new();

    let mut patients: Vec<PatientRecord> = raw.patients.clone();
    patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    funnel.push("patients in demographics", patients.len());

    let first_ad = find_first_ad_date(&raw.diagnoses, &ad_codes);
    patients.retain(|p| first_ad.contains_key(&p.patient_id));
    funnel.push("has AD diagnosis", patients.len());

    let (start, end) = config.diagnosis_window;
    patients.retain(|p| {
        let d = first_ad[&p.patient_id];
        d >= start && d <= end
    });
    funnel.push(
        format!("first AD diagnosis between {start} and {end}"),
        patients.len(),
    );

    let mut kept = Vec::with_capacity(patients.len());
    for p in patients {
        match compute_age_group(p.birth_date, first_ad[&p.patient_id]) {
            Ok((age, _)) if age >= config.min_age_years => kept.push(p),
            Ok(_) => {}
            Err(e) => warnings.push(format!("{}: {e}", p.patient_id)),
        }
    }
    let mut patients = kept;
    funnel.push(
        format!("at least {} years old at first AD diagnosis", config.min_age_years),
        patients.len(),
    );

    let died: HashSet<&str> = raw.deaths.iter().map(|d| d.patient_id.as_str()).collect();
    for p in &mut patients {
        p.died = died.contains(p.patient_id.as_str());
    }

    let index_date: BTreeMap<String, NaiveDate> = patients
        .iter()
        .map(|p| (p.patient_id.clone(), first_ad[&p.patient_id]))
        .collect();

    let mut dedup: HashMap<&str, BTreeSet<(String, CodeSystem, NaiveDate)>> = HashMap::new();
    for ev in &raw.diagnoses {
        let Some(&index) = index_date.get(&ev.patient_id) else {
            continue;
        };
        let code = normalize_code(&ev.code);
        if ad_codes.contains(&code) {
            continue;
        }
        if assign_timeslot(ev.date, index, config.slot_days, config.slot_count).is_some() {
            dedup
                .entry(ev.patient_id.as_str())
                .or_default()
                .insert((code, ev.system, ev.date));
        }
    }
    let pre_index_events = dedup
        .into_iter()
        .map(|(id, set)| {
            let index = index_date[id];
            let events = set
                .into_iter()
                .map(|(code, system, date)| SlottedEvent {
                    slot: assign_timeslot(date, index, config.slot_days, config.slot_count)
                        .expect("filtered above"),
                    code,
                    system,
                    date,
                })
                .collect();
            (id.to_string(), events)
        })
        .collect();

    let mut post_index_prescriptions: BTreeMap<String, Vec<PrescriptionEvent>> = BTreeMap::new();
    for rx in &raw.prescriptions {
        if let Some(&index) = index_date.get(&rx.patient_id) {
            if rx.date >= index {
                post_index_prescriptions
                    .entry(rx.patient_id.clone())
                    .or_default()
                    .push(rx.clone());
            }
        }
    }
    for list in post_index_prescriptions.values_mut() {
        list.sort();
        list.dedup();
    }

    let cohort = Cohort {
        slot_count: config.slot_count,
        slot_days: config.slot_days,
        patients,
        index_date,
        pre_index_events,
        post_index_prescriptions,
    };
    cohort.check_invariants()?;
    Ok(CohortSelection {
        cohort,
        funnel,
        warnings,
    })
}

/// Full inclusion funnel: [`candidate_cohort`] followed by the requirement
/// of at least one vocabulary condition in some timeslot.
pub fn select_cohort(
    raw: &RawTables,
    config: &CohortConfig,
    vocabulary: &PhenotypeVocabulary,
    map: &PhecodeMap,
) -> Result<CohortSelection> {
    let CohortSelection {
        mut cohort,
        mut funnel,
        mut warnings,
    } = candidate_cohort(raw, config)?;
    let vocab: HashSet<&str> = vocabulary.phecodes().collect();
    let keep: HashSet<String> = cohort
        .patients
        .iter()
        .filter(|p| {
            cohort.events(&p.patient_id).iter().any(|e| {
                map.lookup(&e.code, e.system)
                    .is_some_and(|(phecode, _)| vocab.contains(phecode))
            })
        })
        .map(|p| p.patient_id.clone())
        .collect();
    cohort.retain(&keep);
    funnel.push(
        format!(
            "has a top-{} condition in timeslots 1-{}",
            vocabulary.len(),
            config.slot_count
        ),
        cohort.len(),
    );
    if cohort.is_empty() {
        let msg = "no patients satisfy the inclusion criteria".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(CohortSelection {
        cohort,
        funnel,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn dx(id: &str, code: &str, system: CodeSystem, d: &str) -> DiagnosisEvent {
        DiagnosisEvent {
            patient_id: id.into(),
            code: code.into(),
            system,
            date: date(d),
        }
    }

    #[test]
    fn first_ad_date_mixes_icd9_and_icd10() {
        let codes = CohortConfig::default().normalized_ad_codes();
        let events = vec![
            dx("A", "G30.9", CodeSystem::Icd10Cm, "2015-03-01"),
            dx("A", "331.0", CodeSystem::Icd9, "2014-01-01"),
            dx("B", "I10", CodeSystem::Icd10Cm, "2014-01-01"),
            dx("C", "G301", CodeSystem::Icd10Cm, "2016-05-05"),
        ];
        let first = find_first_ad_date(&events, &codes);
        assert_eq!(first.get("A"), Some(&date("2014-01-01")));
        assert_eq!(first.get("B"), None);
        assert_eq!(first.get("C"), Some(&date("2016-05-05")));
    }

    #[test]
    fn normalization_is_idempotent() {
        for c in ["G30.9", "g309", " 331.0 ", "I10"] {
            let once = normalize_code(c);
            assert_eq!(normalize_code(&once), once);
        }
        assert_eq!(normalize_code("G30.9"), normalize_code("G309"));
    }

    #[test]
    fn timeslot_boundaries() {
        let index = date("2020-06-30");
        let slot = |d: i64| assign_timeslot(index - chrono::Duration::days(d), index, 183, 6);
        assert_eq!(slot(0), Some(1));
        assert_eq!(slot(5), Some(1));
        assert_eq!(slot(182), Some(1));
        assert_eq!(slot(183), Some(2));
        assert_eq!(slot(1097), Some(6));
        assert_eq!(slot(1098), None);
        assert_eq!(slot(-1), None);
    }

    #[test]
    fn timeslots_partition_the_window() {
        let index = date("2016-02-29");
        let mut counts = [0usize; 6];
        for d in 0..=1097 {
            let s = assign_timeslot(index - chrono::Duration::days(d), index, 183, 6).unwrap();
            assert_eq!(s, (d / 183) as usize + 1);
            counts[s - 1] += 1;
        }
        assert_eq!(counts, [183; 6]);
    }

    #[test]
    fn age_groups() {
        assert_eq!(
            compute_age_group(date("1950-06-01"), date("2015-05-31")).unwrap(),
            (64, AgeGroup::Under65)
        );
        assert_eq!(
            compute_age_group(date("1940-01-01"), date("2015-01-01")).unwrap(),
            (75, AgeGroup::From75To85)
        );
        assert!(compute_age_group(date("2016-01-01"), date("2015-01-01")).is_err());
        let labels: Vec<_> = AgeGroup::ALL.iter().map(|g| g.label()).collect();
        assert_eq!(labels, ["< 65", "65-75", "75-85", ">= 85"]);
    }

    fn patient(id: &str, birth: &str) -> PatientRecord {
        PatientRecord {
            patient_id: id.into(),
            sex: Sex::F,
            race: Race::White,
            birth_date: date(birth),
            died: false,
        }
    }

    fn fixture() -> (RawTables, PhecodeMap, PhenotypeVocabulary) {
        let raw = RawTables {
            patients: vec![
                patient("ok", "1940-01-01"),
                patient("young", "1997-01-01"),
                patient("nocond", "1940-01-01"),
                patient("early", "1940-01-01"),
                patient("noad", "1940-01-01"),
            ],
            diagnoses: vec![
                dx("ok", "G30.9", CodeSystem::Icd10Cm, "2016-06-01"),
                dx("ok", "I10", CodeSystem::Icd10Cm, "2016-01-01"),
                dx("ok", "I10", CodeSystem::Icd10Cm, "2016-01-01"),
                dx("young", "G30.9", CodeSystem::Icd10Cm, "2016-06-01"),
                dx("young", "I10", CodeSystem::Icd10Cm, "2016-01-01"),
                dx("nocond", "G30.9", CodeSystem::Icd10Cm, "2016-06-01"),
                dx("nocond", "I10", CodeSystem::Icd10Cm, "2010-01-01"),
                dx("early", "331.0", CodeSystem::Icd9, "2010-06-01"),
                dx("noad", "I10", CodeSystem::Icd10Cm, "2016-01-01"),
            ],
            prescriptions: vec![],
            deaths: vec![DeathRecord {
                patient_id: "ok".into(),
                death_date: date("2019-01-01"),
            }],
            rejects: vec![],
        };
        let map = PhecodeMap::from_entries([(
            "I10".to_string(),
            CodeSystem::Icd10Cm,
            "401.1".to_string(),
            "Essential hypertension".to_string(),
        )])
        .unwrap();
        let vocab = PhenotypeVocabulary::new(vec![(
            "401.1".to_string(),
            "Essential hypertension".to_string(),
        )])
        .unwrap();
        (raw, map, vocab)
    }

    #[test]
    fn selection_funnel_is_monotone_and_applies_each_criterion() {
        let (raw, map, vocab) = fixture();
        let sel = select_cohort(&raw, &CohortConfig::default(), &vocab, &map).unwrap();
        let counts: Vec<usize> = sel.funnel.steps.iter().map(|s| s.remaining).collect();
        assert_eq!(counts, vec![5, 4, 3, 2, 1]);
        assert!(counts.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(sel.cohort.patient_ids(), vec!["ok"]);
        assert!(sel.cohort.patients[0].died);
        // duplicate event collapsed
        assert_eq!(sel.cohort.events("ok").len(), 1);
        assert_eq!(sel.cohort.events("ok")[0].slot, 1);
        sel.cohort.check_invariants().unwrap();
    }

    #[test]
    fn empty_selection_warns_not_fails() {
        let (mut raw, map, vocab) = fixture();
        raw.diagnoses.retain(|d| d.code != "I10");
        let sel = select_cohort(&raw, &CohortConfig::default(), &vocab, &map).unwrap();
        assert!(sel.cohort.is_empty());
        assert!(!sel.warnings.is_empty());
    }
}
