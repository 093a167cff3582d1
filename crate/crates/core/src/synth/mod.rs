//! Seeded synthetic cohorts with planted subtypes.
//!
//! Each patient draws a profile by mixture weight, then demographics, an
//! index date, independent Bernoulli condition flags per (phecode, slot),
//! mortality and post-index prescriptions. Patient `i` uses ChaCha stream
//! `i` of the seed, so generation order and thread count do not matter.

mod profiles;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use profiles::{acceptance_profiles, paper_like_profiles, single_cell_profiles};

use crate::artifact::{write_csv, Provenance};
use crate::cohort::{AgeGroup, CodeSystem, DeathRecord, DiagnosisEvent, PatientRecord, PrescriptionEvent, Race, RawTables, Sex};
use crate::drugs::AtcMap;
use crate::error::{Error, Result};
use crate::phenotype::PhecodeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubtypeProfile {
    pub name: String,
    pub mixture_weight: f64,
    /// Phecode -> probability for slots `1..=slot_count`, slot 1 nearest the
    /// index date.
    pub condition_slot_prob: BTreeMap<String, Vec<f64>>,
    pub sex_dist: BTreeMap<Sex, f64>,
    pub race_dist: BTreeMap<Race, f64>,
    pub age_dist: BTreeMap<AgeGroup, f64>,
    pub mortality_prob: f64,
    /// ATC3 class -> probability of a post-index prescription in it.
    #[serde(default)]
    pub drug_class_probs: BTreeMap<String, f64>,
}

fn check_prob(what: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what}: probability {p} outside [0, 1]")))
    }
}

fn check_dist<K: std::fmt::Debug>(what: &str, dist: &BTreeMap<K, f64>) -> Result<()> {
    for (k, p) in dist {
        check_prob(&format!("{what} {k:?}"), *p)?;
    }
    let total: f64 = dist.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

impl SubtypeProfile {
    pub fn validate(&self, slot_count: usize) -> Result<()> {
        let who = &self.name;
        if !(self.mixture_weight > 0.0 && self.mixture_weight <= 1.0) {
            return Err(Error::Config(format!("{who}: mixture_weight must lie in (0, 1]")));
        }
        for (ph, probs) in &self.condition_slot_prob {
            if probs.len() != slot_count {
                return Err(Error::Config(format!("{who}: {ph} has {} slot probabilities, expected {slot_count}", probs.len())));
            }
            for p in probs {
                check_prob(&format!("{who}: {ph}"), *p)?;
            }
        }
        check_dist(&format!("{who}: sex_dist"), &self.sex_dist)?;
        check_dist(&format!("{who}: race_dist"), &self.race_dist)?;
        check_dist(&format!("{who}: age_dist"), &self.age_dist)?;
        check_prob(&format!("{who}: mortality_prob"), self.mortality_prob)?;
        for (c, p) in &self.drug_class_probs {
            check_prob(&format!("{who}: drug {c}"), *p)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    /// Index dates are drawn uniformly from this inclusive range.
    pub index_window: (NaiveDate, NaiveDate),
    pub slot_days: u32,
    pub slot_count: usize,
    /// Events on or after this date are coded in ICD-10-CM.
    pub icd10_start: NaiveDate,
    /// Post-index prescriptions fall within this many days of the index.
    pub prescription_horizon_days: u32,
    /// Chance of one extra prescription dated before the index date.
    pub pre_index_prescription_prob: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            index_window: (NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(), NaiveDate::from_ymd_opt(2021, 1, 31).unwrap()),
            slot_days: 183,
            slot_count: 6,
            icd10_start: NaiveDate::from_ymd_opt(2015, 10, 1).unwrap(),
            prescription_horizon_days: 365,
            pre_index_prescription_prob: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SyntheticCohort {
    pub tables: RawTables,
    /// `(patient_id, profile index)` in generation order.
    pub truth: Vec<(String, usize)>,
    pub profile_names: Vec<String>,
    /// Planted slot of every diagnosis row; 0 for the AD event.
    pub intended_slots: Vec<usize>,
}

impl SyntheticCohort {
    pub fn truth_map(&self) -> BTreeMap<&str, usize> {
        self.truth.iter().map(|(p, g)| (p.as_str(), *g)).collect()
    }

    /// Writes the four input tables plus `truth.csv` into `dir`; returns the
    /// written file names.
    pub fn write_tables(&self, dir: &Path, provenance: Option<&Provenance>) -> Result<Vec<String>> {
        let t = &self.tables;
        write_csv(
            &dir.join("demographics.csv"),
            provenance,
            &["patient_id", "sex", "race", "birth_date"],
            t.patients.iter().map(|p| {
                [p.patient_id.clone(), p.sex.code().to_string(), p.race.code().to_string(), p.birth_date.to_string()]
            }),
        )?;
        write_csv(
            &dir.join("diagnoses.csv"),
            provenance,
            &["patient_id", "code", "system", "date"],
            t.diagnoses
                .iter()
                .map(|d| [d.patient_id.clone(), d.code.clone(), d.system.as_str().to_string(), d.date.to_string()]),
        )?;
        write_csv(
            &dir.join("prescriptions.csv"),
            provenance,
            &["patient_id", "rxcui", "date"],
            t.prescriptions.iter().map(|r| [r.patient_id.clone(), r.rxcui.clone(), r.date.to_string()]),
        )?;
        write_csv(
            &dir.join("deaths.csv"),
            provenance,
            &["patient_id", "death_date"],
            t.deaths.iter().map(|d| [d.patient_id.clone(), d.death_date.to_string()]),
        )?;
        write_csv(
            &dir.join("truth.csv"),
            provenance,
            &["patient_id", "profile", "profile_name"],
            self.truth
                .iter()
                .map(|(p, g)| [p.clone(), g.to_string(), self.profile_names[*g].clone()]),
        )?;
        Ok(["demographics.csv", "diagnoses.csv", "prescriptions.csv", "deaths.csv", "truth.csv"]
            .map(String::from)
            .to_vec())
    }
}

fn draw<K: Copy>(rng: &mut ChaCha8Rng, dist: &BTreeMap<K, f64>) -> K {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (k, p) in dist {
        acc += p;
        if *p > 0.0 {
            last = Some(*k);
            if u < acc {
                return *k;
            }
        }
    }
    last.expect("validated distribution has positive mass")
}

/// `index` shifted back by whole years, Feb 29 falling back to Feb 28.
fn years_before(index: NaiveDate, years: u32) -> NaiveDate {
    let y = index.year() - years as i32;
    index
        .with_year(y)
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(y, index.month(), 28).unwrap())
}

/// A date whose distance to `index` lands in `slot` (1-based).
pub fn slot_date(index: NaiveDate, slot: usize, slot_days: u32, offset: u32) -> NaiveDate {
    debug_assert!(offset < slot_days);
    index - Duration::days((slot as i64 - 1) * slot_days as i64 + offset as i64)
}

struct PatientDraw {
    patient: PatientRecord,
    diagnoses: Vec<(DiagnosisEvent, usize)>,
    prescriptions: Vec<PrescriptionEvent>,
    death: Option<DeathRecord>,
    profile: usize,
}

struct Lookups<'a> {
    codes: BTreeMap<(&'a str, CodeSystem), Vec<&'a str>>,
    rxcuis: BTreeMap<&'a str, Vec<&'a str>>,
    all_rxcuis: Vec<&'a str>,
}

fn lookups<'a>(profiles: &'a [SubtypeProfile], map: &'a PhecodeMap, atc: &'a AtcMap) -> Result<Lookups<'a>> {
    let mut codes = BTreeMap::new();
    let mut rxcuis = BTreeMap::new();
    for p in profiles {
        for ph in p.condition_slot_prob.keys() {
            for system in [CodeSystem::Icd9, CodeSystem::Icd10Cm] {
                let c = map.codes_for(ph, system);
                if c.is_empty() {
                    return Err(Error::Config(format!("{}: phecode {ph} has no {system} code in the map", p.name)));
                }
                codes.insert((ph.as_str(), system), c);
            }
        }
        for class in p.drug_class_probs.keys() {
            let r = atc.rxcuis_for(class);
            if r.is_empty() {
                return Err(Error::Config(format!("{}: ATC3 class {class} has no RxCUI in the map", p.name)));
            }
            rxcuis.insert(class.as_str(), r);
        }
    }
    let mut all_rxcuis: Vec<&str> = rxcuis.values().flatten().copied().collect();
    all_rxcuis.sort_unstable();
    all_rxcuis.dedup();
    Ok(Lookups { codes, rxcuis, all_rxcuis })
}

fn ad_event(pid: &str, date: NaiveDate, options: &SynthOptions) -> DiagnosisEvent {
    let (code, system) = if date < options.icd10_start {
        ("331.0", CodeSystem::Icd9)
    } else {
        ("G30.9", CodeSystem::Icd10Cm)
    };
    DiagnosisEvent {
        patient_id: pid.to_string(),
        code: code.to_string(),
        system,
        date,
    }
}

fn generate_patient(
    i: usize,
    seed: u64,
    profiles: &[SubtypeProfile],
    weights: &BTreeMap<usize, f64>,
    lk: &Lookups<'_>,
    options: &SynthOptions,
) -> PatientDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let pid = format!("P{:06}", i + 1);
    let g = draw(&mut rng, weights);
    let prof = &profiles[g];

    let sex = draw(&mut rng, &prof.sex_dist);
    let race = draw(&mut rng, &prof.race_dist);
    let age_group = draw(&mut rng, &prof.age_dist);
    let (lo, hi) = age_group.sample_range();
    let age = rng.random_range(lo..=hi);
    let (w0, w1) = options.index_window;
    let index = w0 + Duration::days(rng.random_range(0..=(w1 - w0).num_days()));
    let birth = years_before(index, age) - Duration::days(rng.random_range(0..365));

    let mut diagnoses = vec![(ad_event(&pid, index, options), 0)];
    for (ph, probs) in &prof.condition_slot_prob {
        for (s, p) in probs.iter().enumerate() {
            // draw unconditionally so each cell consumes the same randomness
            let hit = rng.random::<f64>() < *p;
            let offset = rng.random_range(0..options.slot_days);
            let pick: f64 = rng.random();
            if !hit {
                continue;
            }
            let date = slot_date(index, s + 1, options.slot_days, offset);
            let system = if date < options.icd10_start { CodeSystem::Icd9 } else { CodeSystem::Icd10Cm };
            let pool = &lk.codes[&(ph.as_str(), system)];
            let code = pool[((pick * pool.len() as f64) as usize).min(pool.len() - 1)];
            diagnoses.push((
                DiagnosisEvent {
                    patient_id: pid.clone(),
                    code: code.to_string(),
                    system,
                    date,
                },
                s + 1,
            ));
        }
    }

    let died = rng.random::<f64>() < prof.mortality_prob;
    let death_offset = rng.random_range(30..1500);
    let death = died.then(|| DeathRecord {
        patient_id: pid.clone(),
        death_date: index + Duration::days(death_offset),
    });

    let mut prescriptions = Vec::new();
    for (class, p) in &prof.drug_class_probs {
        let hit = rng.random::<f64>() < *p;
        let offset = rng.random_range(0..=options.prescription_horizon_days);
        let pick: f64 = rng.random();
        if hit {
            let pool = &lk.rxcuis[class.as_str()];
            prescriptions.push(PrescriptionEvent {
                patient_id: pid.clone(),
                rxcui: pool[((pick * pool.len() as f64) as usize).min(pool.len() - 1)].to_string(),
                date: index + Duration::days(offset as i64),
            });
        }
    }
    let pre = rng.random::<f64>() < options.pre_index_prescription_prob;
    let pre_offset = rng.random_range(1..400);
    let pick: f64 = rng.random();
    if pre && !lk.all_rxcuis.is_empty() {
        let pool = &lk.all_rxcuis;
        prescriptions.push(PrescriptionEvent {
            patient_id: pid.clone(),
            rxcui: pool[((pick * pool.len() as f64) as usize).min(pool.len() - 1)].to_string(),
            date: index - Duration::days(pre_offset),
        });
    }

    PatientDraw {
        patient: PatientRecord {
            patient_id: pid,
            sex,
            race,
            birth_date: birth,
            died,
        },
        diagnoses,
        prescriptions,
        death,
        profile: g,
    }
}

/// Generates `n_patients` patients; fully determined by `seed`.
pub fn generate_cohort(
    profiles: &[SubtypeProfile],
    n_patients: usize,
    seed: u64,
    map: &PhecodeMap,
    atc: &AtcMap,
    options: &SynthOptions,
) -> Result<SyntheticCohort> {
    if profiles.is_empty() {
        return Err(Error::Config("at least one subtype profile is required".into()));
    }
    for p in profiles {
        p.validate(options.slot_count)?;
    }
    let total: f64 = profiles.iter().map(|p| p.mixture_weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("profile mixture weights sum to {total}, expected 1")));
    }
    if n_patients < profiles.len() {
        return Err(Error::Config(format!("n_patients={n_patients} is below the profile count {}", profiles.len())));
    }
    if options.slot_days == 0 || options.slot_count == 0 || options.index_window.0 > options.index_window.1 {
        return Err(Error::Config("synth options need positive slots and an ordered index window".into()));
    }
    let lk = lookups(profiles, map, atc)?;
    let weights: BTreeMap<usize, f64> = profiles.iter().enumerate().map(|(i, p)| (i, p.mixture_weight)).collect();
    let draws: Vec<PatientDraw> = (0..n_patients)
        .into_par_iter()
        .map(|i| generate_patient(i, seed, profiles, &weights, &lk, options))
        .collect();

    let mut out = SyntheticCohort {
        profile_names: profiles.iter().map(|p| p.name.clone()).collect(),
        ..Default::default()
    };
    for d in draws {
        out.truth.push((d.patient.patient_id.clone(), d.profile));
        out.tables.patients.push(d.patient);
        for (e, s) in d.diagnoses {
            out.tables.diagnoses.push(e);
            out.intended_slots.push(s);
        }
        out.tables.prescriptions.extend(d.prescriptions);
        out.tables.deaths.extend(d.death);
    }
    Ok(out)
}
