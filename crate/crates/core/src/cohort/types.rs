use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
    Unknown,
}

impl Sex {
    pub const ALL: [Sex; 3] = [Sex::F, Sex::M, Sex::Unknown];

    pub fn code(self) -> &'static str {
        match self {
            Sex::F => "F",
            Sex::M => "M",
            Sex::Unknown => "UN",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sex::F => "Female",
            Sex::M => "Male",
            Sex::Unknown => "Unknown",
        }
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "F" | "FEMALE" => Ok(Sex::F),
            "M" | "MALE" => Ok(Sex::M),
            "" | "U" | "UN" | "UNKNOWN" => Ok(Sex::Unknown),
            other => Err(Error::Invalid(format!("unrecognized sex code {other:?}"))),
        }
    }
}

/// Self-reported race using the CDM two-character codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    AmericanIndianAlaskaNative,
    Asian,
    BlackAfricanAmerican,
    NativeHawaiianPacificIslander,
    White,
    MultipleRace,
    RefuseToAnswer,
    Other,
    Unknown,
}

impl Race {
    pub const ALL: [Race; 9] = [
        Race::AmericanIndianAlaskaNative,
        Race::Asian,
        Race::BlackAfricanAmerican,
        Race::NativeHawaiianPacificIslander,
        Race::White,
        Race::MultipleRace,
        Race::RefuseToAnswer,
        Race::Other,
        Race::Unknown,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Race::AmericanIndianAlaskaNative => "01",
            Race::Asian => "02",
            Race::BlackAfricanAmerican => "03",
            Race::NativeHawaiianPacificIslander => "04",
            Race::White => "05",
            Race::MultipleRace => "06",
            Race::RefuseToAnswer => "07",
            Race::Other => "OT",
            Race::Unknown => "UN",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Race::AmericanIndianAlaskaNative => "American Indian or Alaska Native",
            Race::Asian => "Asian",
            Race::BlackAfricanAmerican => "Black or African American",
            Race::NativeHawaiianPacificIslander => "Native Hawaiian or Other Pacific Islander",
            Race::White => "White",
            Race::MultipleRace => "Multiple Race",
            Race::RefuseToAnswer => "Refuse to Answer",
            Race::Other => "Other",
            Race::Unknown => "Unknown",
        }
    }
}

impl FromStr for Race {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_uppercase();
        Race::ALL
            .into_iter()
            .find(|r| r.code() == s)
            .ok_or_else(|| Error::Invalid(format!("unrecognized race code {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CodeSystem {
    #[serde(rename = "ICD9")]
    Icd9,
    #[serde(rename = "ICD10CM")]
    Icd10Cm,
}

impl CodeSystem {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeSystem::Icd9 => "ICD9",
            CodeSystem::Icd10Cm => "ICD10CM",
        }
    }

    /// Numeric flag used by phecode mapping tables (`9` or `10`).
    pub fn from_flag(flag: &str) -> Option<Self> {
        match flag.trim() {
            "9" => Some(CodeSystem::Icd9),
            "10" => Some(CodeSystem::Icd10Cm),
            _ => None,
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            CodeSystem::Icd9 => "9",
            CodeSystem::Icd10Cm => "10",
        }
    }
}

impl FromStr for CodeSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ICD9" | "ICD9CM" | "09" | "9" => Ok(CodeSystem::Icd9),
            "ICD10CM" | "ICD10" | "10" => Ok(CodeSystem::Icd10Cm),
            other => Err(Error::Invalid(format!("unrecognized code system {other:?}"))),
        }
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub sex: Sex,
    pub race: Race,
    pub birth_date: NaiveDate,
    pub died: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiagnosisEvent {
    pub patient_id: String,
    pub code: String,
    pub system: CodeSystem,
    pub date: NaiveDate,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrescriptionEvent {
    pub patient_id: String,
    pub rxcui: String,
    pub date: NaiveDate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeathRecord {
    pub patient_id: String,
    pub death_date: NaiveDate,
}

/// Age bins on the first AD diagnosis date. Bins are half-open: a patient who
/// turned exactly 75 belongs to `From75To85`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    Under65,
    From65To75,
    From75To85,
    Over85,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 4] = [
        AgeGroup::Under65,
        AgeGroup::From65To75,
        AgeGroup::From75To85,
        AgeGroup::Over85,
    ];

    pub fn from_age(age: u32) -> Self {
        match age {
            0..=64 => AgeGroup::Under65,
            65..=74 => AgeGroup::From65To75,
            75..=84 => AgeGroup::From75To85,
            _ => AgeGroup::Over85,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Under65 => "< 65",
            AgeGroup::From65To75 => "65-75",
            AgeGroup::From75To85 => "75-85",
            AgeGroup::Over85 => ">= 85",
        }
    }

    /// Inclusive age range used when sampling synthetic birth dates.
    pub fn sample_range(self) -> (u32, u32) {
        match self {
            AgeGroup::Under65 => (50, 64),
            AgeGroup::From65To75 => (65, 74),
            AgeGroup::From75To85 => (75, 84),
            AgeGroup::Over85 => (85, 99),
        }
    }
}

impl FromStr for AgeGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgeGroup::ALL
            .into_iter()
            .find(|g| g.label() == s.trim())
            .or(match s.trim() {
                "Under65" => Some(AgeGroup::Under65),
                "From65To75" => Some(AgeGroup::From65To75),
                "From75To85" => Some(AgeGroup::From75To85),
                "Over85" => Some(AgeGroup::Over85),
                _ => None,
            })
            .ok_or_else(|| Error::Invalid(format!("unrecognized age group {s:?}")))
    }
}
