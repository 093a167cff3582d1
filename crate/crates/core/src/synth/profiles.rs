//! Bundled profile sets.

use std::collections::BTreeMap;

use super::SubtypeProfile;
use crate::cohort::{AgeGroup, Race, Sex};

const SLOTS: usize = 6;

fn flat(p: f64) -> Vec<f64> {
    vec![p; SLOTS]
}

/// `hi` in slots `1..=upto`, `lo` afterwards.
fn recent(hi: f64, lo: f64, upto: usize) -> Vec<f64> {
    (1..=SLOTS).map(|s| if s <= upto { hi } else { lo }).collect()
}

fn sex(female: f64) -> BTreeMap<Sex, f64> {
    BTreeMap::from([(Sex::F, female), (Sex::M, 1.0 - female)])
}

/// White and Black shares given; the remaining 25% is spread over the
/// smaller categories so that every level is populated.
fn race(white: f64, black: f64) -> BTreeMap<Race, f64> {
    debug_assert!((white + black - 0.75).abs() < 1e-12);
    BTreeMap::from([
        (Race::AmericanIndianAlaskaNative, 0.02),
        (Race::Asian, 0.03),
        (Race::BlackAfricanAmerican, black),
        (Race::NativeHawaiianPacificIslander, 0.02),
        (Race::White, white),
        (Race::MultipleRace, 0.03),
        (Race::RefuseToAnswer, 0.02),
        (Race::Other, 0.08),
        (Race::Unknown, 0.05),
    ])
}

fn ages(under65: f64, to75: f64, to85: f64, over85: f64) -> BTreeMap<AgeGroup, f64> {
    BTreeMap::from([
        (AgeGroup::Under65, under65),
        (AgeGroup::From65To75, to75),
        (AgeGroup::From75To85, to85),
        (AgeGroup::Over85, over85),
    ])
}

fn conditions(rows: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
    rows.iter().map(|(p, v)| (p.to_string(), v.clone())).collect()
}

fn drugs(rows: &[(&str, f64)]) -> BTreeMap<String, f64> {
    rows.iter().map(|(c, p)| (c.to_string(), *p)).collect()
}

/// Four subtypes following the narrative descriptions of the temporal
/// clusters: a long-standing cardiometabolic group, a hypertension-only
/// group, a group with many conditions close to diagnosis and a group
/// with an extended dementia history. Intended for demo runs.
pub fn paper_like_profiles() -> Vec<SubtypeProfile> {
    let background = |scale: f64| -> Vec<(&'static str, Vec<f64>)> {
        ["745", "418", "785", "760", "740.9", "244.4", "110.11", "261.4"]
            .into_iter()
            .map(|p| (p, flat(0.06 * scale)))
            .collect()
    };
    let mut c0 = vec![
        ("401.1", flat(0.75)),
        ("250.2", flat(0.6)),
        ("272.1", flat(0.6)),
        ("290.1", recent(0.5, 0.02, 1)),
        ("411.4", flat(0.15)),
    ];
    c0.extend(background(1.0));
    let mut c1 = vec![("401.1", flat(0.7)), ("290.1", recent(0.45, 0.02, 1)), ("272.1", flat(0.15))];
    c1.extend(background(0.6));
    let mut c2 = vec![
        ("401.1", flat(0.7)),
        ("290.1", recent(0.5, 0.03, 1)),
        ("591", recent(0.45, 0.05, 2)),
        ("798", recent(0.4, 0.05, 2)),
        ("285", recent(0.4, 0.06, 2)),
        ("292.4", recent(0.45, 0.03, 1)),
        ("585.1", recent(0.3, 0.02, 1)),
        ("276.5", recent(0.3, 0.02, 1)),
        ("480", recent(0.25, 0.03, 2)),
        ("250.2", flat(0.25)),
        ("428.1", recent(0.2, 0.08, 3)),
    ];
    c2.extend(background(1.0));
    let mut c3 = vec![
        ("401.1", flat(0.65)),
        ("290.1", recent(0.6, 0.05, 4)),
        ("296.22", flat(0.2)),
        ("300.1", flat(0.2)),
        ("350.2", flat(0.2)),
        ("530.11", flat(0.2)),
        ("427.21", flat(0.15)),
        ("496", flat(0.15)),
        ("563", flat(0.2)),
        ("585.3", flat(0.15)),
        ("295.3", flat(0.1)),
    ];
    c3.extend(background(2.0));
    vec![
        SubtypeProfile {
            name: "cardiometabolic".into(),
            mixture_weight: 0.17,
            condition_slot_prob: conditions(&c0),
            sex_dist: sex(0.6),
            race_dist: race(0.50, 0.25),
            age_dist: ages(0.2, 0.35, 0.3, 0.15),
            mortality_prob: 0.12,
            drug_class_probs: drugs(&[("N02B", 0.45), ("A02B", 0.35), ("A10A", 0.3), ("C10A", 0.3), ("B01A", 0.2)]),
        },
        SubtypeProfile {
            name: "hypertension".into(),
            mixture_weight: 0.46,
            condition_slot_prob: conditions(&c1),
            sex_dist: sex(0.62),
            race_dist: race(0.63, 0.12),
            age_dist: ages(0.1, 0.27, 0.4, 0.23),
            mortality_prob: 0.14,
            drug_class_probs: drugs(&[("N02B", 0.4), ("H02A", 0.25), ("N06D", 0.3), ("A02B", 0.2)]),
        },
        SubtypeProfile {
            name: "acute-comorbid".into(),
            mixture_weight: 0.20,
            condition_slot_prob: conditions(&c2),
            sex_dist: sex(0.52),
            race_dist: race(0.66, 0.09),
            age_dist: ages(0.05, 0.2, 0.42, 0.33),
            mortality_prob: 0.25,
            drug_class_probs: drugs(&[("N02B", 0.5), ("A06A", 0.35), ("A10A", 0.3), ("N02A", 0.25), ("N05A", 0.15)]),
        },
        SubtypeProfile {
            name: "dementia-history".into(),
            mixture_weight: 0.17,
            condition_slot_prob: conditions(&c3),
            sex_dist: sex(0.68),
            race_dist: race(0.65, 0.10),
            age_dist: ages(0.08, 0.3, 0.4, 0.22),
            mortality_prob: 0.13,
            drug_class_probs: drugs(&[
                ("N02B", 0.45),
                ("A06A", 0.3),
                ("N05C", 0.25),
                ("H02A", 0.25),
                ("N03A", 0.2),
                ("N06A", 0.25),
            ]),
        },
    ]
}

/// Four equally weighted profiles, each with its own two-phecode signature
/// at 0.8 in all six slots (0.1 elsewhere) over a shared background.
pub fn acceptance_profiles() -> Vec<SubtypeProfile> {
    let signatures = [["250.2", "272.1"], ["591", "798"], ["285", "292.4"], ["296.22", "300.1"]];
    let noise = ["745", "418", "785", "760", "740.9", "244.4", "563", "480"];
    signatures
        .iter()
        .enumerate()
        .map(|(g, own)| {
            let mut rows: Vec<(&str, Vec<f64>)> = vec![("401.1", flat(0.5))];
            for (h, sig) in signatures.iter().enumerate() {
                for ph in sig {
                    rows.push((ph, flat(if h == g { 0.8 } else { 0.1 })));
                }
            }
            rows.extend(noise.iter().map(|p| (*p, flat(0.05))));
            debug_assert!(own.iter().all(|p| rows.iter().any(|(q, _)| q == p)));
            SubtypeProfile {
                name: format!("planted-{g}"),
                mixture_weight: 0.25,
                condition_slot_prob: conditions(&rows),
                sex_dist: sex([0.6, 0.5, 0.55, 0.65][g]),
                race_dist: race([0.55, 0.6, 0.5, 0.65][g], [0.2, 0.15, 0.25, 0.1][g]),
                age_dist: [ages(0.2, 0.3, 0.3, 0.2), ages(0.1, 0.3, 0.4, 0.2), ages(0.1, 0.2, 0.4, 0.3), ages(0.15, 0.35, 0.35, 0.15)][g].clone(),
                mortality_prob: [0.1, 0.15, 0.25, 0.12][g],
                drug_class_probs: drugs(&[("N02B", 0.4), ("A10A", [0.3, 0.1, 0.2, 0.1][g]), ("N06D", [0.1, 0.3, 0.1, 0.2][g])]),
            }
        })
        .collect()
}

/// `k` profiles whose patients each carry exactly one feature: phecode `g`
/// of the vocabulary in slot 1 with probability one.
pub fn single_cell_profiles(phecodes: &[&str]) -> Vec<SubtypeProfile> {
    let k = phecodes.len();
    phecodes
        .iter()
        .map(|ph| {
            let mut probs = vec![0.0; SLOTS];
            probs[0] = 1.0;
            SubtypeProfile {
                name: format!("only-{ph}"),
                mixture_weight: 1.0 / k as f64,
                condition_slot_prob: BTreeMap::from([(ph.to_string(), probs)]),
                sex_dist: sex(0.5),
                race_dist: race(0.6, 0.15),
                age_dist: ages(0.25, 0.25, 0.25, 0.25),
                mortality_prob: 0.1,
                drug_class_probs: BTreeMap::new(),
            }
        })
        .collect()
}
