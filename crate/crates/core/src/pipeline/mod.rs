//! Stage orchestration behind the CLI. Each stage reads the artifacts of
//! earlier stages from the output directory and writes its own.

mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::artifact::{
    fmt_real, manifest_entry, read_json, write_csv, write_json, Manifest, ManifestEntry, Provenance, TOOL_NAME,
    TOOL_VERSION,
};
use crate::cluster::{
    adjusted_rand_index, detect_elbow, elbow_sse_curve, spectral_cluster, ClusterAssignment, ElbowCurve,
    KMeansConfig,
};
use crate::cohort::{
    open_reader, parse_tables, select_cohort, candidate_cohort, AgeGroup, Cohort, Race, Sex, TablePaths,
};
use crate::drugs::{default_drug_classes, drug_prevalence_by_cluster, load_atc_map, load_drug_classes, AtcMap, DrugClass};
use crate::error::{Error, Result};
use crate::phenotype::{
    build_aggregate_matrix, build_temporal_matrix, load_phecode_map, rank_phenotypes, FeatureMatrix, Layout,
    PhecodeMap, PhenotypeVocabulary,
};
use crate::report::{
    cluster_crosstab, condition_prevalence, demographic_breakdown, write_assignments, write_crosstab,
    write_demographics, write_drug_usage, write_elbow, write_mlr, write_mlr_table, write_prevalence,
    write_stats_grid, write_stats_grid_raw, MlrSummary, PrevalenceMode, ReportFormat, ASSIGNMENTS_CSV,
    CROSSTAB_CSV, DEMOGRAPHICS_CSV, DRUG_USAGE_CSV, ELBOW_CSV, MLR_CSV, MLR_JSON, MLR_TABLE_CSV,
    PREVALENCE_AGGREGATE_CSV, PREVALENCE_TEMPORAL_CSV, STATS_GRID_CSV, STATS_GRID_RAW_CSV,
};
use crate::stats::{
    bonferroni_threshold, build_design, fit_multinomial_logit, pairwise_test_grid, Categorical, CategoricalPredictor,
    GridVariable, OMNIBUS_COLUMN,
};
use crate::synth::{acceptance_profiles, generate_cohort, paper_like_profiles, SubtypeProfile};

pub use config::*;

pub const SYNTH_DIR: &str = "synth";
pub const COHORT_JSON: &str = "cohort.json";
pub const FUNNEL_CSV: &str = "funnel.csv";
pub const VOCABULARY_CSV: &str = "vocabulary.csv";
pub const FREQUENCY_CSV: &str = "phecode_frequency.csv";
pub const REJECTS_CSV: &str = "rejects.csv";
pub const FEATURES_TEMPORAL_CSV: &str = "features_temporal.csv";
pub const FEATURES_AGGREGATE_CSV: &str = "features_aggregate.csv";
pub const ELBOW_AGGREGATE_CSV: &str = "elbow_aggregate.csv";
pub const ASSIGNMENTS_AGGREGATE_CSV: &str = "assignments_aggregate.csv";
pub const CLUSTER_JSON: &str = "cluster_summary.json";
pub const EMBEDDING_CSV: &str = "embedding.csv";
pub const STATS_JSON: &str = "stats.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const EFFECTIVE_CONFIG_JSON: &str = "effective_config.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Ingest,
    Features,
    Elbow,
    Cluster,
    Stats,
    Mlr,
    Drugs,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Features,
        Stage::Elbow,
        Stage::Cluster,
        Stage::Stats,
        Stage::Mlr,
        Stage::Drugs,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Elbow => "elbow",
            Stage::Cluster => "cluster",
            Stage::Stats => "stats",
            Stage::Mlr => "mlr",
            Stage::Drugs => "drugs",
            Stage::Report => "report",
        }
    }
}

/// Stages `all` runs for this config (synth only without input tables).
pub fn all_stages(config: &PipelineConfig) -> Vec<Stage> {
    Stage::ALL
        .into_iter()
        .filter(|s| *s != Stage::Synth || (config.synth.is_some() && config.inputs.tables.is_none()))
        .collect()
}

fn layout_files(layout: Layout) -> (&'static str, &'static str, &'static str) {
    match layout {
        Layout::Temporal => (FEATURES_TEMPORAL_CSV, ELBOW_CSV, ASSIGNMENTS_CSV),
        Layout::Aggregate => (FEATURES_AGGREGATE_CSV, ELBOW_AGGREGATE_CSV, ASSIGNMENTS_AGGREGATE_CSV),
    }
}

const SYNTH_FILES: [&str; 6] = [
    "demographics.csv",
    "diagnoses.csv",
    "prescriptions.csv",
    "deaths.csv",
    "truth.csv",
    "profiles.json",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// Files every stage reads and writes, relative to the output directory
/// (external inputs are listed by path).
pub fn plan(config: &PipelineConfig, stage: Stage) -> StagePlan {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let synth_files = || SYNTH_FILES.iter().map(|f| format!("{SYNTH_DIR}/{f}")).collect::<Vec<_>>();
    let (inputs, outputs) = match stage {
        Stage::Synth => (vec![], synth_files()),
        Stage::Ingest => {
            let inputs = match &config.inputs.tables {
                Some(t) => {
                    let mut v = vec![t.demographics.display().to_string(), t.diagnoses.display().to_string()];
                    v.extend(t.prescriptions.iter().map(|p| p.display().to_string()));
                    v.extend(t.deaths.iter().map(|p| p.display().to_string()));
                    v
                }
                None => synth_files().into_iter().take(4).collect(),
            };
            let mut outputs = s(&[COHORT_JSON, FUNNEL_CSV, VOCABULARY_CSV, REJECTS_CSV]);
            if matches!(config.vocabulary, VocabularySource::Ranked(_)) {
                outputs.push(FREQUENCY_CSV.to_string());
            }
            (inputs, outputs)
        }
        Stage::Features => (
            s(&[COHORT_JSON, VOCABULARY_CSV]),
            s(&[FEATURES_TEMPORAL_CSV, FEATURES_AGGREGATE_CSV]),
        ),
        Stage::Elbow => {
            let files: Vec<_> = config.elbow.layouts.iter().map(|l| layout_files(*l)).collect();
            (
                files.iter().map(|f| f.0.to_string()).collect(),
                files.iter().map(|f| f.1.to_string()).collect(),
            )
        }
        Stage::Cluster => {
            let files: Vec<_> = config.cluster.layouts.iter().map(|l| layout_files(*l)).collect();
            let mut inputs: Vec<String> = files.iter().map(|f| f.0.to_string()).collect();
            if config.cluster.k.is_none() {
                inputs.push(ELBOW_CSV.to_string());
            }
            let mut outputs: Vec<String> = files.iter().map(|f| f.2.to_string()).collect();
            outputs.push(CLUSTER_JSON.to_string());
            if config.cluster.layouts.len() == 2 {
                outputs.push(CROSSTAB_CSV.to_string());
            }
            if config.cluster.dump_embedding {
                outputs.push(EMBEDDING_CSV.to_string());
            }
            (inputs, outputs)
        }
        Stage::Stats => (
            s(&[COHORT_JSON, ASSIGNMENTS_CSV]),
            s(&[STATS_GRID_CSV, STATS_GRID_RAW_CSV, STATS_JSON]),
        ),
        Stage::Mlr => (s(&[COHORT_JSON, ASSIGNMENTS_CSV]), s(&[MLR_CSV, MLR_TABLE_CSV, MLR_JSON])),
        Stage::Drugs => (s(&[COHORT_JSON, ASSIGNMENTS_CSV]), s(&[DRUG_USAGE_CSV])),
        Stage::Report => (
            s(&[COHORT_JSON, VOCABULARY_CSV, FEATURES_TEMPORAL_CSV, FEATURES_AGGREGATE_CSV, ASSIGNMENTS_CSV, ASSIGNMENTS_AGGREGATE_CSV]),
            s(&[PREVALENCE_TEMPORAL_CSV, PREVALENCE_AGGREGATE_CSV, DEMOGRAPHICS_CSV]),
        ),
    };
    StagePlan { stage, inputs, outputs }
}

/// Every file a run can produce, in manifest order.
fn known_artifacts() -> Vec<String> {
    let mut v: Vec<String> = SYNTH_FILES.iter().map(|f| format!("{SYNTH_DIR}/{f}")).collect();
    v.extend(
        [
            COHORT_JSON,
            FUNNEL_CSV,
            VOCABULARY_CSV,
            FREQUENCY_CSV,
            REJECTS_CSV,
            FEATURES_TEMPORAL_CSV,
            FEATURES_AGGREGATE_CSV,
            ELBOW_CSV,
            ELBOW_AGGREGATE_CSV,
            ASSIGNMENTS_CSV,
            ASSIGNMENTS_AGGREGATE_CSV,
            CLUSTER_JSON,
            CROSSTAB_CSV,
            EMBEDDING_CSV,
            STATS_GRID_CSV,
            STATS_GRID_RAW_CSV,
            STATS_JSON,
            MLR_CSV,
            MLR_TABLE_CSV,
            MLR_JSON,
            DRUG_USAGE_CSV,
            PREVALENCE_TEMPORAL_CSV,
            PREVALENCE_AGGREGATE_CSV,
            DEMOGRAPHICS_CSV,
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    for stem in [
        ASSIGNMENTS_CSV,
        ELBOW_CSV,
        PREVALENCE_TEMPORAL_CSV,
        PREVALENCE_AGGREGATE_CSV,
        DEMOGRAPHICS_CSV,
        CROSSTAB_CSV,
        STATS_GRID_CSV,
        DRUG_USAGE_CSV,
    ] {
        v.push(format!("{}.json", stem.trim_end_matches(".csv")));
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutClusterSummary {
    pub layout: Layout,
    pub k: usize,
    pub gamma: f64,
    pub sparse: bool,
    pub sse: f64,
    pub sizes: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    pub max_residual: f64,
    pub basis_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub runs: Vec<LayoutClusterSummary>,
    /// ARI between the temporal and aggregate partitions when both ran.
    pub temporal_vs_aggregate_ari: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonferroniFlip {
    pub row: String,
    pub column: String,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub alpha: f64,
    pub bonferroni_m: usize,
    pub bonferroni_threshold: f64,
    /// Pairwise cells significant at `alpha` but not after correction.
    pub lost_after_correction: Vec<BonferroniFlip>,
    pub warnings: Vec<String>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    out: PathBuf,
    prov: Provenance,
    phecode_map: PhecodeMap,
    atc_map: AtcMap,
    drug_classes: Vec<DrugClass>,
}

impl Pipeline {
    /// Validates the config and loads the mapping tables; nothing is written.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let phecode_map = match &config.inputs.phecode_map {
            Some(p) => load_phecode_map(p)?,
            None => PhecodeMap::fixture(),
        };
        let atc_map = match &config.inputs.atc_map {
            Some(p) => {
                let (map, rejects) = load_atc_map(p)?;
                for r in &rejects {
                    log::warn!("{}: line {}: {}", p.display(), r.line, r.reason);
                }
                map
            }
            None => AtcMap::fixture(),
        };
        let drug_classes = match &config.drugs.classes {
            Some(p) => load_drug_classes(p)?,
            None => default_drug_classes(),
        };
        let prov = Provenance::new(config.seed, config.config_hash());
        Ok(Self {
            out: config.out_dir.clone(),
            config,
            prov,
            phecode_map,
            atc_map,
            drug_classes,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::Invalid(format!(
                "{} needs {}; run the stage that produces it first",
                stage.name(),
                p.display()
            )))
        }
    }

    /// Runs one stage and refreshes the manifest and archived config.
    pub fn run(&self, stage: Stage) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        log::info!("stage {} started", stage.name());
        match stage {
            Stage::Synth => self.synth()?,
            Stage::Ingest => self.ingest()?,
            Stage::Features => self.features()?,
            Stage::Elbow => self.elbow()?,
            Stage::Cluster => self.cluster()?,
            Stage::Stats => self.stats()?,
            Stage::Mlr => self.mlr()?,
            Stage::Drugs => self.drugs()?,
            Stage::Report => self.report()?,
        }
        write_json(&self.path(EFFECTIVE_CONFIG_JSON), &self.config.archived())?;
        self.write_manifest()?;
        log::info!("stage {} finished", stage.name());
        Ok(())
    }

    /// Lists every known artifact present in the output directory.
    pub fn write_manifest(&self) -> Result<Manifest> {
        let artifacts: Vec<ManifestEntry> = known_artifacts()
            .iter()
            .filter(|f| self.path(f).is_file())
            .map(|f| manifest_entry(&self.out, f))
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            seed: self.config.seed,
            config_hash: self.prov.config_hash.clone(),
            artifacts,
        };
        write_json(&self.path(MANIFEST_JSON), &manifest)?;
        Ok(manifest)
    }

    fn profiles(&self, source: &ProfileSource) -> Result<Vec<SubtypeProfile>> {
        Ok(match source {
            ProfileSource::Acceptance => acceptance_profiles(),
            ProfileSource::PaperLike => paper_like_profiles(),
            ProfileSource::File(p) => read_json(p)?,
        })
    }

    fn synth(&self) -> Result<()> {
        let s = self
            .config
            .synth
            .as_ref()
            .ok_or_else(|| Error::Config("synth stage needs a synth section".into()))?;
        let profiles = self.profiles(&s.profiles)?;
        let cohort = generate_cohort(&profiles, s.n_patients, self.config.seed, &self.phecode_map, &self.atc_map, &s.options)?;
        let dir = self.path(SYNTH_DIR);
        cohort.write_tables(&dir, Some(&self.prov))?;
        write_json(&dir.join("profiles.json"), &profiles)
    }

    fn table_paths(&self) -> TablePaths {
        self.config.inputs.tables.clone().unwrap_or_else(|| {
            let d = self.path(SYNTH_DIR);
            TablePaths {
                demographics: d.join("demographics.csv"),
                diagnoses: d.join("diagnoses.csv"),
                prescriptions: Some(d.join("prescriptions.csv")),
                deaths: Some(d.join("deaths.csv")),
            }
        })
    }

    fn vocabulary_for(&self, raw: &crate::cohort::RawTables) -> Result<PhenotypeVocabulary> {
        Ok(match &self.config.vocabulary {
            VocabularySource::Table1 => PhenotypeVocabulary::table1(),
            VocabularySource::File(p) => PhenotypeVocabulary::load(p)?,
            VocabularySource::Ranked(opts) => {
                let candidates = candidate_cohort(raw, &self.config.cohort)?.cohort;
                let ad: BTreeSet<String> = self
                    .config
                    .cohort
                    .ad_code_set
                    .iter()
                    .flat_map(|c| {
                        [crate::cohort::CodeSystem::Icd9, crate::cohort::CodeSystem::Icd10Cm]
                            .into_iter()
                            .filter_map(|sys| self.phecode_map.lookup(c, sys).map(|(p, _)| p.to_string()))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                let (vocab, review) = rank_phenotypes(&candidates, &self.phecode_map, opts, &ad)?;
                write_csv(
                    &self.path(FREQUENCY_CSV),
                    Some(&self.prov),
                    &["rank", "phecode", "phenotype", "patient_count"],
                    review
                        .iter()
                        .map(|r| [r.rank.to_string(), r.phecode.clone(), r.phenotype.clone(), r.patient_count.to_string()]),
                )?;
                vocab
            }
        })
    }

    fn ingest(&self) -> Result<()> {
        let paths = self.table_paths();
        for p in [&paths.demographics, &paths.diagnoses] {
            if !p.is_file() {
                return Err(Error::Invalid(format!("input table {} does not exist", p.display())));
            }
        }
        let raw = parse_tables(&paths)?;
        let vocab = self.vocabulary_for(&raw)?;
        let selection = select_cohort(&raw, &self.config.cohort, &vocab, &self.phecode_map)?;
        for w in &selection.warnings {
            log::warn!("{w}");
        }
        write_json(&self.path(COHORT_JSON), &selection.cohort)?;
        write_csv(
            &self.path(FUNNEL_CSV),
            Some(&self.prov),
            &["step", "criterion", "remaining"],
            selection
                .funnel
                .steps
                .iter()
                .enumerate()
                .map(|(i, s)| [(i + 1).to_string(), s.criterion.clone(), s.remaining.to_string()]),
        )?;
        let mut buf = Vec::new();
        vocab.write_csv(&mut buf)?;
        let vpath = self.path(VOCABULARY_CSV);
        let text = format!("{}\n{}", self.prov.header_line(), String::from_utf8_lossy(&buf));
        std::fs::write(&vpath, text).map_err(|e| Error::io(&vpath, e))?;
        write_csv(
            &self.path(REJECTS_CSV),
            Some(&self.prov),
            &["table", "line", "reason"],
            raw.rejects.iter().map(|r| [r.table.clone(), r.line.to_string(), r.reason.clone()]),
        )?;
        log::info!("cohort: {} patients", selection.cohort.len());
        Ok(())
    }

    fn load_cohort(&self, stage: Stage) -> Result<Cohort> {
        read_json(&self.require(COHORT_JSON, stage)?)
    }

    fn features(&self) -> Result<()> {
        let cohort = self.load_cohort(Stage::Features)?;
        let vocab = PhenotypeVocabulary::load(&self.require(VOCABULARY_CSV, Stage::Features)?)?;
        let t = build_temporal_matrix(&cohort, &vocab, &self.phecode_map)?;
        t.write_csv(&self.path(FEATURES_TEMPORAL_CSV), Some(&self.prov))?;
        let a = build_aggregate_matrix(&cohort, &vocab, &self.phecode_map)?;
        a.write_csv(&self.path(FEATURES_AGGREGATE_CSV), Some(&self.prov))?;
        Ok(())
    }

    fn elbow(&self) -> Result<()> {
        let e = &self.config.elbow;
        let km = KMeansConfig {
            restarts: e.restarts,
            max_iter: e.max_iter,
            tol: e.tol,
            seed: self.config.seed,
        };
        for &layout in &e.layouts {
            let (features, elbow, _) = layout_files(layout);
            let fm = FeatureMatrix::read_csv(&self.require(features, Stage::Elbow)?)?;
            let kmax = e.kmax.min(fm.n_rows());
            let mut curve = elbow_sse_curve(fm.to_real::<f64>().view(), e.kmin, kmax, &km)?;
            let choice = detect_elbow(&curve)?;
            if let Some(w) = &choice.warning {
                log::warn!("{} elbow: {w}", layout.as_str());
            }
            curve.chosen_k = Some(choice.k);
            write_elbow(&self.path(elbow), Some(&self.prov), &curve)?;
            log::info!("{} elbow at k={}", layout.as_str(), choice.k);
        }
        Ok(())
    }

    fn cluster(&self) -> Result<()> {
        let cfg = &self.config.cluster;
        let mut runs = Vec::new();
        let mut partitions: Vec<(Layout, Vec<String>, ClusterAssignment)> = Vec::new();
        for &layout in &cfg.layouts {
            let (features, elbow, assignments) = layout_files(layout);
            let fm = FeatureMatrix::read_csv(&self.require(features, Stage::Cluster)?)?;
            let k = match cfg.k {
                Some(k) => k,
                None => {
                    // fall back to the temporal elbow when this layout has none
                    let path = if self.path(elbow).is_file() { self.path(elbow) } else { self.require(ELBOW_CSV, Stage::Cluster)? };
                    read_elbow(&path)?
                        .chosen_k
                        .ok_or_else(|| Error::Invalid(format!("{} has no chosen k", path.display())))?
                }
            };
            let spectral = crate::cluster::SpectralConfig {
                k,
                seed: self.config.seed,
                ..cfg.spectral.clone()
            };
            let res = spectral_cluster::<f64>(fm.values.view(), &spectral)?;
            write_assignments(&self.path(assignments), Some(&self.prov), &fm.patient_ids, &res.assignment)?;
            if cfg.dump_embedding && layout == Layout::Temporal {
                write_embedding(&self.path(EMBEDDING_CSV), &self.prov, &fm.patient_ids, res.embedding.values.view())?;
            }
            runs.push(LayoutClusterSummary {
                layout,
                k,
                gamma: res.gamma,
                sparse: res.sparse,
                sse: res.assignment.sse,
                sizes: res.assignment.sizes(),
                eigenvalues: res.embedding.eigenvalues.clone(),
                max_residual: res.embedding.max_residual,
                basis_size: res.embedding.basis_size,
            });
            partitions.push((layout, fm.patient_ids.clone(), res.assignment));
        }
        let mut ari = None;
        if let (Some(t), Some(a)) = (
            partitions.iter().find(|p| p.0 == Layout::Temporal),
            partitions.iter().find(|p| p.0 == Layout::Aggregate),
        ) {
            // rows are aggregate clusters, columns temporal clusters
            let tab = cluster_crosstab(&a.1, &a.2, &t.1, &t.2)?;
            write_crosstab(&self.path(CROSSTAB_CSV), Some(&self.prov), &tab)?;
            if a.1 == t.1 {
                ari = Some(adjusted_rand_index(&a.2.labels, &t.2.labels)?);
            }
        }
        write_json(
            &self.path(CLUSTER_JSON),
            &ClusterSummary {
                runs,
                temporal_vs_aggregate_ari: ari,
            },
        )
    }

    fn load_assignment(&self, rel: &str, stage: Stage) -> Result<(Vec<String>, ClusterAssignment)> {
        let (ids, labels) = read_assignments(&self.require(rel, stage)?)?;
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        Ok((
            ids,
            ClusterAssignment {
                labels,
                k,
                sse: f64::NAN,
                seed: self.config.seed,
            },
        ))
    }

    fn stats(&self) -> Result<()> {
        let cohort = self.load_cohort(Stage::Stats)?;
        let (ids, assignment) = self.load_assignment(ASSIGNMENTS_CSV, Stage::Stats)?;
        let vars = demographic_variables(&cohort, &ids)?;
        let [sex, race, age, mortality] = vars;
        let grid_vars = vec![
            GridVariable { label: "Sex".into(), variable: sex, per_level: false },
            GridVariable { label: "Race".into(), variable: race, per_level: true },
            GridVariable {
                label: "Age groups (age on 1st AD diagnosis date, years)".into(),
                variable: age,
                per_level: true,
            },
            GridVariable { label: "Mortality".into(), variable: mortality, per_level: false },
        ];
        let grid = pairwise_test_grid(&assignment, &grid_vars, &self.config.stats.grid)?;
        write_stats_grid(&self.path(STATS_GRID_CSV), Some(&self.prov), &grid)?;
        write_stats_grid_raw(&self.path(STATS_GRID_RAW_CSV), Some(&self.prov), &grid)?;

        let alpha = self.config.stats.alpha;
        let m = self.config.stats.bonferroni_m.unwrap_or(grid.rows.len().max(1));
        let threshold = bonferroni_threshold(alpha, m);
        let mut lost = Vec::new();
        let mut warnings = Vec::new();
        for row in &grid.rows {
            for cell in &row.cells {
                match &cell.result {
                    Ok(r) => {
                        if cell.column != OMNIBUS_COLUMN && r.p_value < alpha && r.p_value >= threshold {
                            lost.push(BonferroniFlip {
                                row: row.label.clone(),
                                column: cell.column.clone(),
                                p_value: r.p_value,
                            });
                        }
                        if let Some(w) = &r.warning {
                            warnings.push(format!("{} / {}: {w}", row.label, cell.column));
                        }
                    }
                    Err(e) => warnings.push(format!("{} / {}: {e}", row.label, cell.column)),
                }
            }
        }
        write_json(
            &self.path(STATS_JSON),
            &StatsSummary {
                alpha,
                bonferroni_m: m,
                bonferroni_threshold: threshold,
                lost_after_correction: lost,
                warnings,
            },
        )
    }

    fn mlr(&self) -> Result<()> {
        let cohort = self.load_cohort(Stage::Mlr)?;
        let (ids, assignment) = self.load_assignment(ASSIGNMENTS_CSV, Stage::Mlr)?;
        let [sex, race, age, _] = demographic_variables(&cohort, &ids)?;
        let c = &self.config.mlr;
        let design = build_design::<f64>(&[
            CategoricalPredictor { variable: sex, reference: c.sex_reference.clone() },
            CategoricalPredictor { variable: race, reference: c.race_reference.clone() },
            CategoricalPredictor { variable: age, reference: c.age_reference.clone() },
        ])?;
        for d in &design.dropped {
            log::warn!("mlr: level {d} has no patients and was dropped");
        }
        let fit = fit_multinomial_logit(design.x.view(), &design.names, &assignment.labels, c.reference_cluster, &c.options)?;
        write_mlr(&self.path(MLR_CSV), Some(&self.prov), &fit)?;
        write_mlr_table(&self.path(MLR_TABLE_CSV), Some(&self.prov), &fit)?;
        write_json(&self.path(MLR_JSON), &MlrSummary::new(&fit, &design.dropped))
    }

    fn drugs(&self) -> Result<()> {
        let cohort = self.load_cohort(Stage::Drugs)?;
        let (ids, assignment) = self.load_assignment(ASSIGNMENTS_CSV, Stage::Drugs)?;
        let table = drug_prevalence_by_cluster(
            &cohort.all_post_index_prescriptions(),
            &ids,
            &assignment,
            &self.atc_map,
            &self.drug_classes,
        )?;
        for w in &table.warnings {
            log::warn!("drugs: {w}");
        }
        write_drug_usage(&self.path(DRUG_USAGE_CSV), Some(&self.prov), &table)?;
        Ok(())
    }

    fn report(&self) -> Result<()> {
        let cohort = self.load_cohort(Stage::Report)?;
        let vocab = PhenotypeVocabulary::load(&self.require(VOCABULARY_CSV, Stage::Report)?)?;
        let names = |ph: &str| {
            vocab
                .position(ph)
                .map(|i| vocab.entries()[i].phenotype.clone())
                .unwrap_or_default()
        };
        let opts = &self.config.report.prevalence;
        let json = self.config.report.formats.contains(&ReportFormat::Json);
        let csv = self.config.report.formats.contains(&ReportFormat::Csv);
        for (layout, mode, out) in [
            (Layout::Temporal, PrevalenceMode::Temporal, PREVALENCE_TEMPORAL_CSV),
            (Layout::Aggregate, PrevalenceMode::Aggregate, PREVALENCE_AGGREGATE_CSV),
        ] {
            let (features, _, assignments) = layout_files(layout);
            if !self.config.cluster.layouts.contains(&layout) {
                continue;
            }
            let fm = FeatureMatrix::read_csv(&self.require(features, Stage::Report)?)?;
            let (ids, assignment) = self.load_assignment(assignments, Stage::Report)?;
            if ids != fm.patient_ids {
                return Err(Error::Shape(format!("{assignments} and {features} list different patients")));
            }
            let table = condition_prevalence(&assignment, &fm, mode, opts)?;
            if csv {
                write_prevalence(&self.path(out), Some(&self.prov), &table, &names)?;
            }
            if json {
                write_json(&self.path(&out.replace(".csv", ".json")), &table)?;
            }
        }
        let (ids, assignment) = self.load_assignment(ASSIGNMENTS_CSV, Stage::Report)?;
        let demo = demographic_breakdown(&assignment, &ids, &cohort)?;
        if csv {
            write_demographics(&self.path(DEMOGRAPHICS_CSV), Some(&self.prov), &demo)?;
        }
        if json {
            write_json(&self.path(&DEMOGRAPHICS_CSV.replace(".csv", ".json")), &demo)?;
        }
        Ok(())
    }
}

/// Sex, race, age group at index and mortality, aligned with `ids`, using
/// display labels as levels.
pub fn demographic_variables(cohort: &Cohort, ids: &[String]) -> Result<[Categorical; 4]> {
    let by_id: std::collections::HashMap<&str, &crate::cohort::PatientRecord> =
        cohort.patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let mut sex = Vec::with_capacity(ids.len());
    let mut race = Vec::with_capacity(ids.len());
    let mut age = Vec::with_capacity(ids.len());
    let mut died = Vec::with_capacity(ids.len());
    for id in ids {
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Invalid(format!("patient {id} is not in the cohort")))?;
        sex.push(p.sex.label());
        race.push(p.race.label());
        age.push(cohort.age_group(p)?.label());
        died.push(if p.died { "Died" } else { "Alive" });
    }
    let labels = |v: &[&'static str]| v.to_vec();
    Ok([
        Categorical::new("Sex", &labels(&Sex::ALL.map(|s| s.label())), &sex)?,
        Categorical::new("Race", &labels(&Race::ALL.map(|r| r.label())), &race)?,
        Categorical::new("Age group", &labels(&AgeGroup::ALL.map(|a| a.label())), &age)?,
        Categorical::new("Mortality", &["Alive", "Died"], &died)?,
    ])
}

pub fn read_assignments(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let mut rdr = open_reader(path)?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| Error::BadRecord {
            path: path.to_path_buf(),
            line,
            reason: "expected patient_id,cluster".into(),
        })?;
        ids.push(rec[0].to_string());
        labels.push(label);
    }
    Ok((ids, labels))
}

pub fn read_elbow(path: &Path) -> Result<ElbowCurve> {
    let mut rdr = open_reader(path)?;
    let mut points = Vec::new();
    let mut chosen = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = || Error::BadRecord {
            path: path.to_path_buf(),
            line,
            reason: "expected k,sse,chosen".into(),
        };
        let k: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let sse: f64 = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if rec.get(2) == Some("1") {
            chosen = Some(k);
        }
        points.push((k, sse));
    }
    Ok(ElbowCurve { points, chosen_k: chosen })
}

fn write_embedding(path: &Path, prov: &Provenance, ids: &[String], values: ArrayView2<'_, f64>) -> Result<usize> {
    let cols: Vec<String> = (0..values.ncols()).map(|j| format!("e{j}")).collect();
    let mut header = vec!["patient_id"];
    header.extend(cols.iter().map(String::as_str));
    let rows = ids.iter().zip(values.rows()).map(|(id, r)| {
        let mut row = vec![id.clone()];
        row.extend(r.iter().map(|v| fmt_real(*v)));
        row
    });
    write_csv(path, Some(prov), &header, rows)
}
