use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact::sha256_hex;
use crate::cluster::SpectralConfig;
use crate::cohort::{CohortConfig, TablePaths};
use crate::error::{Error, Result};
use crate::phenotype::{Layout, RankingOptions};
use crate::report::{PrevalenceOptions, ReportFormat};
use crate::stats::{GridOptions, MlrOptions};
use crate::synth::SynthOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Drives the generator, K-Means and the eigensolver start vector.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; `None` lets rayon decide. Never affects outputs.
    pub threads: Option<usize>,
    pub inputs: InputConfig,
    /// When set and `inputs.tables` is absent, `synth` writes the tables
    /// that `ingest` reads.
    pub synth: Option<SynthConfig>,
    pub cohort: CohortConfig,
    pub vocabulary: VocabularySource,
    pub elbow: ElbowConfig,
    pub cluster: ClusterStageConfig,
    pub stats: StatsConfig,
    pub mlr: MlrConfig,
    pub drugs: DrugsConfig,
    pub report: ReportConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            threads: None,
            inputs: InputConfig::default(),
            synth: None,
            cohort: CohortConfig::default(),
            vocabulary: VocabularySource::Table1,
            elbow: ElbowConfig::default(),
            cluster: ClusterStageConfig::default(),
            stats: StatsConfig::default(),
            mlr: MlrConfig::default(),
            drugs: DrugsConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub tables: Option<TablePaths>,
    /// ICD-to-phecode map; the bundled fixture when absent.
    pub phecode_map: Option<PathBuf>,
    /// RxCUI-to-ATC3 map; the bundled fixture when absent.
    pub atc_map: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSource {
    Acceptance,
    PaperLike,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub profiles: ProfileSource,
    pub options: SynthOptions,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            profiles: ProfileSource::Acceptance,
            options: SynthOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabularySource {
    /// The bundled 40-phenotype list.
    Table1,
    File(PathBuf),
    /// Rank phecodes on the candidate cohort.
    Ranked(RankingOptions),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElbowConfig {
    /// Feature layouts probed; the first one also writes `elbow.csv`.
    pub layouts: Vec<Layout>,
    pub kmin: usize,
    pub kmax: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElbowConfig {
    fn default() -> Self {
        Self {
            layouts: vec![Layout::Temporal],
            kmin: 1,
            kmax: 10,
            restarts: 10,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterStageConfig {
    pub layouts: Vec<Layout>,
    /// Fixed cluster count; `None` takes each layout's detected elbow.
    pub k: Option<usize>,
    /// `k` and `seed` inside are replaced by the stage.
    pub spectral: SpectralConfig,
    /// Also write the row-normalized embedding of the temporal run.
    pub dump_embedding: bool,
}

impl Default for ClusterStageConfig {
    fn default() -> Self {
        Self {
            layouts: vec![Layout::Temporal, Layout::Aggregate],
            k: None,
            spectral: SpectralConfig::default(),
            dump_embedding: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub grid: GridOptions,
    pub alpha: f64,
    /// Hypothesis count for the Bonferroni threshold; defaults to the
    /// number of grid rows.
    pub bonferroni_m: Option<usize>,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            grid: GridOptions::default(),
            alpha: 0.05,
            bonferroni_m: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlrConfig {
    pub reference_cluster: usize,
    pub sex_reference: String,
    pub race_reference: String,
    pub age_reference: String,
    pub options: MlrOptions,
}

impl Default for MlrConfig {
    fn default() -> Self {
        Self {
            reference_cluster: 0,
            sex_reference: "Female".into(),
            race_reference: "American Indian or Alaska Native".into(),
            age_reference: "< 65".into(),
            options: MlrOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrugsConfig {
    /// `atc3,atc3_name` list; the bundled 13 classes when absent.
    pub classes: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub prevalence: PrevalenceOptions,
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            prevalence: PrevalenceOptions::default(),
            formats: vec![ReportFormat::Csv],
        }
    }
}

fn require_file(what: &str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(config.resolve_relative_to(path.parent().unwrap_or(Path::new(""))))
    }

    /// Makes input paths relative to the config file's directory.
    fn resolve_relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(t) = self.inputs.tables.as_mut() {
            fix(&mut t.demographics);
            fix(&mut t.diagnoses);
            t.prescriptions.as_mut().map(fix);
            t.deaths.as_mut().map(fix);
        }
        self.inputs.phecode_map.as_mut().map(fix);
        self.inputs.atc_map.as_mut().map(fix);
        self.drugs.classes.as_mut().map(fix);
        if let VocabularySource::File(p) = &mut self.vocabulary {
            fix(p);
        }
        if let Some(ProfileSource::File(p)) = self.synth.as_mut().map(|s| &mut s.profiles) {
            fix(p);
        }
        self
    }

    /// Parameter checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        if let Some(t) = &self.inputs.tables {
            require_file("demographics table", &t.demographics)?;
            require_file("diagnoses table", &t.diagnoses)?;
            if let Some(p) = &t.prescriptions {
                require_file("prescriptions table", p)?;
            }
            if let Some(p) = &t.deaths {
                require_file("deaths table", p)?;
            }
        } else if self.synth.is_none() {
            return Err(Error::Config("either inputs.tables or a synth section is required".into()));
        }
        if let Some(p) = &self.inputs.phecode_map {
            require_file("phecode map", p)?;
        }
        if let Some(p) = &self.inputs.atc_map {
            require_file("ATC map", p)?;
        }
        if let Some(p) = &self.drugs.classes {
            require_file("drug class list", p)?;
        }
        if let VocabularySource::File(p) = &self.vocabulary {
            require_file("vocabulary", p)?;
        }
        if let Some(s) = &self.synth {
            if s.n_patients == 0 {
                return Err(Error::Config("synth.n_patients must be >= 1".into()));
            }
            if let ProfileSource::File(p) = &s.profiles {
                require_file("profile file", p)?;
            }
        }
        let e = &self.elbow;
        if e.kmin == 0 || e.kmin > e.kmax || e.kmax - e.kmin < 2 {
            return Err(Error::Config(format!("elbow range {}..{} needs kmin >= 1 and at least 3 points", e.kmin, e.kmax)));
        }
        if e.restarts == 0 || e.max_iter == 0 || !(e.tol >= 0.0) {
            return Err(Error::Config("elbow restarts/max_iter must be >= 1 and tol >= 0".into()));
        }
        if e.layouts.is_empty() || self.cluster.layouts.is_empty() {
            return Err(Error::Config("elbow.layouts and cluster.layouts must not be empty".into()));
        }
        if let Some(k) = self.cluster.k {
            if k < 1 {
                return Err(Error::Config("cluster.k must be >= 1".into()));
            }
        }
        self.cluster.spectral.validate()?;
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return Err(Error::Config(format!("stats.alpha must lie in (0, 1), got {}", self.stats.alpha)));
        }
        if self.stats.bonferroni_m == Some(0) {
            return Err(Error::Config("stats.bonferroni_m must be >= 1".into()));
        }
        if self.report.formats.is_empty() {
            return Err(Error::Config("report.formats must not be empty".into()));
        }
        Ok(())
    }

    /// The archived form: everything except where and how fast the run
    /// happens (`out_dir`, `threads`).
    pub fn archived(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().unwrap();
        obj.remove("out_dir");
        obj.remove("threads");
        v
    }

    /// Hash of the analysis parameters; file locations are excluded so that
    /// moving inputs does not change it.
    pub fn config_hash(&self) -> String {
        let mut v = self.archived();
        let obj = v.as_object_mut().unwrap();
        obj.remove("inputs");
        if let Some(s) = obj.get_mut("synth").and_then(|s| s.as_object_mut()) {
            if s.get("profiles").is_some_and(|p| p.get("file").is_some()) {
                s.insert("profiles".into(), "file".into());
            }
        }
        if let Some(drugs) = obj.get_mut("drugs").and_then(|d| d.as_object_mut()) {
            drugs.remove("classes");
        }
        if obj.get("vocabulary").is_some_and(|p| p.get("file").is_some()) {
            obj.insert("vocabulary".into(), "file".into());
        }
        sha256_hex(v.to_string().as_bytes())[..16].to_string()
    }
}
