//! Temporal subtyping of Alzheimer's disease cohorts from EHR extracts.
//!
//! The pipeline selects an AD cohort and slots each patient's pre-diagnosis
//! conditions into six half-year windows ([`cohort`]), maps ICD codes to
//! phecodes and builds binary feature matrices ([`phenotype`]), clusters
//! patients with Laplacian-kernel spectral clustering ([`cluster`]), and
//! validates the clusters with chi-square suites, multinomial logistic
//! regression ([`stats`]) and drug-class prevalence ([`drugs`]).
//! [`synth`] generates cohorts with planted subtypes and [`pipeline`] wires
//! the stages together for the CLI.

pub mod artifact;
pub mod cluster;
pub mod cohort;
pub mod drugs;
pub mod error;
pub mod phenotype;
pub mod pipeline;
pub mod report;
pub mod scalar;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Embedding64 = cluster::Embedding<f64>;
pub type Embedding32 = cluster::Embedding<f32>;
pub type SpectralResult64 = cluster::SpectralResult<f64>;
pub type SpectralResult32 = cluster::SpectralResult<f32>;
pub type MlrFit64 = stats::MlrFit<f64>;
pub type MlrFit32 = stats::MlrFit<f32>;
