//! Cluster validation: chi-square grids, Bonferroni thresholds and
//! multinomial logistic regression.

pub mod chi2;
pub mod contingency;
pub mod grid;
pub mod linalg;
pub mod mlr;

pub use chi2::{chi2_sf, chi_square_test, ChiSquareResult};
pub use contingency::{contingency, Categorical, ContingencyTable};
pub use grid::{bonferroni_threshold, pairwise_test_grid, GridCell, GridOptions, GridRow, GridVariable, TestGrid, OMNIBUS_COLUMN};
pub use mlr::{
    build_design, class_probabilities, fit_multinomial_logit, log_likelihood, mlr_gradient, CategoricalPredictor, Design,
    MlrFit, MlrOptions, INTERCEPT,
};
