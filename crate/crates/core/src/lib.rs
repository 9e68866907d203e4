//! Explainable malnutrition-risk screening.
//!
//! The crate turns weekly monitoring records (meal surveys, smart-scale body
//! composition, clinical profiles and monthly MNA assessments) into labelled
//! feature matrices, trains imbalance-aware classifiers, validates them with
//! repeated hold-out and leave-one-subject-out schemes, explains them with
//! four attribution methods and scores how well those explanations agree.
//!
//! Module map:
//!
//! - [`domain`]: cohort data model, CSV ingestion and structural validation
//! - [`featureng`]: weekly feature rows from raw records
//! - [`preprocess`]: encoding, standardization and resampling
//! - [`models`]: CART, forests, gradient boosting, RUSBoost, L1 logistic regression, k-NN
//! - [`evalharness`]: splits, hyperparameter search, metrics, failure scan
//! - [`stats`]: normality, variance, ANOVA/Tukey and two-sample tests
//! - [`xai`]: TreeSHAP (with interactions), LIME, MDA, MDI, dependence series
//! - [`consistency`]: exact / non-exact top-K agreement between rankings
//! - [`synthcohort`]: seeded synthetic cohorts with planted trends
//! - [`cli`]: run configuration, model persistence and report bundles

// index loops read closer to the matrix formulas they implement
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod consistency;
pub mod domain;
pub mod error;
pub mod evalharness;
pub mod featureng;
pub mod models;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod synthcohort;
pub mod xai;

pub use error::{Error, Result};
