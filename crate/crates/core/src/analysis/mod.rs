//! Dataset-diversity features, PCA and scaling-law fitting.

pub mod bnsl;
pub mod features;
pub mod pca;
pub mod plot;

pub use bnsl::{bnsl_eval, bnsl_fit, BnslFit, BnslParams, Break};
pub use features::{feature_set_registry, CoreFeatures, FeatureSet, FeatureVector, CORE_FEATURE_NAMES};
pub use pca::{dataset_feature_matrix, pca_project, standardize_columns, FeatureMatrix, Pca};
