//! Scaling, lag/date-time tokenization and training-window augmentations.

pub mod augment;
pub mod datetime;
pub mod lags;
pub mod scaling;
pub mod token;

pub use augment::{augmentation_registry, freq_mask, freq_mix, Augmentation};
pub use datetime::{datetime_features, NUM_DATETIME_FEATURES};
pub use lags::LagSet;
pub use scaling::{
    mean_std_stats, robust_standardize, robust_stats, scaler_registry, Scaler, ScalingState,
};
pub use token::{encode_window, token_dim, tokenize, EncodedWindow, Token, NUM_SUMMARY_STATS};
