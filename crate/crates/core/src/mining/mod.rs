//! Pseudo-label mining on the query/gallery pool.
//!
//! [`identity`] holds the two-stage threshold procedure; [`kmeans`] the
//! clustering baseline it is measured against.

pub mod identity;
pub mod kmeans;

pub use identity::{
    identity_mine, im_stage1, im_stage2, validate_labels, MiningParams, PseudoLabelSet,
};
pub use kmeans::{kmeans_baseline, KMeansResult};
