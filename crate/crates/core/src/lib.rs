//! Pairwise PCB defect detection.
//!
//! A template image and a tested image pass through one shared convolutional
//! backbone. Their feature difference feeds a group pyramid pooling module
//! whose overlapping groups each predict defects at one box scale from a set
//! of default boxes.
//!
//! - [`geometry`]: boxes, overlap, clipping, suppression.
//! - [`anchors`]: default-box tiling.
//! - [`targets`]: ground-truth matching and offset encoding.
//! - [`nn`] and [`model`]: the network with hand-written backward passes.
//! - [`loss`]: smooth-L1 regression plus sampled softmax classification.
//! - [`data`]: DeepPCB layout, preprocessing, augmentation, synthetic boards.
//! - [`eval`]: AP, mAP, precision/recall/F-mean and throughput.
//! - [`trainer`]: configuration, the training loop, checkpoints, ablations.
//! - [`oracle`]: slow reference versions of the geometric and metric rules.

pub mod anchors;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod targets;
pub mod trainer;

pub use error::{Error, Result};
