//! Semi-supervised LiDAR segmentation with peer range/voxel representations.
//!
//! A scan is projected into a spherical range image and a cylindrical voxel
//! grid. Each view has its own small per-cell network; on unlabelled scans the
//! two networks supervise each other through hard pseudo labels transferred
//! across views. A bank of class-wise Gaussian mixtures over the pooled
//! embeddings of both views supplies virtual prototypes for a contrastive
//! term, and view-specific mixing augmentations perturb the unlabelled inputs.
//!
//! Module map:
//! - [`scanio`]: point scans, the `IT2S` file format, synthetic scenes, splits.
//! - [`projection`]: range/voxel projections, their inverses, cross-view transfer.
//! - [`netcore`]: reverse-mode tape, per-cell networks, optimizers, checkpoints.
//! - [`consistency`]: pseudo labels, cross-entropy, Lovász-softmax, the peer loss.
//! - [`prototypes`]: class-wise GMM bank, EM, EMA, sampling, anchors, InfoNCE.
//! - [`augment`]: column-strip range mixing and inclination-band point mixing.
//! - [`trainer`]: the training loop, evaluation, fusion, ablations.
//! - [`cli`]: configuration files and command implementations.

pub mod augment;
pub mod cli;
pub mod consistency;
pub mod error;
pub mod netcore;
pub mod projection;
pub mod prototypes;
pub mod scanio;
pub mod trainer;

pub use error::{Error, Result};
