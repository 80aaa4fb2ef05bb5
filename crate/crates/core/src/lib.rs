//! Pure algorithmic core of the graspkg toolkit.
//!
//! Scores 6-DOF parallel-jaw grasp candidates on object point clouds for a
//! goal task. A PointNet-style encoder embeds the grasp together with the
//! object, the embedding is attached as a transient node to a semantic
//! knowledge graph of tasks, object classes and hypernym concepts, and a
//! graph convolutional network followed by a small evaluator produces the
//! grasp score.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem (dataset layout, CSV votes, JSON reports, CLI) lives in the
//! `graspkg` companion crate.
//!
//! Module map:
//! - [`tensor`]: tape-based reverse-mode differentiation, BCE loss, ADAM,
//!   finite-difference gradient checks.
//! - [`graph`]: knowledge-graph construction and Kipf normalization.
//! - [`pointcloud`]: normalization, farthest point sampling, augmentation,
//!   gripper control points, grasp/object fusion.
//! - [`encoder`]: hierarchical set-abstraction shape encoder.
//! - [`model`]: the graph-conditioned grasp evaluator, SGN baselines,
//!   training, random baseline and checkpoints.
//! - [`dataset`]: data model, embedding tables and the synthetic generator.
//! - [`annotation`]: annotator qualification, majority vote, Randolph kappa.
//! - [`evaluation`]: held-out splits, average precision and mAP reports.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod annotation;
pub mod dataset;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod pointcloud;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
