//! Object-centric task attention for robot learning from a few
//! demonstrations.
//!
//! The pipeline has three stages. A task-independent proposer
//! ([`metaattention`]) turns every observation into a set of object
//! hypotheses, each a bounding box plus a semantic feature vector. A
//! task-specific attention ([`attention`]) learns from demonstrations which
//! hypotheses predict the demonstrated motion. Finally a control policy
//! ([`policy`]) is trained on the robot state and the attended boxes with
//! the attention held fixed. [`simworld`] provides the 2D tabletop tasks and
//! scripted experts, and [`experiments`] runs the end-to-end studies.

// `!(x > 0.0)` is how validation rejects NaN along with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod attention;
pub mod error;
pub mod experiments;
pub mod metaattention;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod simworld;
pub mod types;

pub use artifact::{load_artifact, save_artifact, Artifact, SCHEMA_VERSION};
pub use error::{Error, Result};
pub use rng::{seeded_rng, SimRng};
pub use types::*;
