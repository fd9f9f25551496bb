//! Registration-driven Siamese tracking of a single object in LiDAR-like
//! point clouds.
//!
//! The crate is `no_std` (with `alloc`) so the numerical pipeline can be
//! embedded anywhere; file formats, configuration parsing and the command
//! line live in the `regtrack` crate.
//!
//! Pipeline per frame:
//!
//! 1. [`geom`]: crop template / search area around the previous box and
//!    express both in that box's canonical frame.
//! 2. [`feat`]: handcrafted per-point descriptors refined by gated
//!    cross-attention ([`feat::tsnonlocal`]).
//! 3. [`reg`]: inlier scoring, top-k rejection, soft correspondences and
//!    weighted SVD give a rigid transform aligning template to search area.
//! 4. [`matching`]: slack Sinkhorn over instance-normalised feature
//!    similarities, masked by the post-registration distance map.
//! 5. [`agg`]: target-specific embeddings and box localisation.
//!
//! [`sim`] provides synthetic sequences, the tracking loop and OPE metrics;
//! [`loss`] the registration-level losses used as diagnostics.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod agg;
pub mod error;
pub mod feat;
pub mod geom;
pub mod loss;
pub mod matching;
pub mod math;
pub mod neighbors;
pub mod nn;
pub mod reg;
pub mod sim;

pub use error::{Error, Result};
pub use geom::{BBox3D, BoxSize, Point3, PointCloud, RigidTransform, Vec3};
