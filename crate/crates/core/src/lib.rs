//! Normalized-softmax angular-margin losses on the hypersphere.
//!
//! The crate covers the full numerical path of a margin-based face
//! recognition objective: l2 normalization and cosine logits, five loss
//! variants (normalized softmax, CosFace, ArcFace, MV-softmax and the
//! negative-positive collaborative margin, NPCFace) with exact analytic
//! gradients, hard-sample mining and its diagnostics, a small MLP trained by
//! SGD on synthetic identities, and verification/identification metrics.
//!
//! Everything here is `no_std` + `alloc`. File formats, configuration
//! parsing and the command line live in the `npclab` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod hardness;
pub mod loss;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use geometry::{cos_shifted, cosine_matrix, normalize, CosineMatrix, UnitRows, UnitVector};
pub use hardness::{collaborative_margin, compute_mask, CollaborativeMargins, HardMask};
pub use loss::{GradientBundle, Labels, LossConfig, LossVariant};
pub use matrix::Matrix;
