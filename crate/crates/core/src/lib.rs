//! Clustering path of a range-view LiDAR panoptic segmentation network.
//!
//! The learned encoder and decoders are not part of this crate. Their outputs
//! (semantic labels, 2D center offsets) are supplied either from files or from
//! ground-truth oracles, and everything downstream is implemented here:
//!
//! * [`scan_io`]: SemanticKITTI-style `.bin` / `.label` codecs and the class taxonomy.
//! * [`range_view`]: spherical projection and point/pixel back-mapping.
//! * [`clsa`]: convolution with cross local spatial attention, with manual backprop.
//! * [`bev`]: foreground masking, offset shifting and sparse BEV gridding.
//! * [`sma`]: five-direction center-of-mass attention on the BEV grid.
//! * [`clustering`]: radius BFS clustering, back-mapping and majority voting.
//! * [`losses`]: repel / attract / offset / cross-entropy losses and gradient checks.
//! * [`metrics`]: PQ, PQ-dagger, RQ, SQ and mIoU.
//! * [`synth`]: seeded synthetic scenes with oracle offsets.
//! * [`pipeline`]: configuration, batch runs and parameter sweeps.

// negated comparisons deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bev;
pub mod clsa;
pub mod clustering;
pub mod config;
mod error;
pub mod losses;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod range_view;
pub mod scan_io;
pub mod sma;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
