//! Compact-code nearest-neighbor search with interchangeable decoders.
//!
//! Encoders (k-means, PQ, OPQ, ITQ) are trained once and then frozen. Codes
//! can be decoded by the encoder's own tables, by the per-code conditional
//! mean (topline), by a closed-form additive LUT fit, or by a small neural
//! network whose first layer is an additive LUT. Search runs asymmetric
//! distance scans over codes or reconstructions, with optional re-ranking of
//! a shortlist by a stronger decoder.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
// Numeric kernels index several arrays with one loop counter.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod codebook;
pub mod codes;
pub mod decoders;
pub mod encoders;
pub mod error;
pub mod linalg;
pub mod matrix;
pub mod nn;
pub mod search;
pub mod serialize;
pub mod synthetic;
pub mod vecs;

pub use codebook::{BinaryProjection, DecoderLut, SubspaceCodebook};
pub use codes::CodeArray;
pub use decoders::Decoder;
pub use encoders::{ItqModel, KMeansModel, PqModel};
pub use error::{Error, Result};
pub use matrix::DenseMatrix;
pub use nn::{NnDecoder, TrainConfig};
