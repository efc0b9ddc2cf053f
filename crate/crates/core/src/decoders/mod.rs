//! Decoders for fixed codes.
//!
//! Every decoder maps a [`CodeArray`] back to vectors in the input space.
//! The natural decoders reuse the encoder's own tables; the topline and
//! additive-LUT decoders are fitted on training vectors and their codes.

use crate::codes::CodeArray;
use crate::error::Result;
use crate::matrix::DenseMatrix;

pub mod aq;
pub mod binary;
pub mod natural;
pub mod topline;

pub use aq::{aq_decode, aq_fit, aq_fit_with_report, default_lambda, AqFit};
pub use binary::binary_naive_decode;
pub use natural::natural_decode;
pub use topline::{topline_fit, ToplineDecoder, MAX_TOPLINE_BITS};

pub trait Decoder: Send + Sync {
    /// Output dimension.
    fn dim(&self) -> usize;

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix>;

    /// Decodes only the listed rows of `codes`, in order.
    fn decode_ids(&self, codes: &CodeArray, ids: &[usize]) -> Result<DenseMatrix> {
        self.decode(&codes.select(ids))
    }
}

impl<D: Decoder + ?Sized> Decoder for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        (**self).decode(codes)
    }
}

/// Training-set mean squared reconstruction error of a decoder.
pub fn reconstruction_mse(
    decoder: &dyn Decoder,
    codes: &CodeArray,
    x: &DenseMatrix,
) -> Result<f64> {
    decoder.decode(codes)?.mse(x)
}
