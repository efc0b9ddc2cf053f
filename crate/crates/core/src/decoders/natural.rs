use super::Decoder;
use crate::codes::CodeArray;
use crate::encoders::PqModel;
use crate::error::Result;
use crate::matrix::DenseMatrix;

/// Concatenates the selected sub-centroids; a rotated (OPQ) model maps the
/// result back with `Rᵀ`.
pub fn natural_decode(model: &PqModel, codes: &CodeArray) -> Result<DenseMatrix> {
    let y = model.decode_rotated(codes)?;
    Ok(model.codebook.unrotate(&y))
}

impl Decoder for PqModel {
    fn dim(&self) -> usize {
        PqModel::dim(self)
    }

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        natural_decode(self, codes)
    }
}
