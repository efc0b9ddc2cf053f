//! Reconstruction of sign codes on orthonormal projections:
//! `q = (1/√d) Σ k_i u_i + μ` with `k_i ∈ {−1, +1}`.

use super::Decoder;
use crate::codebook::DecoderLut;
use crate::codes::CodeArray;
use crate::encoders::ItqModel;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

fn check(model: &ItqModel, codes: &CodeArray) -> Result<()> {
    if codes.bits() != 1 {
        return Err(Error::shape(format!(
            "binary decoding needs 1-bit codes, got {} bits per subindex",
            codes.bits()
        )));
    }
    if codes.m() != model.bits() {
        return Err(Error::shape(format!(
            "{}-bit codes for a {}-bit model",
            codes.m(),
            model.bits()
        )));
    }
    Ok(())
}

pub fn binary_naive_decode(model: &ItqModel, codes: &CodeArray) -> Result<DenseMatrix> {
    check(model, codes)?;
    let d = model.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let basis = model.basis();
    let mut out = DenseMatrix::zeros(codes.len(), d);
    let mut acc = vec![0.0f64; d];
    let mut bits = vec![0u32; codes.m()];
    for row in 0..codes.len() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        codes.subindices_into(row, &mut bits);
        for (i, &b) in bits.iter().enumerate() {
            let s = if b == 1 { scale } else { -scale };
            for (a, &u) in acc.iter_mut().zip(basis.row(i)) {
                *a += s * u as f64;
            }
        }
        for ((o, a), &mu) in out.row_mut(row).iter_mut().zip(&acc).zip(&model.mean) {
            *o = (a + mu as f64) as f32;
        }
    }
    Ok(out)
}

/// The same reconstruction written as an additive LUT with two rows per bit:
/// row 1 is `u_i/√d + μ/m`, row 0 is `−u_i/√d + μ/m`.
pub fn naive_lut(model: &ItqModel) -> DecoderLut {
    let (m, d) = (model.bits(), model.dim());
    let scale = 1.0 / (d as f64).sqrt();
    let mut tables = Vec::with_capacity(m * 2 * d);
    for i in 0..m {
        for sign in [-1.0f64, 1.0] {
            for (&u, &mu) in model.basis().row(i).iter().zip(&model.mean) {
                tables.push((sign * scale * u as f64 + mu as f64 / m as f64) as f32);
            }
        }
    }
    DecoderLut::new(m, 2, d, tables).expect("finite by construction")
}

impl Decoder for ItqModel {
    fn dim(&self) -> usize {
        ItqModel::dim(self)
    }

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        binary_naive_decode(self, codes)
    }
}
