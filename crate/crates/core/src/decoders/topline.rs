//! The per-code conditional-mean decoder: one reproduction vector for every
//! whole code, equal to the mean of the training vectors carrying it.

use super::Decoder;
use crate::codes::CodeArray;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Largest code size, in bits, for which the whole-code table is built.
pub const MAX_TOPLINE_BITS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ToplineDecoder {
    m: usize,
    bits: u32,
    /// `2^(m·bits) × d`.
    pub table: DenseMatrix,
    /// Training vectors per code; zero rows came from the fallback decoder.
    pub counts: Vec<u32>,
}

/// Fits the table. Codes never seen in training take the fallback decoder's
/// reconstruction, or the global training mean when no fallback is given.
pub fn topline_fit(
    codes: &CodeArray,
    x: &DenseMatrix,
    fallback: Option<&dyn Decoder>,
) -> Result<ToplineDecoder> {
    if codes.len() != x.rows() {
        return Err(Error::shape(format!(
            "{} codes for {} training vectors",
            codes.len(),
            x.rows()
        )));
    }
    let total_bits = codes.total_bits();
    if total_bits > MAX_TOPLINE_BITS {
        return Err(Error::param(format!(
            "topline table for {total_bits}-bit codes exceeds the 2^{MAX_TOPLINE_BITS} limit"
        )));
    }
    let k = 1usize << total_bits;
    let d = x.dim();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0u32; k];
    for (row, v) in x.iter_rows().enumerate() {
        let c = codes.code_value(row) as usize;
        counts[c] += 1;
        for (s, &t) in sums[c * d..(c + 1) * d].iter_mut().zip(v) {
            *s += t as f64;
        }
    }
    let mut table = DenseMatrix::zeros(k, d);
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (o, s) in table.row_mut(c).iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *o = (s * inv) as f32;
            }
        }
    }

    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        match fallback {
            Some(dec) => {
                if dec.dim() != d {
                    return Err(Error::shape("fallback decoder dimension differs from data"));
                }
                let nb = codes.code_bytes();
                let mut payload = Vec::with_capacity(empty.len() * nb);
                for &c in &empty {
                    payload.extend_from_slice(&(c as u64).to_le_bytes()[..nb]);
                }
                let missing =
                    CodeArray::from_payload(empty.len(), codes.m(), codes.bits(), payload)?;
                let rec = dec.decode(&missing)?;
                for (i, &c) in empty.iter().enumerate() {
                    table.row_mut(c).copy_from_slice(rec.row(i));
                }
            }
            None => {
                let mean: Vec<f32> = x.column_mean().into_iter().map(|v| v as f32).collect();
                for &c in &empty {
                    table.row_mut(c).copy_from_slice(&mean);
                }
            }
        }
    }
    Ok(ToplineDecoder {
        m: codes.m(),
        bits: codes.bits(),
        table,
        counts,
    })
}

impl ToplineDecoder {
    pub fn from_parts(m: usize, bits: u32, table: DenseMatrix, counts: Vec<u32>) -> Result<Self> {
        let k = 1usize << (m * bits as usize);
        if m * bits as usize > MAX_TOPLINE_BITS || table.rows() != k || counts.len() != k {
            return Err(Error::shape("topline table does not match the code layout"));
        }
        Ok(Self {
            m,
            bits,
            table,
            counts,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of codes seen during fitting.
    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }
}

impl Decoder for ToplineDecoder {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        if codes.m() != self.m || codes.bits() != self.bits {
            return Err(Error::shape("codes do not match the topline layout"));
        }
        let ids: Vec<usize> = (0..codes.len())
            .map(|r| codes.code_value(r) as usize)
            .collect();
        Ok(self.table.select_rows(&ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::natural_decode;
    use crate::encoders::{kmeans_train, pq_train};
    use crate::testutil::gaussian;

    #[test]
    fn singleton_cells_reproduce_training_vectors() {
        let x = DenseMatrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0], [-1.0, 0.5]]).unwrap();
        let codes = CodeArray::pack(&[0, 1, 1, 0, 1, 1], 2, 1).unwrap();
        let t = topline_fit(&codes, &x, None).unwrap();
        assert_eq!(t.decode(&codes).unwrap(), x);
        assert_eq!(t.occupied(), 3);
    }

    #[test]
    fn kmeans_codes_give_kmeans_centroids_at_convergence() {
        let x = gaussian(800, 3, 5);
        let pq = pq_train(&x, 1, 4, 200, 1).unwrap();
        let km = kmeans_train(&x, 16, 200, 1).unwrap();
        assert!(km.iterations_run < 200, "k-means did not converge");
        let codes = pq.encode(&x).unwrap();
        let t = topline_fit(&codes, &x, Some(&pq)).unwrap();
        for c in 0..16 {
            for (a, b) in t.table.row(c).iter().zip(km.centroids.row(c)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn no_worse_than_natural_and_fallback_used() {
        let x = gaussian(3000, 8, 6);
        let pq = pq_train(&x, 2, 8, 10, 2).unwrap();
        let codes = pq.encode(&x).unwrap();
        let t = topline_fit(&codes, &x, Some(&pq)).unwrap();
        let natural = natural_decode(&pq, &codes).unwrap().mse(&x).unwrap();
        let topline = t.decode(&codes).unwrap().mse(&x).unwrap();
        assert!(topline <= natural + 1e-9);
        // an unseen code decodes like the natural decoder
        let unseen = (0..65536u32).find(|&c| t.counts[c as usize] == 0).unwrap();
        let code = CodeArray::pack(&[unseen & 0xff, unseen >> 8], 2, 8).unwrap();
        assert_eq!(
            t.decode(&code).unwrap(),
            natural_decode(&pq, &code).unwrap()
        );
    }

    #[test]
    fn refuses_huge_tables() {
        let x = gaussian(4, 2, 0);
        let codes = CodeArray::pack(&[0; 4 * 4], 4, 8).unwrap();
        assert!(topline_fit(&codes, &x, None).is_err());
    }
}
