//! Product quantizer `PQm×b`: `m` independent k-means quantizers with `2^b`
//! centroids each, on consecutive `d/m`-dimensional slices.

use super::assign::nearest_centroids;
use super::kmeans::{kmeans_train, lloyd, KMeansModel};
use crate::codebook::SubspaceCodebook;
use crate::codes::CodeArray;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PqModel {
    pub codebook: SubspaceCodebook,
}

pub(crate) fn subspace_seed(seed: u64, sub: usize) -> u64 {
    seed.wrapping_add((sub as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub(crate) fn check_pq_params(x: &DenseMatrix, m: usize, bits: u32) -> Result<usize> {
    if m == 0 || !x.dim().is_multiple_of(m) {
        return Err(Error::param(format!(
            "dimension {} is not divisible by m = {m}",
            x.dim()
        )));
    }
    if !(1..=crate::codes::MAX_BITS).contains(&bits) {
        return Err(Error::param(format!(
            "unsupported bits per subindex {bits}"
        )));
    }
    if (1usize << bits) > x.rows() {
        return Err(Error::param(format!(
            "2^{bits} centroids need at least as many training vectors, got {}",
            x.rows()
        )));
    }
    Ok(x.dim() / m)
}

pub fn pq_train(x: &DenseMatrix, m: usize, bits: u32, iters: usize, seed: u64) -> Result<PqModel> {
    let dsub = check_pq_params(x, m, bits)?;
    let ksub = 1usize << bits;
    let mut centroids = Vec::with_capacity(m * ksub * dsub);
    for sub in 0..m {
        let slice = x.column_block(sub * dsub, dsub);
        let km = kmeans_train(&slice, ksub, iters, subspace_seed(seed, sub))?;
        centroids.extend_from_slice(km.centroids.as_slice());
    }
    Ok(PqModel {
        codebook: SubspaceCodebook::new(m, ksub, dsub, centroids, None)?,
    })
}

impl PqModel {
    pub fn m(&self) -> usize {
        self.codebook.m()
    }

    pub fn bits(&self) -> u32 {
        self.codebook.bits()
    }

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    fn check_dim(&self, x: &DenseMatrix) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::shape(format!(
                "vectors of dimension {} for a quantizer of dimension {}",
                x.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Nearest sub-centroid per subspace (after the rotation, if any).
    pub fn encode(&self, x: &DenseMatrix) -> Result<CodeArray> {
        self.check_dim(x)?;
        let xr = self.codebook.rotate(x);
        Ok(self.encode_rotated(&xr).0)
    }

    /// Encodes already-rotated vectors; also returns the per-vector squared
    /// quantization error in the rotated space.
    pub(crate) fn encode_rotated(&self, xr: &DenseMatrix) -> (CodeArray, Vec<f64>) {
        let (m, dsub) = (self.m(), self.codebook.dsub());
        let n = xr.rows();
        let mut table = vec![0u32; n * m];
        let mut err = vec![0.0f64; n];
        for sub in 0..m {
            let slice = xr.column_block(sub * dsub, dsub);
            let (assign, dist) = nearest_centroids(&slice, &self.codebook.subspace(sub));
            for (row, (a, d)) in assign.into_iter().zip(dist).enumerate() {
                table[row * m + sub] = a;
                err[row] += d;
            }
        }
        let codes =
            CodeArray::pack(&table, m, self.bits()).expect("subindices fit by construction");
        (codes, err)
    }

    /// Concatenated sub-centroids, still in the rotated space.
    pub(crate) fn decode_rotated(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        let (m, dsub) = (self.m(), self.codebook.dsub());
        if codes.m() != m || codes.bits() != self.bits() {
            return Err(Error::shape(format!(
                "codes PQ{}x{} for a PQ{m}x{} model",
                codes.m(),
                codes.bits(),
                self.bits()
            )));
        }
        let d = self.dim();
        let mut out = DenseMatrix::zeros(codes.len(), d);
        let mut idx = vec![0u32; m];
        for row in 0..codes.len() {
            codes.subindices_into(row, &mut idx);
            let dst = out.row_mut(row);
            for (sub, &k) in idx.iter().enumerate() {
                dst[sub * dsub..(sub + 1) * dsub]
                    .copy_from_slice(self.codebook.centroid(sub, k as usize));
            }
        }
        Ok(out)
    }

    /// Mean squared quantization error of `x` under this model.
    pub fn mse(&self, x: &DenseMatrix) -> Result<f64> {
        self.check_dim(x)?;
        let xr = self.codebook.rotate(x);
        let (_, err) = self.encode_rotated(&xr);
        Ok(err.iter().sum::<f64>() / x.rows().max(1) as f64)
    }

    /// A few warm-started Lloyd iterations per subspace on rotated data.
    pub(crate) fn refine(&mut self, xr: &DenseMatrix, iters: usize) -> Result<Vec<KMeansModel>> {
        let (m, ksub, dsub) = (self.m(), self.codebook.ksub(), self.codebook.dsub());
        let mut centroids = Vec::with_capacity(m * ksub * dsub);
        let mut models = Vec::with_capacity(m);
        for sub in 0..m {
            let slice = xr.column_block(sub * dsub, dsub);
            let km = lloyd(&slice, self.codebook.subspace(sub), iters);
            centroids.extend_from_slice(km.centroids.as_slice());
            models.push(km);
        }
        self.codebook = SubspaceCodebook::new(
            m,
            ksub,
            dsub,
            centroids,
            self.codebook.rotation().map(|r| r.to_vec()),
        )?;
        Ok(models)
    }

    pub(crate) fn with_rotation(&self, rotation: Vec<f32>) -> Result<PqModel> {
        let cb = &self.codebook;
        Ok(PqModel {
            codebook: SubspaceCodebook::new(
                cb.m(),
                cb.ksub(),
                cb.dsub(),
                cb.centroids().to_vec(),
                Some(rotation),
            )?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::squared_l2;
    use crate::testutil::gaussian;

    #[test]
    fn single_subspace_equals_kmeans() {
        let x = gaussian(600, 6, 3);
        let pq = pq_train(&x, 1, 4, 10, 77).unwrap();
        let km = kmeans_train(&x, 16, 10, 77).unwrap();
        assert_eq!(pq.codebook.centroids(), km.centroids.as_slice());
    }

    #[test]
    fn scalar_case_is_per_coordinate_two_means() {
        let x = gaussian(300, 3, 4);
        let pq = pq_train(&x, 3, 1, 20, 5).unwrap();
        for sub in 0..3 {
            let km = kmeans_train(&x.column_block(sub, 1), 2, 20, subspace_seed(5, sub)).unwrap();
            assert_eq!(pq.codebook.subspace(sub), km.centroids);
        }
    }

    #[test]
    fn total_mse_is_sum_of_subspace_mses() {
        let x = gaussian(2000, 8, 6);
        let pq = pq_train(&x, 2, 8, 15, 1).unwrap();
        let total = pq.mse(&x).unwrap();
        let mut parts = 0.0;
        for sub in 0..2 {
            let slice = x.column_block(sub * 4, 4);
            let c = pq.codebook.subspace(sub);
            parts += slice
                .iter_rows()
                .map(|r| {
                    c.iter_rows()
                        .map(|q| squared_l2(r, q))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
                / x.rows() as f64;
        }
        assert!((total - parts).abs() <= 1e-9 * parts);
    }

    #[test]
    fn encode_matches_exhaustive_search() {
        let x = gaussian(1500, 8, 7);
        let pq = pq_train(&x, 4, 4, 10, 2).unwrap();
        let test = gaussian(700, 8, 70);
        let codes = pq.encode(&test).unwrap();
        for row in 0..test.rows() {
            for sub in 0..4 {
                let xs = &test.row(row)[sub * 2..sub * 2 + 2];
                let mut best = (0u32, f64::INFINITY);
                for k in 0..16 {
                    let d = squared_l2(xs, pq.codebook.centroid(sub, k));
                    if d < best.1 {
                        best = (k as u32, d);
                    }
                }
                assert_eq!(codes.get(row, sub), best.0);
            }
        }
    }

    #[test]
    fn representable_point_and_tie_rule() {
        let x = gaussian(512, 4, 8);
        let pq = pq_train(&x, 2, 8, 5, 3).unwrap();
        let mut v = pq.codebook.centroid(0, 3).to_vec();
        v.extend_from_slice(pq.codebook.centroid(1, 7));
        let q = DenseMatrix::new(1, 4, v).unwrap();
        let codes = pq.encode(&q).unwrap();
        // duplicated centroids would make the lowest index win; compare distances
        let d0 = squared_l2(
            &q.row(0)[..2],
            pq.codebook.centroid(0, codes.get(0, 0) as usize),
        );
        let d1 = squared_l2(
            &q.row(0)[2..],
            pq.codebook.centroid(1, codes.get(0, 1) as usize),
        );
        assert_eq!((d0, d1), (0.0, 0.0));
        assert!(codes.get(0, 0) <= 3 && codes.get(0, 1) <= 7);

        // hand-built codebook: sub-centroids 2 and 5 equidistant from the query
        let mut cents = vec![100.0f32; 8];
        cents[2] = -1.0;
        cents[5] = 1.0;
        let cb = SubspaceCodebook::new(1, 8, 1, cents, None).unwrap();
        let model = PqModel { codebook: cb };
        let codes = model
            .encode(&DenseMatrix::from_rows(&[[0.0f32]]).unwrap())
            .unwrap();
        assert_eq!(codes.get(0, 0), 2);
    }

    #[test]
    fn rejects_indivisible_dimension() {
        let x = gaussian(100, 6, 0);
        assert!(matches!(
            pq_train(&x, 4, 4, 1, 0),
            Err(Error::InvalidParameter(_))
        ));
        let pq = pq_train(&x, 3, 4, 1, 0).unwrap();
        assert!(pq.encode(&gaussian(2, 5, 0)).is_err());
    }
}
