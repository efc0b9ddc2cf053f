//! Iterative quantization: PCA to `m` dimensions, then a learned `m × m`
//! rotation that minimizes `‖B − V R‖²` over sign matrices `B`.

use crate::codebook::BinaryProjection;
use crate::codes::CodeArray;
use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DenseMatrix;

pub const DEFAULT_ITQ_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ItqModel {
    /// Training mean, subtracted before projecting.
    pub mean: Vec<f32>,
    /// `d × m` top principal directions, row-major.
    pub pca: Vec<f32>,
    /// `m × m` orthogonal rotation, row-major.
    pub rotation: Vec<f32>,
    dim: usize,
    bits: usize,
    basis: BinaryProjection,
}

#[derive(Debug, Clone)]
pub struct ItqTraining {
    pub model: ItqModel,
    /// `‖B − V R‖²` before each rotation update, then once at the end.
    pub objective_history: Vec<f64>,
}

/// Trains ITQ. The rotation starts at the identity, so training is
/// deterministic in the data and `seed` does not change the result.
pub fn itq_train(x: &DenseMatrix, m: usize, iters: usize, seed: u64) -> Result<ItqModel> {
    Ok(itq_train_with_history(x, m, iters, seed)?.model)
}

pub fn itq_train_with_history(
    x: &DenseMatrix,
    m: usize,
    iters: usize,
    _seed: u64,
) -> Result<ItqTraining> {
    let d = x.dim();
    if m == 0 || m > d {
        return Err(Error::param(format!(
            "ITQ with {m} bits on {d}-dimensional data"
        )));
    }
    if x.rows() < 2 {
        return Err(Error::param("ITQ needs at least two training vectors"));
    }
    let mean = x.column_mean();
    let n = x.rows();
    let mut cov = linalg::cross_product(x, Some(&mean), x, Some(&mean));
    cov.iter_mut().for_each(|v| *v /= n as f64);
    let (_, w) = linalg::top_eigenvectors(&linalg::to_dmatrix(&cov, d, d), m);
    let pca = linalg::to_row_major(&w);

    // V = (X − μ) W, n × m
    let mut centered = Vec::with_capacity(n * d);
    for r in x.iter_rows() {
        centered.extend(r.iter().zip(&mean).map(|(&v, &c)| v as f64 - c));
    }
    let v = linalg::gemm(&centered, n, d, &pca, m);
    drop(centered);

    let mut rotation = vec![0.0f64; m * m];
    for i in 0..m {
        rotation[i * m + i] = 1.0;
    }
    let mut history = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let z = linalg::gemm(&v, n, m, &rotation, m);
        let b: Vec<f64> = z.iter().map(|&t| sign(t)).collect();
        history.push(objective(&b, &z));
        let cross = linalg::gemm_tn(&v, n, m, &b, m);
        let r = linalg::procrustes(&linalg::to_dmatrix(&cross, m, m))?;
        rotation = linalg::to_row_major(&r);
    }
    let z = linalg::gemm(&v, n, m, &rotation, m);
    let b: Vec<f64> = z.iter().map(|&t| sign(t)).collect();
    history.push(objective(&b, &z));

    let model = ItqModel::from_parts(
        mean.iter().map(|&v| v as f32).collect(),
        pca.iter().map(|&v| v as f32).collect(),
        rotation.iter().map(|&v| v as f32).collect(),
        d,
        m,
    )?;
    Ok(ItqTraining {
        model,
        objective_history: history,
    })
}

#[inline]
fn sign(t: f64) -> f64 {
    if t >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn objective(b: &[f64], z: &[f64]) -> f64 {
    b.iter().zip(z).map(|(p, q)| (p - q) * (p - q)).sum()
}

impl ItqModel {
    pub fn from_parts(
        mean: Vec<f32>,
        pca: Vec<f32>,
        rotation: Vec<f32>,
        dim: usize,
        bits: usize,
    ) -> Result<Self> {
        if mean.len() != dim || pca.len() != dim * bits || rotation.len() != bits * bits {
            return Err(Error::shape("ITQ parameter sizes do not match d and m"));
        }
        // basis = (W R)ᵀ
        let w: Vec<f64> = pca.iter().map(|&v| v as f64).collect();
        let r: Vec<f64> = rotation.iter().map(|&v| v as f64).collect();
        let wr = linalg::gemm(&w, dim, bits, &r, bits);
        let mut basis = vec![0.0f32; bits * dim];
        for j in 0..dim {
            for i in 0..bits {
                basis[i * dim + j] = wr[j * bits + i] as f32;
            }
        }
        Ok(Self {
            mean,
            pca,
            rotation,
            dim,
            bits,
            basis: BinaryProjection {
                m: bits,
                dim,
                basis,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn basis(&self) -> &BinaryProjection {
        &self.basis
    }

    /// Projections `u_iᵀ(x − μ)` in `f64`.
    pub fn project(&self, x: &[f32]) -> Vec<f64> {
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(&v, &c)| v as f64 - c as f64)
            .collect();
        (0..self.bits)
            .map(|i| {
                self.basis
                    .row(i)
                    .iter()
                    .zip(&centered)
                    .map(|(&u, &c)| u as f64 * c)
                    .sum()
            })
            .collect()
    }

    /// One bit per projection: stored 1 for a non-negative projection
    /// (`sign(0) = +1`), 0 otherwise.
    pub fn encode(&self, x: &DenseMatrix) -> Result<CodeArray> {
        if x.dim() != self.dim {
            return Err(Error::shape(format!(
                "vectors of dimension {} for an ITQ model of dimension {}",
                x.dim(),
                self.dim
            )));
        }
        let mut table = Vec::with_capacity(x.rows() * self.bits);
        for r in x.iter_rows() {
            table.extend(self.project(r).into_iter().map(|p| u32::from(p >= 0.0)));
        }
        CodeArray::pack(&table, self.bits, 1)
    }
}

pub fn binary_encode(model: &ItqModel, x: &DenseMatrix) -> Result<CodeArray> {
    model.encode(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::ORTHO_TOL;
    use crate::synthetic::gaussian;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn correlated(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let g = gaussian(n, d, seed);
        // stretch coordinates so the PCA directions are well separated
        let data = g
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (1.0 + (i % d) as f32) + 0.3)
            .collect();
        DenseMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn zero_iterations_gives_pca_basis() {
        let x = correlated(3000, 6, 1);
        let model = itq_train(&x, 4, 0, 0).unwrap();
        assert!(model.basis().orthonormality_error() <= ORTHO_TOL);
        assert_eq!(model.basis().basis, {
            // basis rows are the PCA columns when R = I
            let mut b = vec![0.0f32; 4 * 6];
            for j in 0..6 {
                for i in 0..4 {
                    b[i * 6 + j] = model.pca[j * 4 + i];
                }
            }
            b
        });
        // the leading direction is the most stretched coordinate
        let u0 = model.basis().row(0);
        assert!(u0[5].abs() > 0.99);
    }

    #[test]
    fn objective_non_increasing_and_rotation_orthogonal() {
        let x = correlated(2000, 16, 2);
        let t = itq_train_with_history(&x, 8, 30, 0).unwrap();
        for w in t.objective_history.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-9) + 1e-9,
                "{:?}",
                t.objective_history
            );
        }
        assert!(linalg::column_orthonormality_error(&t.model.rotation, 8, 8) <= ORTHO_TOL);
        assert!(t.model.basis().orthonormality_error() <= ORTHO_TOL);
    }

    #[test]
    fn quadrants_get_distinct_codes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0f32, 0.3).unwrap();
        let centers = [[5.0f32, 5.0], [-5.0, 5.0], [-5.0, -5.0], [5.0, -5.0]];
        let mut rows = Vec::new();
        for c in centers {
            for _ in 0..200 {
                rows.push([c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
            }
        }
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let model = itq_train(&x, 2, 50, 0).unwrap();
        let codes = model.encode(&x).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for q in 0..4 {
            let c = codes.code(q * 200)[0];
            for i in 0..200 {
                assert_eq!(codes.code(q * 200 + i)[0], c, "cloud {q} split");
            }
            seen.insert(c);
        }
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn sign_conventions() {
        let x = correlated(500, 8, 4);
        let model = itq_train(&x, 8, 10, 0).unwrap();
        let mean = DenseMatrix::new(1, 8, model.mean.clone()).unwrap();
        let codes = model.encode(&mean).unwrap();
        assert_eq!(codes.code(0), &[0xff]);

        let v: Vec<f32> = x.row(3).to_vec();
        let mirrored: Vec<f32> = v
            .iter()
            .zip(&model.mean)
            .map(|(a, m)| 2.0 * m - a)
            .collect();
        let both = DenseMatrix::from_rows(&[v, mirrored]).unwrap();
        let codes = model.encode(&both).unwrap();
        // no projection is exactly zero for this point
        assert_eq!(codes.code(0)[0], !codes.code(1)[0]);
    }

    #[test]
    fn codes_match_direct_matrix_product() {
        let x = correlated(800, 10, 5);
        let model = itq_train(&x, 6, 20, 0).unwrap();
        let test = correlated(300, 10, 6);
        let codes = model.encode(&test).unwrap();
        // oracle: (x − μ)ᵀ W R, column by column
        for (row, r) in test.iter_rows().enumerate() {
            for i in 0..6 {
                let mut s = 0.0f64;
                for j in 0..10 {
                    let mut wr = 0.0f64;
                    for t in 0..6 {
                        wr += model.pca[j * 6 + t] as f64 * model.rotation[t * 6 + i] as f64;
                    }
                    s += (r[j] as f64 - model.mean[j] as f64) * wr;
                }
                // the model stores the product rounded to f32
                if s.abs() > 1e-5 {
                    assert_eq!(codes.get(row, i), u32::from(s >= 0.0), "row {row} bit {i}");
                }
            }
        }
    }

    #[test]
    fn rejects_too_many_bits() {
        let x = correlated(100, 4, 0);
        assert!(itq_train(&x, 5, 1, 0).is_err());
    }
}
