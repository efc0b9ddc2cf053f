//! Additive LUT decoder fitted in closed form.
//!
//! With codes turned into an `n × mK′` one-hot design `I` (exactly `m` ones
//! per row) and training vectors `X`, the tables `C` minimize
//! `‖X − I C‖² + λ‖C‖²`, i.e. solve `(IᵀI + λ·Id) C = IᵀX`. Every output
//! dimension is an independent right-hand side of the same system.

use std::ops::AddAssign;

use nalgebra::DMatrix;
use num_traits::Zero;

use super::Decoder;
use crate::codebook::DecoderLut;
use crate::codes::CodeArray;
use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DenseMatrix;

/// Largest supported design width `m · 2^bits`.
pub const MAX_DESIGN_COLUMNS: usize = 4096;

/// Relative residual allowed on the normal equations.
pub const NORMAL_EQUATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct AqFit {
    pub lut: DecoderLut,
    pub lambda: f64,
    /// Numerical rank of the system actually solved.
    pub rank: usize,
    /// `‖(IᵀI + λ) C − IᵀX‖_F / ‖IᵀX‖_F`, evaluated on the `f32` tables.
    pub residual: f64,
}

/// Scale-aware ridge: `1e-3 · trace(IᵀI) / (mK′)`, which is `1e-3 · n / K′`.
pub fn default_lambda(codes: &CodeArray) -> f64 {
    1e-3 * codes.len() as f64 / codes.ksub() as f64
}

pub fn aq_fit(codes: &CodeArray, x: &DenseMatrix, lambda: f64) -> Result<DecoderLut> {
    Ok(aq_fit_with_report(codes, x, lambda)?.lut)
}

/// Solves the regularized normal equations. At `λ = 0` the one-hot design is
/// rank deficient whenever `m > 1` (each block's columns sum to the all-ones
/// vector), so the minimum-norm least-squares solution is returned; the
/// system is reported singular only if that solution misses the normal
/// equations.
pub fn aq_fit_with_report(codes: &CodeArray, x: &DenseMatrix, lambda: f64) -> Result<AqFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::param(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    if codes.len() != x.rows() {
        return Err(Error::shape(format!(
            "{} codes for {} training vectors",
            codes.len(),
            x.rows()
        )));
    }
    let (m, ksub, d) = (codes.m(), codes.ksub(), x.dim());
    let cols = m * ksub;
    if cols > MAX_DESIGN_COLUMNS {
        return Err(Error::param(format!(
            "design with {cols} columns is too wide"
        )));
    }
    let (gram, rhs) = normal_equations(codes, x);

    let mut a = DMatrix::from_row_slice(cols, cols, &gram);
    for i in 0..cols {
        a[(i, i)] += lambda;
    }
    let b = DMatrix::from_row_slice(cols, d, &rhs);
    let (c, rank) = linalg::solve_psd(a.clone(), &b, lambda == 0.0)?;

    let tables: Vec<f32> = linalg::to_row_major(&c)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let lut = DecoderLut::new(m, ksub, d, tables)?;

    let c32 = DMatrix::from_row_slice(
        cols,
        d,
        &lut.tables().iter().map(|&v| v as f64).collect::<Vec<_>>(),
    );
    let b_norm = b.norm();
    let residual = if b_norm == 0.0 {
        (&a * &c32).norm()
    } else {
        (&a * &c32 - &b).norm() / b_norm
    };
    // f32 storage of the tables bounds how small the residual can get
    let tol = NORMAL_EQUATION_TOL.max(1e-6 * cond_hint(&a));
    if residual > tol && !(b_norm == 0.0 && residual == 0.0) {
        return Err(Error::SingularSystem(format!(
            "normal-equation residual {residual:.3e} after solving (rank {rank} of {cols})"
        )));
    }
    Ok(AqFit {
        lut,
        lambda,
        rank,
        residual,
    })
}

// ratio of extreme diagonal entries, a cheap proxy for conditioning
fn cond_hint(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let v = a[(i, i)];
        if v > 0.0 {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi == 0.0 {
        1.0
    } else {
        (hi / lo).max(1.0)
    }
}

/// `IᵀI` (row-major `mK′ × mK′`) and `IᵀX` (`mK′ × d`) from the codes.
pub fn normal_equations(codes: &CodeArray, x: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let (m, ksub, d) = (codes.m(), codes.ksub(), x.dim());
    let cols = m * ksub;
    let mut gram = vec![0u64; cols * cols];
    let mut rhs = vec![0.0f64; cols * d];
    let mut idx = vec![0u32; m];
    let mut col = vec![0usize; m];
    for row in 0..codes.len() {
        codes.subindices_into(row, &mut idx);
        for (i, (&k, c)) in idx.iter().zip(col.iter_mut()).enumerate() {
            *c = i * ksub + k as usize;
        }
        for &a in &col {
            let g = &mut gram[a * cols..(a + 1) * cols];
            for &b in &col {
                g[b] += 1;
            }
            for (r, &v) in rhs[a * d..(a + 1) * d].iter_mut().zip(x.row(row)) {
                *r += v as f64;
            }
        }
    }
    (gram.into_iter().map(|v| v as f64).collect(), rhs)
}

/// Sums the selected LUT rows, in subquantizer order, into `out`.
#[inline]
pub(crate) fn accumulate_lut<T: Copy + AddAssign + Zero>(
    tables: &[T],
    ksub: usize,
    dim: usize,
    idx: &[u32],
    out: &mut [T],
) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (i, &k) in idx.iter().enumerate() {
        let start = (i * ksub + k as usize) * dim;
        for (o, &t) in out.iter_mut().zip(&tables[start..start + dim]) {
            *o += t;
        }
    }
}

/// Reconstruction as the sum of one full-dimension LUT row per subindex.
pub fn aq_decode(lut: &DecoderLut, codes: &CodeArray) -> Result<DenseMatrix> {
    if codes.m() != lut.m() || codes.ksub() != lut.ksub() {
        return Err(Error::shape(format!(
            "codes with m = {}, K' = {} for a LUT with m = {}, K' = {}",
            codes.m(),
            codes.ksub(),
            lut.m(),
            lut.ksub()
        )));
    }
    let d = lut.dim();
    let mut out = DenseMatrix::zeros(codes.len(), d);
    let mut idx = vec![0u32; codes.m()];
    for row in 0..codes.len() {
        codes.subindices_into(row, &mut idx);
        accumulate_lut(lut.tables(), lut.ksub(), d, &idx, out.row_mut(row));
    }
    Ok(out)
}

impl Decoder for DecoderLut {
    fn dim(&self) -> usize {
        DecoderLut::dim(self)
    }

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        aq_decode(self, codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::binary::{binary_naive_decode, naive_lut};
    use crate::decoders::natural_decode;
    use crate::encoders::{itq_train, pq_train};
    use crate::synthetic::{gaussian, GaussianMixture, MixtureSpec};
    use rand::{Rng, SeedableRng};

    fn mixture(n: usize, d: usize) -> DenseMatrix {
        GaussianMixture::new(MixtureSpec {
            dim: d,
            components: 10,
            latent_dim: 2,
            ..MixtureSpec::default()
        })
        .sample(n, 1)
    }

    #[test]
    fn one_block_gives_cell_means() {
        let x = gaussian(500, 3, 1);
        let pq = pq_train(&x, 1, 4, 10, 0).unwrap();
        let codes = pq.encode(&x).unwrap();
        let lut = aq_fit(&codes, &x, 0.0).unwrap();
        let topline = crate::decoders::topline_fit(&codes, &x, None).unwrap();
        for k in 0..16 {
            if topline.counts[k] > 0 {
                for (a, b) in lut.entry(0, k).iter().zip(topline.table.row(k)) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn zero_target_gives_zero_tables() {
        let x = gaussian(200, 4, 2);
        let pq = pq_train(&x, 2, 4, 5, 0).unwrap();
        let codes = pq.encode(&x).unwrap();
        let zeros = DenseMatrix::zeros(200, 4);
        for lambda in [0.0, 0.5] {
            let lut = aq_fit(&codes, &zeros, lambda).unwrap();
            assert!(lut.tables().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tiny_instance_matches_dense_least_squares() {
        // n = 6, m = 2, K' = 2, d = 1
        let codes = CodeArray::pack(&[0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 1, 1], 2, 1).unwrap();
        let x = DenseMatrix::from_rows(&[[1.0f32], [2.0], [4.0], [7.0], [1.5], [6.0]]).unwrap();
        // oracle: build I explicitly and solve (IᵀI + λ) c = IᵀX by Gaussian elimination
        let design: Vec<[f64; 4]> = (0..6)
            .map(|r| {
                let mut row = [0.0; 4];
                row[codes.get(r, 0) as usize] = 1.0;
                row[2 + codes.get(r, 1) as usize] = 1.0;
                row
            })
            .collect();
        for lambda in [0.1f64, 1.0] {
            let mut a = [[0.0f64; 5]; 4];
            for (r, row) in design.iter().enumerate() {
                for i in 0..4 {
                    for j in 0..4 {
                        a[i][j] += row[i] * row[j];
                    }
                    a[i][4] += row[i] * x.row(r)[0] as f64;
                }
            }
            for (i, row) in a.iter_mut().enumerate() {
                row[i] += lambda;
            }
            for p in 0..4 {
                let piv = a[p][p];
                for j in p..5 {
                    a[p][j] /= piv;
                }
                for r in 0..4 {
                    if r != p {
                        let f = a[r][p];
                        for j in p..5 {
                            a[r][j] -= f * a[p][j];
                        }
                    }
                }
            }
            let lut = aq_fit(&codes, &x, lambda).unwrap();
            for i in 0..4 {
                assert!(
                    (lut.tables()[i] as f64 - a[i][4]).abs() < 1e-5,
                    "lambda {lambda}"
                );
            }
        }
        // at λ = 0 the design has rank 3 and spans {1, k_0, k_1}; the fit
        // must reproduce ordinary least squares on those three features
        let lut = aq_fit(&codes, &x, 0.0).unwrap();
        let rec = aq_decode(&lut, &codes).unwrap();
        let mut ata = [[0.0f64; 4]; 3];
        for r in 0..6 {
            let f = [1.0, codes.get(r, 0) as f64, codes.get(r, 1) as f64];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += f[i] * f[j];
                }
                ata[i][3] += f[i] * x.row(r)[0] as f64;
            }
        }
        for p in 0..3 {
            let piv = ata[p][p];
            for j in p..4 {
                ata[p][j] /= piv;
            }
            for r in 0..3 {
                if r != p {
                    let f = ata[r][p];
                    for j in p..4 {
                        ata[r][j] -= f * ata[p][j];
                    }
                }
            }
        }
        for r in 0..6 {
            let pred =
                ata[0][3] + ata[1][3] * codes.get(r, 0) as f64 + ata[2][3] * codes.get(r, 1) as f64;
            assert!((pred - rec.row(r)[0] as f64).abs() < 1e-5, "row {r}");
        }
    }

    #[test]
    fn normal_equations_hold_and_dominate_natural() {
        let x = mixture(3000, 8);
        let pq = pq_train(&x, 4, 4, 10, 0).unwrap();
        let codes = pq.encode(&x).unwrap();
        let fit = aq_fit_with_report(&codes, &x, 0.0).unwrap();
        assert!(
            fit.residual <= NORMAL_EQUATION_TOL,
            "residual {}",
            fit.residual
        );
        assert!(fit.rank < 4 * 16);
        let aq = aq_decode(&fit.lut, &codes).unwrap().mse(&x).unwrap();
        let natural = natural_decode(&pq, &codes).unwrap().mse(&x).unwrap();
        assert!(aq <= natural + 1e-9, "aq {aq} natural {natural}");
    }

    #[test]
    fn training_mse_non_decreasing_in_lambda() {
        let x = mixture(2000, 8);
        let pq = pq_train(&x, 4, 4, 10, 0).unwrap();
        let codes = pq.encode(&x).unwrap();
        let mut prev = 0.0f64;
        for lambda in [0.0, 1e-3, 1e-1, 1.0, 10.0, 100.0, 1e3] {
            let mse = aq_decode(&aq_fit(&codes, &x, lambda).unwrap(), &codes)
                .unwrap()
                .mse(&x)
                .unwrap();
            assert!(
                mse >= prev - 1e-7 * prev.max(1.0),
                "lambda {lambda}: {mse} < {prev}"
            );
            prev = mse;
        }
    }

    #[test]
    fn embedded_pq_lut_equals_natural_decode() {
        let x = gaussian(500, 6, 3);
        let pq = pq_train(&x, 3, 4, 5, 0).unwrap();
        let codes = pq.encode(&x).unwrap();
        let lut = DecoderLut::from_codebook(&pq.codebook);
        assert_eq!(
            aq_decode(&lut, &codes).unwrap(),
            natural_decode(&pq, &codes).unwrap()
        );
        let zero = DecoderLut::zeros(3, 16, 6);
        assert!(aq_decode(&zero, &codes)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn binary_lut_beats_naive_reconstruction() {
        let x = mixture(4000, 16);
        let itq = itq_train(&x, 16, 20, 0).unwrap();
        let codes = itq.encode(&x).unwrap();
        let fit = aq_fit_with_report(&codes, &x, 0.0).unwrap();
        let aq = aq_decode(&fit.lut, &codes).unwrap().mse(&x).unwrap();
        let naive = binary_naive_decode(&itq, &codes).unwrap().mse(&x).unwrap();
        assert!(aq <= naive + 1e-9, "aq {aq} naive {naive}");
        // the naive decoder is itself an additive LUT, hence a feasible point
        let feasible = aq_decode(&naive_lut(&itq), &codes)
            .unwrap()
            .mse(&x)
            .unwrap();
        assert!((feasible - naive).abs() < 1e-6 * naive.max(1.0));
    }

    #[test]
    fn default_lambda_scale() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t: Vec<u32> = (0..1600 * 4).map(|_| rng.random_range(0..16)).collect();
        let codes = CodeArray::pack(&t, 4, 4).unwrap();
        assert!((default_lambda(&codes) - 1e-3 * 1600.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_lambda_and_bad_shapes() {
        let x = gaussian(10, 2, 0);
        let codes = CodeArray::pack(&[0; 10], 1, 1).unwrap();
        assert!(aq_fit(&codes, &x, -1.0).is_err());
        assert!(aq_fit(&codes.slice(0..5), &x, 0.0).is_err());
    }
}
