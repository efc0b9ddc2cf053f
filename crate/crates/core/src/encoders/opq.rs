//! Optimized product quantization, non-parametric variant: alternate between
//! an orthogonal Procrustes update of the rotation (codes fixed) and
//! warm-started Lloyd steps on the rotated data (rotation fixed).

use nalgebra::DMatrix;

use super::pq::{pq_train, PqModel};
use crate::codebook::rotate_rows;
use crate::error::Result;
use crate::linalg;
use crate::matrix::DenseMatrix;

pub const DEFAULT_OPQ_OUTER_ITERS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct OpqConfig {
    pub outer_iters: usize,
    /// Lloyd iterations for the initial PQ.
    pub kmeans_iters: usize,
    /// Lloyd iterations per outer iteration.
    pub inner_iters: usize,
}

impl Default for OpqConfig {
    fn default() -> Self {
        Self {
            outer_iters: DEFAULT_OPQ_OUTER_ITERS,
            kmeans_iters: super::kmeans::DEFAULT_KMEANS_ITERS,
            inner_iters: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpqTraining {
    pub model: PqModel,
    /// Training MSE `‖Rx − q(Rx)‖²` at the start and after every outer iteration.
    pub objective_history: Vec<f64>,
}

pub fn opq_train(
    x: &DenseMatrix,
    m: usize,
    bits: u32,
    outer_iters: usize,
    seed: u64,
) -> Result<PqModel> {
    let cfg = OpqConfig {
        outer_iters,
        ..OpqConfig::default()
    };
    Ok(opq_train_with(x, m, bits, &cfg, seed)?.model)
}

pub fn opq_train_with(
    x: &DenseMatrix,
    m: usize,
    bits: u32,
    cfg: &OpqConfig,
    seed: u64,
) -> Result<OpqTraining> {
    let d = x.dim();
    let base = pq_train(x, m, bits, cfg.kmeans_iters, seed)?;
    let mut identity = vec![0.0f32; d * d];
    for i in 0..d {
        identity[i * d + i] = 1.0;
    }
    let mut model = base.with_rotation(identity)?;
    let mut history = vec![model.mse(x)?];

    for _ in 0..cfg.outer_iters {
        let xr = model.codebook.rotate(x);
        let (codes, _) = model.encode_rotated(&xr);
        let y = model.decode_rotated(&codes)?;
        // min over orthogonal A of ‖X A − Y‖, then R = Aᵀ
        let cross = linalg::cross_product(x, None, &y, None);
        let a = linalg::procrustes(&linalg::to_dmatrix(&cross, d, d))?;
        let r: DMatrix<f64> = a.transpose();
        let rotation: Vec<f32> = linalg::to_row_major(&r)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        model = model.with_rotation(rotation)?;
        let xr = rotate_rows(x, model.codebook.rotation().unwrap());
        model.refine(&xr, cfg.inner_iters)?;
        history.push(model.mse(x)?);
    }
    Ok(OpqTraining {
        model,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::ORTHO_TOL;
    use crate::synthetic::{GaussianMixture, MixtureSpec};

    fn data() -> DenseMatrix {
        GaussianMixture::new(MixtureSpec {
            dim: 8,
            components: 6,
            latent_dim: 2,
            ..MixtureSpec::default()
        })
        .sample(2000, 1)
    }

    #[test]
    fn zero_outer_iterations_is_plain_pq() {
        let x = data();
        let opq = opq_train(&x, 4, 4, 0, 9).unwrap();
        let pq = pq_train(&x, 4, 4, 25, 9).unwrap();
        assert_eq!(opq.codebook.centroids(), pq.codebook.centroids());
        assert_eq!(opq.encode(&x).unwrap(), pq.encode(&x).unwrap());
    }

    #[test]
    fn objective_non_increasing_and_rotation_orthogonal() {
        let x = data();
        let cfg = OpqConfig {
            outer_iters: 8,
            ..OpqConfig::default()
        };
        let t = opq_train_with(&x, 4, 4, &cfg, 3).unwrap();
        for w in t.objective_history.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-5) + 1e-9,
                "{:?}",
                t.objective_history
            );
        }
        let r = t.model.codebook.rotation().unwrap();
        assert!(linalg::column_orthonormality_error(r, 8, 8) <= ORTHO_TOL);
        let pq = pq_train(&x, 4, 4, 25, 3).unwrap();
        assert!(t.model.mse(&x).unwrap() <= pq.mse(&x).unwrap() + 1e-6);
    }
}
