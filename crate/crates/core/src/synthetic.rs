//! Seeded synthetic data: a Gaussian mixture whose components are low-rank
//! Gaussians, so coordinates in different subspaces are strongly dependent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub dim: usize,
    pub components: usize,
    /// Rank of each component's covariance (before isotropic noise).
    pub latent_dim: usize,
    /// Standard deviation of the component means around the origin.
    pub spread: f32,
    /// Isotropic noise standard deviation.
    pub noise: f32,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            dim: 32,
            components: 64,
            latent_dim: 4,
            spread: 1.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianMixture {
    spec: MixtureSpec,
    means: Vec<f32>,
    /// Per component, `dim × latent_dim`.
    loadings: Vec<f32>,
}

impl GaussianMixture {
    pub fn new(spec: MixtureSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (d, c, l) = (spec.dim, spec.components, spec.latent_dim);
        let means = (0..c * d)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                spec.spread * z
            })
            .collect();
        let scale = 1.0 / (l.max(1) as f32).sqrt();
        let loadings = (0..c * d * l)
            .map(|_| {
                let z: f32 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Self {
            spec,
            means,
            loadings,
        }
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    /// Draws `n` vectors; different `stream` values give independent splits
    /// of the same distribution.
    pub fn sample(&self, n: usize, stream: u64) -> DenseMatrix {
        let (d, c, l) = (self.spec.dim, self.spec.components, self.spec.latent_dim);
        let mut rng =
            ChaCha8Rng::seed_from_u64(self.spec.seed ^ stream.wrapping_mul(0xa076_1d64_78bd_642f));
        let mut data = Vec::with_capacity(n * d);
        let mut z = vec![0.0f32; l];
        for _ in 0..n {
            let comp = rng.random_range(0..c);
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let mean = &self.means[comp * d..(comp + 1) * d];
            let load = &self.loadings[comp * d * l..(comp + 1) * d * l];
            for j in 0..d {
                let mut v = mean[j];
                for (t, zt) in z.iter().enumerate() {
                    v += load[j * l + t] * zt;
                }
                let e: f32 = StandardNormal.sample(&mut rng);
                data.push(v + self.spec.noise * e);
            }
        }
        DenseMatrix::from_vec_unchecked(n, d, data)
    }
}

/// i.i.d. standard normal matrix.
pub fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    DenseMatrix::from_vec_unchecked(n, d, data)
}
