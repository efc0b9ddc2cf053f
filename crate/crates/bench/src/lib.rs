//! Shared fixtures for the benchmarks.

use qdec_core::encoders::{itq_train, pq_train};
use qdec_core::synthetic::{GaussianMixture, MixtureSpec};
use qdec_core::{CodeArray, DenseMatrix, ItqModel, PqModel};

pub const DIM: usize = 32;

pub fn data(n: usize, stream: u64) -> DenseMatrix {
    GaussianMixture::new(MixtureSpec {
        dim: DIM,
        components: 2,
        latent_dim: 8,
        ..MixtureSpec::default()
    })
    .sample(n, stream)
}

/// A PQ model trained on 20k vectors and the codes of `n` base vectors.
pub fn pq_fixture(m: usize, bits: u32, n: usize) -> (PqModel, CodeArray) {
    let pq = pq_train(&data(20_000, 1), m, bits, 10, 0).expect("pq");
    let codes = pq.encode(&data(n, 2)).expect("encode");
    (pq, codes)
}

pub fn itq_fixture(n: usize) -> (ItqModel, CodeArray) {
    let itq = itq_train(&data(20_000, 1), DIM, 20, 0).expect("itq");
    let codes = itq.encode(&data(n, 2)).expect("encode");
    (itq, codes)
}
