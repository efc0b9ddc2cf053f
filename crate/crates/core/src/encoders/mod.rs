//! Fixed encoders: k-means, PQ, OPQ and ITQ binary codes.

pub mod assign;
pub mod itq;
pub mod kmeans;
pub mod opq;
pub mod pq;

pub use itq::{
    binary_encode, itq_train, itq_train_with_history, ItqModel, ItqTraining, DEFAULT_ITQ_ITERS,
};
pub use kmeans::{kmeans_train, KMeansModel, DEFAULT_KMEANS_ITERS};
pub use opq::{opq_train, opq_train_with, OpqConfig, OpqTraining, DEFAULT_OPQ_OUTER_ITERS};
pub use pq::{pq_train, PqModel};
