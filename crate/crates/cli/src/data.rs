//! Train/validation/base/query splits from vector files or the synthetic
//! mixture.

use std::path::Path;

use log::info;
use qdec_core::search::ground_truth;
use qdec_core::synthetic::{GaussianMixture, MixtureSpec};
use qdec_core::vecs::{read_ivecs, read_vectors, VecsKind};
use qdec_core::DenseMatrix;

use crate::config::ExperimentConfig;
use crate::error::{config_err, Result};

// stream ids of the synthetic splits
const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const BASE_STREAM: u64 = 3;
const QUERY_STREAM: u64 = 4;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: DenseMatrix,
    pub val: DenseMatrix,
    pub base: DenseMatrix,
    pub query: DenseMatrix,
    /// Exact nearest base id of every query.
    pub gt: Vec<u32>,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

pub fn mixture(cfg: &ExperimentConfig) -> GaussianMixture {
    GaussianMixture::new(MixtureSpec {
        dim: cfg.synth_dim,
        components: cfg.synth_components,
        latent_dim: cfg.synth_latent_dim,
        spread: cfg.synth_spread,
        noise: cfg.synth_noise,
        seed: cfg.data_seed,
    })
}

/// Reads `.fvecs` or `.bvecs`, chosen by extension.
pub fn read_matrix(path: &Path, limit: Option<usize>) -> Result<DenseMatrix> {
    let kind = VecsKind::from_path(path)
        .filter(|k| *k != VecsKind::I32)
        .ok_or_else(|| config_err(format!("{}: expected .fvecs or .bvecs", path.display())))?;
    Ok(read_vectors(path, kind, limit)?)
}

/// First column of an `.ivecs` ground-truth table.
pub fn read_gt(path: &Path, queries: usize, base_rows: usize) -> Result<Vec<u32>> {
    let (rows, dim, values) = read_ivecs(path, Some(queries))?;
    if rows < queries {
        return Err(config_err(format!(
            "{}: {rows} ground-truth rows for {queries} queries",
            path.display()
        )));
    }
    let gt: Vec<u32> = values.chunks_exact(dim).map(|r| r[0] as u32).collect();
    if let Some(bad) = gt.iter().find(|&&g| g as usize >= base_rows) {
        return Err(config_err(format!(
            "{}: ground-truth id {bad} outside a base of {base_rows} vectors",
            path.display()
        )));
    }
    Ok(gt)
}

/// Training and validation splits only.
pub fn load_train_val(cfg: &ExperimentConfig) -> Result<(DenseMatrix, DenseMatrix)> {
    match &cfg.train_path {
        Some(t) => {
            // validation rows come from the end of the training file
            let pool = read_matrix(t, Some(cfg.n_train + cfg.n_val))?;
            if pool.rows() <= cfg.n_val {
                return Err(config_err(format!(
                    "{}: {} rows cannot hold {} validation vectors",
                    t.display(),
                    pool.rows(),
                    cfg.n_val
                )));
            }
            let split = pool.rows() - cfg.n_val;
            Ok((
                pool.slice_rows(0..split),
                pool.slice_rows(split..pool.rows()),
            ))
        }
        None => {
            let g = mixture(cfg);
            Ok((
                g.sample(cfg.n_train, TRAIN_STREAM),
                g.sample(cfg.n_val, VAL_STREAM),
            ))
        }
    }
}

/// Base and query splits.
pub fn load_base_query(cfg: &ExperimentConfig) -> Result<(DenseMatrix, DenseMatrix)> {
    match (&cfg.base_path, &cfg.query_path) {
        (Some(b), Some(q)) => Ok((
            read_matrix(b, Some(cfg.n_base))?,
            read_matrix(q, Some(cfg.n_query))?,
        )),
        _ => {
            let g = mixture(cfg);
            Ok((
                g.sample(cfg.n_base, BASE_STREAM),
                g.sample(cfg.n_query, QUERY_STREAM),
            ))
        }
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let (train, val) = load_train_val(cfg)?;
    let (base, query) = load_base_query(cfg)?;
    let d = base.dim();
    if train.dim() != d || query.dim() != d {
        return Err(config_err(format!(
            "dimensions differ: train {}, base {d}, query {}",
            train.dim(),
            query.dim()
        )));
    }
    let gt = match &cfg.gt_path {
        Some(p) => read_gt(p, query.rows(), base.rows())?,
        None => {
            info!("computing ground truth for {} queries", query.rows());
            ground_truth(&base, &query)?
        }
    };
    info!(
        "data: {} train, {} val, {} base, {} queries, d = {d}",
        train.rows(),
        val.rows(),
        base.rows(),
        query.rows()
    );
    Ok(Dataset {
        train,
        val,
        base,
        query,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use qdec_core::vecs::{write_fvecs, write_ivecs};

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "n_train=300",
            "n_val=50",
            "n_base=200",
            "n_query=20",
            "synth_dim=8",
        ])
        .unwrap();
        cfg
    }

    #[test]
    fn synthetic_splits_are_disjoint_draws() {
        let ds = load_dataset(&small()).unwrap();
        assert_eq!(
            (
                ds.train.rows(),
                ds.val.rows(),
                ds.base.rows(),
                ds.query.rows()
            ),
            (300, 50, 200, 20)
        );
        assert_ne!(ds.train.row(0), ds.base.row(0));
        assert_eq!(ds.gt, ground_truth(&ds.base, &ds.query).unwrap());
        let again = load_dataset(&small()).unwrap();
        assert_eq!(ds.query, again.query);
    }

    #[test]
    fn file_splits_and_gt_file() {
        let ds = load_dataset(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        write_fvecs(p("t.fvecs"), &ds.train).unwrap();
        write_fvecs(p("b.fvecs"), &ds.base).unwrap();
        write_fvecs(p("q.fvecs"), &ds.query).unwrap();
        // a deliberately wrong ground truth shows the file is used as given
        write_ivecs(p("gt.ivecs"), 1, &[7i32; 20]).unwrap();
        let mut cfg = small();
        for (k, f) in [
            ("train", "t.fvecs"),
            ("base", "b.fvecs"),
            ("query", "q.fvecs"),
            ("groundtruth", "gt.ivecs"),
        ] {
            cfg.set(k, p(f).to_str().unwrap()).unwrap();
        }
        cfg.set("n_train", "200").unwrap();
        let got = load_dataset(&cfg).unwrap();
        assert_eq!(got.train, ds.train.slice_rows(0..200));
        assert_eq!(got.val, ds.train.slice_rows(200..250));
        assert_eq!(got.gt, vec![7; 20]);

        write_ivecs(p("gt.ivecs"), 1, &[500i32; 20]).unwrap();
        assert!(load_dataset(&cfg).is_err());
    }
}
