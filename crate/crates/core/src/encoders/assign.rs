//! Exact nearest-centroid assignment.
//!
//! Candidates are screened with `‖c‖² − 2⟨x, c⟩` computed by an `f32` GEMM,
//! then every centroid whose screened distance is within a rounding margin of
//! the best is re-evaluated exactly with [`squared_l2`]. The result is the
//! exact nearest centroid, ties going to the lowest index.

use rayon::prelude::*;

use crate::matrix::{squared_l2, DenseMatrix};

const CHUNK: usize = 1024;

/// Nearest centroid and its exact squared distance for every row of `x`.
pub fn nearest_centroids(x: &DenseMatrix, centroids: &DenseMatrix) -> (Vec<u32>, Vec<f64>) {
    assert_eq!(x.dim(), centroids.dim());
    let k = centroids.rows();
    let d = x.dim();
    assert!(k > 0, "no centroids");
    let c_norms: Vec<f32> = centroids
        .iter_rows()
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    let c_norm_max = c_norms.iter().cloned().fold(0.0f32, f32::max) as f64;

    let chunks: Vec<(Vec<u32>, Vec<f64>)> = (0..x.rows().div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let start = chunk * CHUNK;
            let end = (start + CHUNK).min(x.rows());
            let rows = end - start;
            let mut dots = vec![0.0f32; rows * k];
            if d > 0 {
                unsafe {
                    matrixmultiply::sgemm(
                        rows,
                        d,
                        k,
                        1.0,
                        x.as_slice()[start * d..].as_ptr(),
                        d as isize,
                        1,
                        centroids.as_slice().as_ptr(),
                        1,
                        d as isize,
                        0.0,
                        dots.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
            let mut assign = Vec::with_capacity(rows);
            let mut dist = Vec::with_capacity(rows);
            for r in 0..rows {
                let xr = x.row(start + r);
                let x_norm: f64 = xr.iter().map(|&v| (v as f64) * (v as f64)).sum();
                let row_dots = &dots[r * k..(r + 1) * k];
                let mut best_approx = f32::INFINITY;
                for (dot, cn) in row_dots.iter().zip(&c_norms) {
                    let a = cn - 2.0 * dot;
                    if a < best_approx {
                        best_approx = a;
                    }
                }
                let margin = 1e-4 * (x_norm + c_norm_max) + 1e-30;
                let limit = best_approx as f64 + margin;
                let mut best = (u32::MAX, f64::INFINITY);
                for (j, (dot, cn)) in row_dots.iter().zip(&c_norms).enumerate() {
                    if ((cn - 2.0 * dot) as f64) <= limit {
                        let exact = squared_l2(xr, centroids.row(j));
                        if exact < best.1 {
                            best = (j as u32, exact);
                        }
                    }
                }
                assign.push(best.0);
                dist.push(best.1);
            }
            (assign, dist)
        })
        .collect();

    let mut assign = Vec::with_capacity(x.rows());
    let mut dist = Vec::with_capacity(x.rows());
    for (a, d) in chunks {
        assign.extend(a);
        dist.extend(d);
    }
    (assign, dist)
}
