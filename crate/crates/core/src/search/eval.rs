use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;

use super::{Entry, SearchResult, TopK};
use crate::error::{Error, Result};
use crate::matrix::{squared_l2, DenseMatrix};

const QUERY_CHUNK: usize = 64;
const BASE_BLOCK: usize = 16384;

/// Exact `k` nearest neighbors of every query under squared Euclidean
/// distance, ties to the lowest id.
///
/// Candidates are screened with an `f32` GEMM and every candidate within a
/// rounding margin of the running `k`-th best is re-scored exactly in `f64`.
pub fn exact_knn(base: &DenseMatrix, queries: &DenseMatrix, k: usize) -> Result<Vec<SearchResult>> {
    if base.dim() != queries.dim() {
        return Err(Error::shape("base and queries differ in dimension"));
    }
    if k == 0 || base.is_empty() {
        return Err(Error::param(
            "exact search needs k > 0 and a non-empty base",
        ));
    }
    let d = base.dim();
    let norms: Vec<f32> = base
        .iter_rows()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    let max_norm = norms.iter().cloned().fold(0.0f32, f32::max) as f64;
    let chunks: Vec<Vec<SearchResult>> = (0..queries.rows().div_ceil(QUERY_CHUNK))
        .into_par_iter()
        .map(|c| {
            let qs = c * QUERY_CHUNK;
            let qe = (qs + QUERY_CHUNK).min(queries.rows());
            let nq = qe - qs;
            let margins: Vec<f64> = (qs..qe)
                .map(|q| {
                    let n: f64 = queries.row(q).iter().map(|&v| v as f64 * v as f64).sum();
                    1e-4 * (n + max_norm) + 1e-30
                })
                .collect();
            let mut approx_top: Vec<TopK> = (0..nq).map(|_| TopK::new(k)).collect();
            let mut cands: Vec<Vec<(f32, u32)>> = vec![Vec::new(); nq];
            let mut dots = vec![0.0f32; nq * BASE_BLOCK];
            for bs in (0..base.rows()).step_by(BASE_BLOCK) {
                let be = (bs + BASE_BLOCK).min(base.rows());
                let nb = be - bs;
                // SAFETY: both operands are dense row-major and sized by the loop bounds.
                unsafe {
                    matrixmultiply::sgemm(
                        nq,
                        d,
                        nb,
                        1.0,
                        queries.as_slice()[qs * d..].as_ptr(),
                        d as isize,
                        1,
                        base.as_slice()[bs * d..].as_ptr(),
                        1,
                        d as isize,
                        0.0,
                        dots.as_mut_ptr(),
                        nb as isize,
                        1,
                    );
                }
                for q in 0..nq {
                    let row = &dots[q * nb..(q + 1) * nb];
                    let top = &mut approx_top[q];
                    for (j, &dot) in row.iter().enumerate() {
                        let a = norms[bs + j] - 2.0 * dot;
                        top.push(a as f64, (bs + j) as u32);
                    }
                    let limit = top.worst().unwrap_or(f64::INFINITY) + margins[q];
                    let list = &mut cands[q];
                    for (j, &dot) in row.iter().enumerate() {
                        let a = norms[bs + j] - 2.0 * dot;
                        if (a as f64) <= limit {
                            list.push((a, (bs + j) as u32));
                        }
                    }
                    list.retain(|&(a, _)| (a as f64) <= limit);
                }
            }
            (0..nq)
                .map(|q| {
                    let x = queries.row(qs + q);
                    let mut exact = TopK::new(k);
                    for &(_, id) in &cands[q] {
                        exact.push(squared_l2(x, base.row(id as usize)), id);
                    }
                    exact.into_result()
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Id of the exact nearest database vector of every query.
pub fn ground_truth(base: &DenseMatrix, queries: &DenseMatrix) -> Result<Vec<u32>> {
    Ok(exact_knn(base, queries, 1)?
        .into_iter()
        .map(|r| r.ids[0])
        .collect())
}

/// Fraction of queries whose true nearest neighbor is among the first `r`
/// results.
pub fn recall_at(results: &[SearchResult], gt: &[u32], r: usize) -> Result<f64> {
    if results.len() != gt.len() {
        return Err(Error::shape(format!(
            "{} result lists for {} ground-truth entries",
            results.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::param("no queries"));
    }
    let hits = results
        .iter()
        .zip(gt)
        .filter(|(res, &g)| res.ids.iter().take(r).any(|&id| id == g))
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Median wall-clock milliseconds of `reps` runs of `f`; returns the result
/// of the last run.
pub fn median_ms<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let reps = reps.max(1);
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let t = Instant::now();
        last = Some(f()?);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.total_cmp(b));
    let mid = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        0.5 * (times[reps / 2 - 1] + times[reps / 2])
    };
    Ok((mid, last.unwrap()))
}

pub const RESULTS_HEADER: &str = "query_id,rank,db_id,distance";
pub const SUMMARY_HEADER: &str = "config,R,recall,recall_std,scan_ms,rerank_ms";

pub fn write_results_csv<W: Write>(mut w: W, results: &[SearchResult]) -> std::io::Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for (q, res) in results.iter().enumerate() {
        for (rank, (id, dist)) in res.ids.iter().zip(&res.dists).enumerate() {
            writeln!(w, "{q},{rank},{id},{dist:.9e}")?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    pub r: usize,
    pub recall: f64,
    pub recall_std: f64,
    pub scan_ms: f64,
    pub rerank_ms: f64,
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.4},{:.4}",
            row.config, row.r, row.recall, row.recall_std, row.scan_ms, row.rerank_ms
        )?;
    }
    Ok(())
}

impl TopK {
    fn worst(&self) -> Option<f64> {
        if self.heap.len() < self.k {
            None
        } else {
            self.heap.peek().map(|e: &Entry| e.0)
        }
    }
}
