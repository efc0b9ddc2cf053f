//! Compressed-domain search: LUT-based ADC over PQ codes, Hamming SDC over
//! binary codes, explicit ADC against reconstructions, shortlist re-ranking,
//! and recall measurement.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::codes::CodeArray;
use crate::decoders::Decoder;
use crate::encoders::PqModel;
use crate::error::{Error, Result};
use crate::matrix::{squared_l2, DenseMatrix};

mod eval;

pub use eval::{
    exact_knn, ground_truth, median_ms, recall_at, write_results_csv, write_summary_csv,
    SummaryRow, RESULTS_HEADER, SUMMARY_HEADER,
};

/// Ranked ids and estimated squared distances for one query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub ids: Vec<u32>,
    pub dists: Vec<f64>,
}

impl SearchResult {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry(f64, u32);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Keeps the `k` smallest `(distance, id)` pairs.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Entry>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, dist: f64, id: u32) {
        if self.heap.len() < self.k {
            self.heap.push(Entry(dist, id));
        } else if let Some(top) = self.heap.peek() {
            let e = Entry(dist, id);
            if e < *top {
                self.heap.pop();
                self.heap.push(e);
            }
        }
    }

    pub fn into_result(self) -> SearchResult {
        let sorted = self.heap.into_sorted_vec();
        SearchResult {
            ids: sorted.iter().map(|e| e.1).collect(),
            dists: sorted.iter().map(|e| e.0).collect(),
        }
    }
}

fn check_query(query: &[f32], dim: usize) -> Result<()> {
    if query.len() != dim {
        return Err(Error::shape(format!(
            "query of dimension {} for data of dimension {dim}",
            query.len()
        )));
    }
    Ok(())
}

/// Per-subspace table of `‖query_i − c_{i,k}‖²` (`m × K′`), after the
/// model's rotation.
pub fn adc_table(query: &[f32], model: &PqModel) -> Result<Vec<f32>> {
    check_query(query, model.dim())?;
    let cb = &model.codebook;
    let q = DenseMatrix::new(1, query.len(), query.to_vec())?;
    let q = cb.rotate(&q);
    let (m, ksub, dsub) = (cb.m(), cb.ksub(), cb.dsub());
    let mut table = Vec::with_capacity(m * ksub);
    for i in 0..m {
        let qs = &q.row(0)[i * dsub..(i + 1) * dsub];
        for k in 0..ksub {
            table.push(squared_l2(qs, cb.centroid(i, k)) as f32);
        }
    }
    Ok(table)
}

/// Scans codes with a precomputed `m × K′` distance table.
pub fn adc_scan_table(table: &[f32], codes: &CodeArray, r: usize) -> SearchResult {
    let (m, ksub) = (codes.m(), codes.ksub());
    assert_eq!(table.len(), m * ksub);
    let mut top = TopK::new(r);
    match codes.bits() {
        4 => {
            for row in 0..codes.len() {
                let mut s = 0.0f64;
                for (j, &b) in codes.code(row).iter().enumerate() {
                    s += table[2 * j * 16 + (b & 0x0f) as usize] as f64;
                    if 2 * j + 1 < m {
                        s += table[(2 * j + 1) * 16 + (b >> 4) as usize] as f64;
                    }
                }
                top.push(s, row as u32);
            }
        }
        8 => {
            for row in 0..codes.len() {
                let mut s = 0.0f64;
                for (j, &b) in codes.code(row).iter().enumerate() {
                    s += table[j * 256 + b as usize] as f64;
                }
                top.push(s, row as u32);
            }
        }
        _ => {
            let mut idx = vec![0u32; m];
            for row in 0..codes.len() {
                codes.subindices_into(row, &mut idx);
                let s: f64 = idx
                    .iter()
                    .enumerate()
                    .map(|(i, &k)| table[i * ksub + k as usize] as f64)
                    .sum();
                top.push(s, row as u32);
            }
        }
    }
    top.into_result()
}

/// Asymmetric distances `‖x − q(y)‖²` for PQ or OPQ codes via lookup tables.
pub fn adc_scan_pq(
    query: &[f32],
    model: &PqModel,
    codes: &CodeArray,
    r: usize,
) -> Result<SearchResult> {
    if codes.m() != model.m() || codes.bits() != model.bits() {
        return Err(Error::shape("codes do not match the quantizer"));
    }
    let table = adc_table(query, model)?;
    Ok(adc_scan_table(&table, codes, r))
}

/// Number of differing bits.
#[inline]
pub fn hamming(a: &[u8], b: &[u8]) -> u32 {
    let mut dist = 0;
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        dist += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        dist += (x ^ y).count_ones();
    }
    dist
}

/// Symmetric distance between binary codes: Hamming distance.
pub fn sdc_scan_binary(query_code: &[u8], codes: &CodeArray, r: usize) -> Result<SearchResult> {
    if codes.bits() != 1 {
        return Err(Error::param("Hamming search needs 1-bit codes"));
    }
    if query_code.len() != codes.code_bytes() {
        return Err(Error::shape(format!(
            "query code of {} bytes for codes of {} bytes",
            query_code.len(),
            codes.code_bytes()
        )));
    }
    let mut top = TopK::new(r);
    for row in 0..codes.len() {
        top.push(hamming(query_code, codes.code(row)) as f64, row as u32);
    }
    Ok(top.into_result())
}

/// Exact squared distances to explicit reconstructions.
pub fn adc_scan_decoded(query: &[f32], recons: &DenseMatrix, r: usize) -> Result<SearchResult> {
    check_query(query, recons.dim())?;
    let mut top = TopK::new(r);
    for (row, y) in recons.iter_rows().enumerate() {
        top.push(squared_l2(query, y), row as u32);
    }
    Ok(top.into_result())
}

/// Vectors a re-ranking stage can fetch by database id.
pub trait Reconstructions: Sync {
    fn dim(&self) -> usize;

    fn gather(&self, ids: &[u32]) -> Result<DenseMatrix>;
}

impl Reconstructions for DenseMatrix {
    fn dim(&self) -> usize {
        DenseMatrix::dim(self)
    }

    fn gather(&self, ids: &[u32]) -> Result<DenseMatrix> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.rows()) {
            return Err(Error::shape(format!("id {bad} out of range")));
        }
        Ok(self.select_rows(&ids.iter().map(|&i| i as usize).collect::<Vec<_>>()))
    }
}

/// Reconstructions computed on demand by a decoder.
pub struct DecodedCodes<'a> {
    pub decoder: &'a dyn Decoder,
    pub codes: &'a CodeArray,
}

impl Reconstructions for DecodedCodes<'_> {
    fn dim(&self) -> usize {
        self.decoder.dim()
    }

    fn gather(&self, ids: &[u32]) -> Result<DenseMatrix> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.codes.len()) {
            return Err(Error::shape(format!("id {bad} out of range")));
        }
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.decoder.decode_ids(self.codes, &ids)
    }
}

/// Re-orders the first `l` results by exact distance to the strong
/// reconstructions. Later results keep their first-stage order and
/// distances.
pub fn rerank(
    query: &[f32],
    first: &SearchResult,
    strong: &dyn Reconstructions,
    l: usize,
) -> Result<SearchResult> {
    if l == 0 {
        return Err(Error::param("shortlist size must be positive"));
    }
    check_query(query, strong.dim())?;
    let l = l.min(first.len());
    let recons = strong.gather(&first.ids[..l])?;
    let mut head: Vec<Entry> = first.ids[..l]
        .iter()
        .enumerate()
        .map(|(j, &id)| Entry(squared_l2(query, recons.row(j)), id))
        .collect();
    head.sort();
    let mut out = SearchResult {
        ids: head.iter().map(|e| e.1).collect(),
        dists: head.iter().map(|e| e.0).collect(),
    };
    out.ids.extend_from_slice(&first.ids[l..]);
    out.dists.extend_from_slice(&first.dists[l..]);
    Ok(out)
}

/// Runs `f` on every query row, in parallel or on the calling thread.
pub fn search_all<F>(queries: &DenseMatrix, parallel: bool, f: F) -> Result<Vec<SearchResult>>
where
    F: Fn(usize, &[f32]) -> Result<SearchResult> + Sync,
{
    if parallel {
        (0..queries.rows())
            .into_par_iter()
            .map(|q| f(q, queries.row(q)))
            .collect()
    } else {
        (0..queries.rows()).map(|q| f(q, queries.row(q))).collect()
    }
}
