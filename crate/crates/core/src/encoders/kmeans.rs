//! Lloyd k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::assign::nearest_centroids;
use crate::error::{Error, Result};
use crate::matrix::{squared_l2, DenseMatrix};

pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel {
    pub centroids: DenseMatrix,
    /// Number of centroid update steps performed.
    pub iterations_run: usize,
    /// Mean squared distance of the training points to their nearest centroid.
    pub final_mse: f64,
    /// Training MSE after each assignment step; the last entry is `final_mse`.
    pub mse_history: Vec<f64>,
}

impl KMeansModel {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn assign(&self, x: &DenseMatrix) -> Result<Vec<u32>> {
        if x.dim() != self.centroids.dim() {
            return Err(Error::shape(format!(
                "vectors of dimension {} for centroids of dimension {}",
                x.dim(),
                self.centroids.dim()
            )));
        }
        Ok(nearest_centroids(x, &self.centroids).0)
    }
}

pub fn kmeans_train(x: &DenseMatrix, k: usize, iters: usize, seed: u64) -> Result<KMeansModel> {
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    if x.rows() < k {
        return Err(Error::param(format!(
            "k-means with k = {k} needs at least k training points, got {}",
            x.rows()
        )));
    }
    let init = kmeans_plus_plus(x, k, seed);
    Ok(lloyd(x, init, iters))
}

/// k-means++ seeding: each new centroid is a training point drawn with
/// probability proportional to its squared distance to the chosen ones.
pub fn kmeans_plus_plus(x: &DenseMatrix, k: usize, seed: u64) -> DenseMatrix {
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = x.iter_rows().map(|r| squared_l2(r, x.row(first))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the running sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // every remaining point duplicates a chosen centroid
            taken.iter().position(|&t| !t).unwrap()
        };
        taken[next] = true;
        chosen.push(next);
        let c = x.row(next);
        for (i, r) in x.iter_rows().enumerate() {
            let d = squared_l2(r, c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    x.select_rows(&chosen)
}

/// Lloyd iterations from the given centroids. Stops early when the
/// assignment no longer changes, so at convergence both optimality
/// conditions hold: nearest-centroid assignment and centroids at cell means.
pub fn lloyd(x: &DenseMatrix, mut centroids: DenseMatrix, iters: usize) -> KMeansModel {
    let k = centroids.rows();
    let mut history = Vec::with_capacity(iters + 1);
    let mut prev: Option<Vec<u32>> = None;
    let mut updates = 0;
    for _ in 0..iters {
        let (mut assign, dist) = nearest_centroids(x, &centroids);
        history.push(mean(&dist));
        if prev.as_ref() == Some(&assign) {
            break;
        }
        reseed_empty(&mut assign, &dist, k);
        centroids = cell_means(x, &assign, k, &centroids);
        updates += 1;
        prev = Some(assign);
    }
    let (_, dist) = nearest_centroids(x, &centroids);
    let final_mse = mean(&dist);
    if history.last() != Some(&final_mse) {
        history.push(final_mse);
    }
    KMeansModel {
        centroids,
        iterations_run: updates,
        final_mse,
        mse_history: history,
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Moves, for every empty cell, the point with the largest residual in the
/// currently biggest cell into it.
fn reseed_empty(assign: &mut [u32], dist: &[f64], k: usize) {
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a as usize] += 1;
    }
    if !counts.contains(&0) {
        return;
    }
    let mut moved = vec![false; assign.len()];
    for empty in 0..k {
        if counts[empty] != 0 {
            continue;
        }
        let biggest = (0..k)
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        if counts[biggest] < 2 {
            break;
        }
        let mut pick: Option<(usize, f64)> = None;
        for (i, &a) in assign.iter().enumerate() {
            if a as usize != biggest || moved[i] {
                continue;
            }
            let r = dist[i];
            if pick.is_none_or(|(_, best)| r > best) {
                pick = Some((i, r));
            }
        }
        let (i, _) = pick.unwrap();
        assign[i] = empty as u32;
        moved[i] = true;
        counts[biggest] -= 1;
        counts[empty] += 1;
    }
}

fn cell_means(x: &DenseMatrix, assign: &[u32], k: usize, previous: &DenseMatrix) -> DenseMatrix {
    let d = x.dim();
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (r, &a) in x.iter_rows().zip(assign) {
        let a = a as usize;
        counts[a] += 1;
        for (s, &v) in sums[a * d..(a + 1) * d].iter_mut().zip(r) {
            *s += v as f64;
        }
    }
    let mut out = previous.clone();
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let inv = 1.0 / counts[j] as f64;
        for (o, s) in out.row_mut(j).iter_mut().zip(&sums[j * d..(j + 1) * d]) {
            *o = (s * inv) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        DenseMatrix::new(n, d, data).unwrap()
    }

    #[test]
    fn k_distinct_points_fit_exactly() {
        let x =
            DenseMatrix::from_rows(&[[0.0f32, 1.0], [3.0, -2.0], [7.0, 7.0], [-4.0, 0.5]]).unwrap();
        let model = kmeans_train(&x, 4, 10, 3).unwrap();
        assert_eq!(model.final_mse, 0.0);
        let mut got: Vec<Vec<f32>> = model.centroids.iter_rows().map(|r| r.to_vec()).collect();
        let mut want: Vec<Vec<f32>> = x.iter_rows().map(|r| r.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn single_cluster_is_column_mean() {
        let x = gaussian(500, 5, 1);
        let model = kmeans_train(&x, 1, 5, 9).unwrap();
        let mean = x.column_mean();
        for (c, m) in model.centroids.row(0).iter().zip(&mean) {
            assert!((*c as f64 - m).abs() < 1e-6);
        }
    }

    #[test]
    fn toy_two_clusters_match_best_partition() {
        let pts = [[0.0f32, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let x = DenseMatrix::from_rows(&pts).unwrap();
        // oracle: enumerate every 2-partition, keep the lowest within-cell SSE
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let mut sse = 0.0;
            for side in [0, 1] {
                let cell: Vec<&[f32; 2]> = (0..4)
                    .filter(|i| (mask >> i) & 1 == side)
                    .map(|i| &pts[i])
                    .collect();
                let mx = cell.iter().map(|p| p[0] as f64).sum::<f64>() / cell.len() as f64;
                let my = cell.iter().map(|p| p[1] as f64).sum::<f64>() / cell.len() as f64;
                sse += cell
                    .iter()
                    .map(|p| (p[0] as f64 - mx).powi(2) + (p[1] as f64 - my).powi(2))
                    .sum::<f64>();
            }
            if sse < best.0 {
                best = (sse, mask);
            }
        }
        assert_eq!(best.0, 1.0);
        let model = kmeans_train(&x, 2, 25, 0).unwrap();
        let mut c: Vec<Vec<f32>> = model.centroids.iter_rows().map(|r| r.to_vec()).collect();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        assert!((model.final_mse * 4.0 - best.0).abs() < 1e-12);
    }

    #[test]
    fn mse_non_increasing_and_lloyd_conditions() {
        let x = gaussian(4000, 6, 2);
        let model = kmeans_train(&x, 32, 100, 11).unwrap();
        for w in model.mse_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6), "{:?}", model.mse_history);
        }
        // nearest-centroid assignment, checked by brute force
        let assign = model.assign(&x).unwrap();
        let mut counts = vec![0usize; 32];
        for (i, r) in x.iter_rows().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (j, c) in model.centroids.iter_rows().enumerate() {
                let d = squared_l2(r, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            assert_eq!(assign[i] as usize, best.0);
            counts[best.0] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "empty cluster");
        if model.iterations_run < 100 {
            // converged: centroids are the cell means
            let d = x.dim();
            let mut sums = vec![0.0f64; 32 * d];
            for (r, &a) in x.iter_rows().zip(&assign) {
                for (s, &v) in sums[a as usize * d..].iter_mut().zip(r) {
                    *s += v as f64;
                }
            }
            for j in 0..32 {
                for t in 0..d {
                    let m = sums[j * d + t] / counts[j] as f64;
                    assert!((model.centroids.row(j)[t] as f64 - m).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn duplicates_do_not_leave_empty_clusters() {
        let mut rows = vec![[1.0f32, 1.0]; 50];
        rows.extend([[2.0, 2.0], [3.0, 3.0], [4.0, 4.0]]);
        let x = DenseMatrix::from_rows(&rows).unwrap();
        let model = kmeans_train(&x, 6, 20, 4).unwrap();
        assert_eq!(model.k(), 6);
        assert!(model.centroids.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_given_seed() {
        let x = gaussian(2000, 4, 8);
        let a = kmeans_train(&x, 16, 10, 42).unwrap();
        let b = kmeans_train(&x, 16, 10, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_k_above_rows() {
        let x = gaussian(3, 2, 0);
        assert!(kmeans_train(&x, 4, 1, 0).is_err());
    }
}
