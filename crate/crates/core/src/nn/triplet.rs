use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_l2, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: u32,
    pub positive: u32,
    pub negative: u32,
}

/// The `k` exact nearest neighbors of every row among the other rows,
/// ordered by `(distance, id)`. Returns ids (`n × k`) and squared distances.
pub fn nearest_neighbors(x: &DenseMatrix, k: usize) -> Result<(Vec<u32>, Vec<f64>)> {
    let n = x.rows();
    if k == 0 || n <= k {
        return Err(Error::param(format!(
            "{k} neighbors need more than {k} rows, got {n}"
        )));
    }
    let rows: Vec<(Vec<u32>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|a| {
            let q = x.row(a);
            let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
            for (b, r) in x.iter_rows().enumerate() {
                if b == a {
                    continue;
                }
                let d = squared_l2(q, r);
                if best.len() == k && d >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(bd, bid)| (bd, bid) < (d, b as u32));
                best.insert(pos, (d, b as u32));
                best.truncate(k);
            }
            best.into_iter().map(|(d, id)| (id, d)).unzip()
        })
        .collect();
    let mut ids = Vec::with_capacity(n * k);
    let mut dists = Vec::with_capacity(n * k);
    for (i, d) in rows {
        ids.extend(i);
        dists.extend(d);
    }
    Ok((ids, dists))
}

/// One triplet per row: the positive is drawn uniformly from the `kpos`
/// nearest neighbors, the negative is neighbor number `kpos + 1`.
pub fn mine_triplets(x: &DenseMatrix, kpos: usize, seed: u64) -> Result<Vec<Triplet>> {
    let (ids, _) = nearest_neighbors(x, kpos + 1)?;
    Ok(triplets_from_neighbors(&ids, kpos, seed))
}

pub(crate) fn triplets_from_neighbors(ids: &[u32], kpos: usize, seed: u64) -> Vec<Triplet> {
    let k = kpos + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.chunks_exact(k)
        .enumerate()
        .map(|(a, nb)| Triplet {
            anchor: a as u32,
            positive: nb[rng.random_range(0..kpos)],
            negative: nb[kpos],
        })
        .collect()
}

/// `0.1 ×` the mean squared distance to the `kpos`-th neighbor.
pub fn default_margin(dists: &[f64], kpos: usize) -> f64 {
    let k = kpos + 1;
    let rows = dists.len() / k;
    let sum: f64 = dists.chunks_exact(k).map(|d| d[kpos - 1]).sum();
    0.1 * sum / rows.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gaussian;

    #[test]
    fn collinear_points() {
        let x = DenseMatrix::from_rows(&[[0.0f32], [1.0], [3.0]]).unwrap();
        let t = mine_triplets(&x, 1, 0).unwrap();
        assert_eq!(
            t[0],
            Triplet {
                anchor: 0,
                positive: 1,
                negative: 2
            }
        );
        assert_eq!(
            t[1],
            Triplet {
                anchor: 1,
                positive: 0,
                negative: 2
            }
        );
        assert_eq!(
            t[2],
            Triplet {
                anchor: 2,
                positive: 1,
                negative: 0
            }
        );
        assert!(mine_triplets(&x, 2, 0).is_err());
    }

    #[test]
    fn ranks_match_exhaustive_sort() {
        let x = gaussian(300, 5, 1);
        let kpos = 4;
        let (ids, dists) = nearest_neighbors(&x, kpos + 1).unwrap();
        for a in 0..300 {
            let mut all: Vec<(f64, u32)> = (0..300)
                .filter(|&b| b != a)
                .map(|b| (squared_l2(x.row(a), x.row(b)), b as u32))
                .collect();
            all.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let want: Vec<u32> = all[..kpos + 1].iter().map(|p| p.1).collect();
            assert_eq!(&ids[a * 5..a * 5 + 5], &want[..]);
        }
        let t = triplets_from_neighbors(&ids, kpos, 3);
        for tr in &t {
            let a = tr.anchor as usize;
            let dp = squared_l2(x.row(a), x.row(tr.positive as usize));
            let dn = squared_l2(x.row(a), x.row(tr.negative as usize));
            assert!(dp <= dn);
            assert!(ids[a * 5..a * 5 + 4].contains(&tr.positive));
        }
        assert!(default_margin(&dists, kpos) > 0.0);
    }
}
