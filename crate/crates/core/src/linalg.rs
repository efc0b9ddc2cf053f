//! Dense linear algebra helpers on top of `nalgebra`, all in `f64`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

const GEMM_CHUNK: usize = 4096;

/// `AᵀB` for two row-aligned matrices, accumulated in `f64`, optionally
/// centering both sides by the given means. Returns a `a.dim × b.dim`
/// row-major buffer.
pub fn cross_product(
    a: &DenseMatrix,
    a_mean: Option<&[f64]>,
    b: &DenseMatrix,
    b_mean: Option<&[f64]>,
) -> Vec<f64> {
    assert_eq!(a.rows(), b.rows());
    let (da, db) = (a.dim(), b.dim());
    let mut out = vec![0.0f64; da * db];
    let mut abuf = Vec::new();
    let mut bbuf = Vec::new();
    let mut start = 0;
    while start < a.rows() {
        let end = (start + GEMM_CHUNK).min(a.rows());
        let rows = end - start;
        fill_f64(&mut abuf, a, start, end, a_mean);
        fill_f64(&mut bbuf, b, start, end, b_mean);
        // out (da×db) += abufᵀ (da×rows) · bbuf (rows×db)
        unsafe {
            matrixmultiply::dgemm(
                da,
                rows,
                db,
                1.0,
                abuf.as_ptr(),
                1,
                da as isize,
                bbuf.as_ptr(),
                db as isize,
                1,
                1.0,
                out.as_mut_ptr(),
                db as isize,
                1,
            );
        }
        start = end;
    }
    out
}

fn fill_f64(buf: &mut Vec<f64>, m: &DenseMatrix, start: usize, end: usize, mean: Option<&[f64]>) {
    buf.clear();
    for i in start..end {
        let r = m.row(i);
        match mean {
            Some(mu) => buf.extend(r.iter().zip(mu).map(|(&v, &c)| v as f64 - c)),
            None => buf.extend(r.iter().map(|&v| v as f64)),
        }
    }
}

/// Row-major `C = A · B` with `A: rows × inner`, `B: inner × cols`.
pub fn gemm(a: &[f64], rows: usize, inner: usize, b: &[f64], cols: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * inner);
    assert_eq!(b.len(), inner * cols);
    let mut c = vec![0.0; rows * cols];
    unsafe {
        matrixmultiply::dgemm(
            rows,
            inner,
            cols,
            1.0,
            a.as_ptr(),
            inner as isize,
            1,
            b.as_ptr(),
            cols as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            cols as isize,
            1,
        );
    }
    c
}

/// Row-major `C = Aᵀ · B` with `A: rows × ca`, `B: rows × cb`.
pub fn gemm_tn(a: &[f64], rows: usize, ca: usize, b: &[f64], cb: usize) -> Vec<f64> {
    assert_eq!(a.len(), rows * ca);
    assert_eq!(b.len(), rows * cb);
    let mut c = vec![0.0; ca * cb];
    unsafe {
        matrixmultiply::dgemm(
            ca,
            rows,
            cb,
            1.0,
            a.as_ptr(),
            1,
            ca as isize,
            b.as_ptr(),
            cb as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            cb as isize,
            1,
        );
    }
    c
}

pub fn to_dmatrix(data: &[f64], rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Orthogonal `Q` minimizing `‖A Q − B‖_F` given `M = AᵀB`: `Q = U Vᵀ` for
/// the SVD `M = U S Vᵀ`.
pub fn procrustes(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::param("SVD failed to produce U"))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::param("SVD failed to produce Vᵀ"))?;
    Ok(u * v_t)
}

/// Eigenvectors of a symmetric matrix for its `k` largest eigenvalues, as the
/// columns of a `n × k` matrix (descending order; ties by index).
pub fn top_eigenvectors(sym: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let n = sym.nrows();
    let mut vecs = DMatrix::zeros(n, k);
    let mut vals = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        vals.push(eig.eigenvalues[idx]);
        let mut col = eig.eigenvectors.column(idx).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        vecs.set_column(c, &col);
    }
    (vals, vecs)
}

/// Max-abs deviation of `QᵀQ` from the identity, for a row-major `rows × cols` `Q`.
pub fn column_orthonormality_error(q: &[f32], rows: usize, cols: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, &q.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let g = m.transpose() * &m;
    identity_deviation(&g)
}

/// Max-abs deviation of `QQᵀ` from the identity, for a row-major `rows × cols` `Q`.
pub fn row_orthonormality_error(q: &[f32], rows: usize, cols: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, &q.iter().map(|&v| v as f64).collect::<Vec<_>>());
    let g = &m * m.transpose();
    identity_deviation(&g)
}

fn identity_deviation(g: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Solves `A X = B` for symmetric positive semi-definite `A`.
///
/// Uses a Cholesky factorization when `A` is positive definite. Otherwise,
/// if `allow_pseudo_inverse`, returns the minimum-norm solution through the
/// eigendecomposition, discarding eigenvalues below `1e-10 · λ_max`. The
/// returned rank is the numerical rank used.
pub fn solve_psd(
    a: DMatrix<f64>,
    b: &DMatrix<f64>,
    allow_pseudo_inverse: bool,
) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    let diag_max = (0..n).fold(0.0f64, |acc, i| acc.max(a[(i, i)].abs()));
    if let Some(chol) = a.clone().cholesky() {
        // exact singularity can survive factorization as a tiny rounded pivot
        let l = chol.l_dirty();
        let min_pivot = (0..n).fold(f64::INFINITY, |acc, i| acc.min(l[(i, i)] * l[(i, i)]));
        if min_pivot > 1e-12 * diag_max {
            let x = chol.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok((x, n));
            }
        }
    }
    if !allow_pseudo_inverse {
        return Err(Error::SingularSystem(format!(
            "{n}x{n} Gram matrix is not positive definite"
        )));
    }
    let eig = SymmetricEigen::new(a);
    let max = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    if max == 0.0 {
        return Ok((DMatrix::zeros(n, b.ncols()), 0));
    }
    let cutoff = 1e-10 * max;
    let vt_b = eig.eigenvectors.transpose() * b;
    let mut scaled = vt_b;
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            rank += 1;
            scaled.row_mut(i).scale_mut(1.0 / lambda);
        } else {
            scaled.row_mut(i).fill(0.0);
        }
    }
    Ok((eig.eigenvectors * scaled, rank))
}
