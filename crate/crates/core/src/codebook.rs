//! Parameter containers shared by encoders and decoders.

use crate::error::{Error, Result};
use crate::linalg;
use crate::matrix::DenseMatrix;

/// Orthogonality tolerance for stored rotations and projection bases.
pub const ORTHO_TOL: f64 = 1e-4;

/// Per-subspace centroid tables of a product quantizer, with an optional
/// `d × d` rotation applied to inputs before slicing (`x' = R x`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceCodebook {
    m: usize,
    ksub: usize,
    dsub: usize,
    /// `m × ksub × dsub`, row-major.
    centroids: Vec<f32>,
    rotation: Option<Vec<f32>>,
}

impl SubspaceCodebook {
    pub fn new(
        m: usize,
        ksub: usize,
        dsub: usize,
        centroids: Vec<f32>,
        rotation: Option<Vec<f32>>,
    ) -> Result<Self> {
        if m == 0 || ksub == 0 || dsub == 0 {
            return Err(Error::param("codebook dimensions must be positive"));
        }
        if centroids.len() != m * ksub * dsub {
            return Err(Error::shape(format!(
                "{} centroid values for {m} x {ksub} x {dsub}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite centroid"));
        }
        if let Some(r) = &rotation {
            let d = m * dsub;
            if r.len() != d * d {
                return Err(Error::shape(format!(
                    "rotation of {} values for d = {d}",
                    r.len()
                )));
            }
            let err = linalg::column_orthonormality_error(r, d, d);
            if !(err <= ORTHO_TOL) {
                return Err(Error::param(format!(
                    "rotation is not orthogonal (error {err:.3e})"
                )));
            }
        }
        Ok(Self {
            m,
            ksub,
            dsub,
            centroids,
            rotation,
        })
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn ksub(&self) -> usize {
        self.ksub
    }

    #[inline]
    pub fn dsub(&self) -> usize {
        self.dsub
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.m * self.dsub
    }

    pub fn bits(&self) -> u32 {
        self.ksub.trailing_zeros()
    }

    #[inline]
    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    #[inline]
    pub fn centroid(&self, sub: usize, k: usize) -> &[f32] {
        let start = (sub * self.ksub + k) * self.dsub;
        &self.centroids[start..start + self.dsub]
    }

    /// Centroid table of one subspace as a `ksub × dsub` matrix.
    pub fn subspace(&self, sub: usize) -> DenseMatrix {
        let start = sub * self.ksub * self.dsub;
        DenseMatrix::from_vec_unchecked(
            self.ksub,
            self.dsub,
            self.centroids[start..start + self.ksub * self.dsub].to_vec(),
        )
    }

    pub fn rotation(&self) -> Option<&[f32]> {
        self.rotation.as_deref()
    }

    /// Applies the rotation (if any) to every row.
    pub fn rotate(&self, x: &DenseMatrix) -> DenseMatrix {
        match &self.rotation {
            Some(r) => rotate_rows(x, r),
            None => x.clone(),
        }
    }

    /// Applies `Rᵀ` (if a rotation is present), mapping back to input space.
    pub fn unrotate(&self, x: &DenseMatrix) -> DenseMatrix {
        match &self.rotation {
            Some(r) => unrotate_rows(x, r),
            None => x.clone(),
        }
    }
}

/// `x' = R x` for every row, `R` row-major `d × d`.
pub fn rotate_rows(x: &DenseMatrix, r: &[f32]) -> DenseMatrix {
    let d = x.dim();
    assert_eq!(r.len(), d * d);
    let rt: Vec<f64> = r.iter().map(|&v| v as f64).collect();
    x.mul_transposed(&rt, d)
}

/// `x = Rᵀ x'` for every row.
pub fn unrotate_rows(x: &DenseMatrix, r: &[f32]) -> DenseMatrix {
    let d = x.dim();
    assert_eq!(r.len(), d * d);
    let mut t = vec![0.0f64; d * d];
    for i in 0..d {
        for j in 0..d {
            t[j * d + i] = r[i * d + j] as f64;
        }
    }
    x.mul_transposed(&t, d)
}

/// Additive decoder tables: `m × ksub × dim`. A code decodes to the sum of
/// one full-dimension row per subindex.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLut {
    m: usize,
    ksub: usize,
    dim: usize,
    tables: Vec<f32>,
}

impl DecoderLut {
    pub fn new(m: usize, ksub: usize, dim: usize, tables: Vec<f32>) -> Result<Self> {
        if tables.len() != m * ksub * dim {
            return Err(Error::shape(format!(
                "{} LUT values for {m} x {ksub} x {dim}",
                tables.len()
            )));
        }
        if tables.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("non-finite LUT entry"));
        }
        Ok(Self {
            m,
            ksub,
            dim,
            tables,
        })
    }

    pub fn zeros(m: usize, ksub: usize, dim: usize) -> Self {
        Self {
            m,
            ksub,
            dim,
            tables: vec![0.0; m * ksub * dim],
        }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn ksub(&self) -> usize {
        self.ksub
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn tables(&self) -> &[f32] {
        &self.tables
    }

    #[inline]
    pub fn entry(&self, sub: usize, k: usize) -> &[f32] {
        let start = (sub * self.ksub + k) * self.dim;
        &self.tables[start..start + self.dim]
    }

    /// Embeds PQ centroids into disjoint coordinate blocks (and, for a
    /// rotated codebook, maps each entry back through `Rᵀ`).
    pub fn from_codebook(cb: &SubspaceCodebook) -> Self {
        let (m, ksub, dsub, d) = (cb.m(), cb.ksub(), cb.dsub(), cb.dim());
        let mut embedded = DenseMatrix::zeros(m * ksub, d);
        for i in 0..m {
            for k in 0..ksub {
                embedded.row_mut(i * ksub + k)[i * dsub..(i + 1) * dsub]
                    .copy_from_slice(cb.centroid(i, k));
            }
        }
        let tables = cb.unrotate(&embedded).into_vec();
        Self {
            m,
            ksub,
            dim: d,
            tables,
        }
    }
}

/// Sign projections for binary codes; rows of `basis` are the `u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryProjection {
    pub m: usize,
    pub dim: usize,
    /// `m × dim`, row-major.
    pub basis: Vec<f32>,
}

impl BinaryProjection {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.basis[i * self.dim..(i + 1) * self.dim]
    }

    /// `‖U Uᵀ − I‖_∞`.
    pub fn orthonormality_error(&self) -> f64 {
        linalg::row_orthonormality_error(&self.basis, self.m, self.dim)
    }
}
