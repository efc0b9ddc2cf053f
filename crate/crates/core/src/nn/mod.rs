//! Neural decoder: an additive LUT layer followed by blocks of
//! batch normalization, affine, ReLU, affine.
//!
//! Parameters are generic over the scalar type so the same forward and
//! backward code runs in `f64` for gradient checks and in `f32` for training.

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codebook::DecoderLut;
use crate::codes::CodeArray;
use crate::decoders::aq::accumulate_lut;
use crate::decoders::Decoder;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

mod loss;
mod optim;
mod train;
mod triplet;

pub use loss::{loss_and_grad, reconstruction_loss, triplet_loss, LossParts};
pub use optim::{Optimizer, OptimizerKind, PlateauScheduler};
pub use train::{train_decoder, write_history_csv, HistoryRow, TrainConfig, TrainOutcome};
pub use triplet::{default_margin, mine_triplets, nearest_neighbors, Triplet};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Rows per chunk for eval-mode inference.
const EVAL_CHUNK: usize = 8192;

/// Scalar type for the network.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Default + Send + Sync + Debug + 'static
{
    /// `C = alpha · op(A) · op(B) + beta · C`, all row-major; `op(A)` is
    /// `m × k` and `op(B)` is `k × n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    #[inline]
    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).unwrap()
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // stored as rows×cols when not transposed, cols×rows when transposed
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                // SAFETY: bounds checked above; strides describe dense row-major storage.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub bn_gamma: Vec<T>,
    pub bn_beta: Vec<T>,
    pub bn_running_mean: Vec<T>,
    pub bn_running_var: Vec<T>,
    /// `d × h`, applied as `z · W1`.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `h × d`.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnDecoder<T = f32> {
    m: usize,
    ksub: usize,
    dim: usize,
    hidden: usize,
    /// `m × ksub × dim`.
    pub lut: Vec<T>,
    pub blocks: Vec<Block<T>>,
    /// Adds the block input to its output. Off by default.
    pub residual: bool,
    /// Dropout rate after the ReLU, train mode only.
    pub dropout: f64,
}

/// Gradients laid out like [`NnDecoder::params`].
pub type Grads<T> = Vec<Vec<T>>;

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    n: usize,
    idx: Vec<u32>,
    blocks: Vec<BlockCache<T>>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    z: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
    mask: Option<Vec<T>>,
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::of(rng.random_range(-bound..bound)))
        .collect()
}

impl<T: Real> NnDecoder<T> {
    /// Zero LUT; affine layers drawn from `U(±1/√fan_in)`, batch norm at
    /// identity.
    pub fn new(
        m: usize,
        ksub: usize,
        dim: usize,
        hidden: usize,
        blocks: usize,
        seed: u64,
    ) -> Result<Self> {
        if m == 0 || ksub == 0 || dim == 0 || (blocks > 0 && hidden == 0) {
            return Err(Error::param("network dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = (0..blocks)
            .map(|_| {
                let b_in = 1.0 / (dim as f64).sqrt();
                let b_hid = 1.0 / (hidden as f64).sqrt();
                Block {
                    bn_gamma: vec![T::one(); dim],
                    bn_beta: vec![T::zero(); dim],
                    bn_running_mean: vec![T::zero(); dim],
                    bn_running_var: vec![T::one(); dim],
                    w1: uniform(&mut rng, dim * hidden, b_in),
                    b1: uniform(&mut rng, hidden, b_in),
                    w2: uniform(&mut rng, hidden * dim, b_hid),
                    b2: uniform(&mut rng, dim, b_hid),
                }
            })
            .collect();
        Ok(Self {
            m,
            ksub,
            dim,
            hidden,
            lut: vec![T::zero(); m * ksub * dim],
            blocks,
            residual: false,
            dropout: 0.0,
        })
    }

    /// Same as [`NnDecoder::new`] with the LUT layer copied from `lut`.
    pub fn with_lut(lut: &DecoderLut, hidden: usize, blocks: usize, seed: u64) -> Result<Self> {
        let mut net = Self::new(lut.m(), lut.ksub(), lut.dim(), hidden, blocks, seed)?;
        net.lut = lut.tables().iter().map(|&v| T::of(v as f64)).collect();
        Ok(net)
    }

    pub fn from_parts(
        m: usize,
        ksub: usize,
        dim: usize,
        hidden: usize,
        lut: Vec<T>,
        blocks: Vec<Block<T>>,
    ) -> Result<Self> {
        if lut.len() != m * ksub * dim {
            return Err(Error::shape("LUT layer size does not match m, K', d"));
        }
        for b in &blocks {
            let ok = [
                &b.bn_gamma,
                &b.bn_beta,
                &b.bn_running_mean,
                &b.bn_running_var,
                &b.b2,
            ]
            .iter()
            .all(|v| v.len() == dim)
                && b.w1.len() == dim * hidden
                && b.b1.len() == hidden
                && b.w2.len() == hidden * dim;
            if !ok {
                return Err(Error::shape("block parameter sizes do not match d and h"));
            }
        }
        let net = Self {
            m,
            ksub,
            dim,
            hidden,
            lut,
            blocks,
            residual: false,
            dropout: 0.0,
        };
        if !net.is_finite() {
            return Err(Error::param("non-finite network parameter"));
        }
        Ok(net)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ksub(&self) -> usize {
        self.ksub
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Trainable tensors: the LUT, then per block `γ, β, W1, b1, W2, b2`.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.lut];
        for b in &self.blocks {
            out.extend([&b.bn_gamma[..], &b.bn_beta, &b.w1, &b.b1, &b.w2, &b.b2]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = vec![&mut self.lut];
        for b in &mut self.blocks {
            out.extend([
                &mut b.bn_gamma,
                &mut b.bn_beta,
                &mut b.w1,
                &mut b.b1,
                &mut b.w2,
                &mut b.b2,
            ]);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
            && self.blocks.iter().all(|b| {
                b.bn_running_mean
                    .iter()
                    .chain(&b.bn_running_var)
                    .all(|v| v.is_finite())
            })
    }

    fn check_codes(&self, codes: &CodeArray) -> Result<()> {
        if codes.m() != self.m || codes.ksub() != self.ksub {
            return Err(Error::shape(format!(
                "codes with m = {}, K' = {} for a network with m = {}, K' = {}",
                codes.m(),
                codes.ksub(),
                self.m,
                self.ksub
            )));
        }
        Ok(())
    }

    fn lut_layer(&self, idx: &[u32], n: usize) -> Vec<T> {
        let d = self.dim;
        let mut y = vec![T::zero(); n * d];
        for (row, out) in y.chunks_exact_mut(d).enumerate() {
            accumulate_lut(
                &self.lut,
                self.ksub,
                d,
                &idx[row * self.m..(row + 1) * self.m],
                out,
            );
        }
        y
    }

    /// Eval-mode forward pass (running batch-norm statistics, no dropout).
    pub fn forward_eval(&self, codes: &CodeArray) -> Result<Vec<T>> {
        self.check_codes(codes)?;
        let n = codes.len();
        let mut out = Vec::with_capacity(n * self.dim);
        let mut idx = Vec::new();
        for start in (0..n).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(n);
            idx.clear();
            for row in start..end {
                idx.extend(codes.subindices(row));
            }
            let mut y = self.lut_layer(&idx, end - start);
            for b in &self.blocks {
                y = self.block_eval(b, &y, end - start);
            }
            out.extend(y);
        }
        Ok(out)
    }

    fn block_eval(&self, b: &Block<T>, y: &[T], n: usize) -> Vec<T> {
        let (d, h) = (self.dim, self.hidden);
        let scale: Vec<T> = (0..d)
            .map(|j| b.bn_gamma[j] / (b.bn_running_var[j] + T::of(BN_EPS)).sqrt())
            .collect();
        let mut z = y.to_vec();
        for row in z.chunks_exact_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - b.bn_running_mean[j]) * scale[j] + b.bn_beta[j];
            }
        }
        let mut pre = vec![T::zero(); n * h];
        T::gemm(
            n,
            d,
            h,
            T::one(),
            &z,
            false,
            &b.w1,
            false,
            T::zero(),
            &mut pre,
        );
        for row in pre.chunks_exact_mut(h) {
            for (v, &c) in row.iter_mut().zip(&b.b1) {
                *v = (*v + c).max(T::zero());
            }
        }
        let mut out = vec![T::zero(); n * d];
        T::gemm(
            n,
            h,
            d,
            T::one(),
            &pre,
            false,
            &b.w2,
            false,
            T::zero(),
            &mut out,
        );
        for (r, row) in out.chunks_exact_mut(d).enumerate() {
            for j in 0..d {
                row[j] += b.b2[j];
                if self.residual {
                    row[j] += y[r * d + j];
                }
            }
        }
        out
    }

    /// Train-mode forward pass: batch statistics, running-statistic update,
    /// dropout. Returns the output and the cache for [`NnDecoder::backward`].
    pub fn forward_train(
        &mut self,
        codes: &CodeArray,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<T>, ForwardCache<T>)> {
        self.check_codes(codes)?;
        let n = codes.len();
        if n < 2 && !self.blocks.is_empty() {
            return Err(Error::param(
                "train-mode batch norm needs at least two rows",
            ));
        }
        let (d, h) = (self.dim, self.hidden);
        let idx = codes.unpack();
        let mut y = self.lut_layer(&idx, n);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let (residual, dropout) = (self.residual, self.dropout);
        for b in &mut self.blocks {
            let mut mean = vec![0.0f64; d];
            let mut var = vec![0.0f64; d];
            for row in y.chunks_exact(d) {
                for j in 0..d {
                    mean[j] += row[j].f64();
                }
            }
            mean.iter_mut().for_each(|v| *v /= n as f64);
            for row in y.chunks_exact(d) {
                for j in 0..d {
                    let c = row[j].f64() - mean[j];
                    var[j] += c * c;
                }
            }
            let inv_std: Vec<T> = var
                .iter()
                .map(|&v| T::of(1.0 / (v / n as f64 + BN_EPS).sqrt()))
                .collect();
            for j in 0..d {
                let unbiased = var[j] / (n - 1) as f64;
                b.bn_running_mean[j] =
                    T::of((1.0 - BN_MOMENTUM) * b.bn_running_mean[j].f64() + BN_MOMENTUM * mean[j]);
                b.bn_running_var[j] =
                    T::of((1.0 - BN_MOMENTUM) * b.bn_running_var[j].f64() + BN_MOMENTUM * unbiased);
            }
            let mut xhat = vec![T::zero(); n * d];
            let mut z = vec![T::zero(); n * d];
            for r in 0..n {
                for j in 0..d {
                    let v = (y[r * d + j] - T::of(mean[j])) * inv_std[j];
                    xhat[r * d + j] = v;
                    z[r * d + j] = v * b.bn_gamma[j] + b.bn_beta[j];
                }
            }
            let mut pre = vec![T::zero(); n * h];
            T::gemm(
                n,
                d,
                h,
                T::one(),
                &z,
                false,
                &b.w1,
                false,
                T::zero(),
                &mut pre,
            );
            for row in pre.chunks_exact_mut(h) {
                for (v, &c) in row.iter_mut().zip(&b.b1) {
                    *v += c;
                }
            }
            let mut act: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
            let mask = if dropout > 0.0 {
                let keep = T::of(1.0 / (1.0 - dropout));
                let mask: Vec<T> = (0..n * h)
                    .map(|_| {
                        if rng.random::<f64>() < dropout {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                act.iter_mut().zip(&mask).for_each(|(a, &k)| *a *= k);
                Some(mask)
            } else {
                None
            };
            let mut out = vec![T::zero(); n * d];
            T::gemm(
                n,
                h,
                d,
                T::one(),
                &act,
                false,
                &b.w2,
                false,
                T::zero(),
                &mut out,
            );
            for (r, row) in out.chunks_exact_mut(d).enumerate() {
                for j in 0..d {
                    row[j] += b.b2[j];
                    if residual {
                        row[j] += y[r * d + j];
                    }
                }
            }
            caches.push(BlockCache {
                xhat,
                inv_std,
                z,
                pre,
                act,
                mask,
            });
            y = out;
        }
        Ok((
            y,
            ForwardCache {
                n,
                idx,
                blocks: caches,
            },
        ))
    }

    /// Gradients of a loss with respect to every trainable tensor, given the
    /// gradient with respect to the train-mode output.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> Result<Grads<T>> {
        let (n, d, h) = (cache.n, self.dim, self.hidden);
        if grad_out.len() != n * d || cache.blocks.len() != self.blocks.len() {
            return Err(Error::shape(
                "gradient does not match the cached forward pass",
            ));
        }
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        let mut g = grad_out.to_vec();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let mut gb2 = vec![T::zero(); d];
            for row in g.chunks_exact(d) {
                for j in 0..d {
                    gb2[j] += row[j];
                }
            }
            let mut gw2 = vec![T::zero(); h * d];
            T::gemm(
                h,
                n,
                d,
                T::one(),
                &c.act,
                true,
                &g,
                false,
                T::zero(),
                &mut gw2,
            );
            let mut ga = vec![T::zero(); n * h];
            T::gemm(
                n,
                d,
                h,
                T::one(),
                &g,
                false,
                &b.w2,
                true,
                T::zero(),
                &mut ga,
            );
            if let Some(mask) = &c.mask {
                ga.iter_mut().zip(mask).for_each(|(v, &k)| *v *= k);
            }
            ga.iter_mut().zip(&c.pre).for_each(|(v, &p)| {
                if p <= T::zero() {
                    *v = T::zero()
                }
            });
            let mut gb1 = vec![T::zero(); h];
            for row in ga.chunks_exact(h) {
                for j in 0..h {
                    gb1[j] += row[j];
                }
            }
            let mut gw1 = vec![T::zero(); d * h];
            T::gemm(
                d,
                n,
                h,
                T::one(),
                &c.z,
                true,
                &ga,
                false,
                T::zero(),
                &mut gw1,
            );
            let mut gz = vec![T::zero(); n * d];
            T::gemm(
                n,
                h,
                d,
                T::one(),
                &ga,
                false,
                &b.w1,
                true,
                T::zero(),
                &mut gz,
            );

            let mut ggamma = vec![T::zero(); d];
            let mut gbeta = vec![T::zero(); d];
            let mut sum_gx = vec![T::zero(); d];
            let mut sum_gx_xhat = vec![T::zero(); d];
            for r in 0..n {
                for j in 0..d {
                    let gzv = gz[r * d + j];
                    let xh = c.xhat[r * d + j];
                    ggamma[j] += gzv * xh;
                    gbeta[j] += gzv;
                    let gx = gzv * b.bn_gamma[j];
                    sum_gx[j] += gx;
                    sum_gx_xhat[j] += gx * xh;
                }
            }
            let nt = T::of(n as f64);
            let mut gy = vec![T::zero(); n * d];
            for r in 0..n {
                for j in 0..d {
                    let gx = gz[r * d + j] * b.bn_gamma[j];
                    let v = (nt * gx - sum_gx[j] - c.xhat[r * d + j] * sum_gx_xhat[j])
                        * c.inv_std[j]
                        / nt;
                    gy[r * d + j] = if self.residual { v + g[r * d + j] } else { v };
                }
            }
            block_grads.push(vec![ggamma, gbeta, gw1, gb1, gw2, gb2]);
            g = gy;
        }
        let mut glut = vec![T::zero(); self.lut.len()];
        for r in 0..n {
            for i in 0..self.m {
                let k = cache.idx[r * self.m + i] as usize;
                let start = (i * self.ksub + k) * d;
                for (t, &v) in glut[start..start + d]
                    .iter_mut()
                    .zip(&g[r * d..(r + 1) * d])
                {
                    *t += v;
                }
            }
        }
        let mut out = vec![glut];
        for bg in block_grads.into_iter().rev() {
            out.extend(bg);
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> NnDecoder<U> {
        let c = |v: &Vec<T>| v.iter().map(|&x| U::of(x.f64())).collect::<Vec<U>>();
        NnDecoder {
            m: self.m,
            ksub: self.ksub,
            dim: self.dim,
            hidden: self.hidden,
            lut: c(&self.lut),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    bn_gamma: c(&b.bn_gamma),
                    bn_beta: c(&b.bn_beta),
                    bn_running_mean: c(&b.bn_running_mean),
                    bn_running_var: c(&b.bn_running_var),
                    w1: c(&b.w1),
                    b1: c(&b.b1),
                    w2: c(&b.w2),
                    b2: c(&b.b2),
                })
                .collect(),
            residual: self.residual,
            dropout: self.dropout,
        }
    }
}

/// Forward pass returning a matrix; train mode updates running statistics
/// and uses a dropout stream seeded with `0`.
pub fn nn_forward(net: &mut NnDecoder<f32>, codes: &CodeArray, mode: Mode) -> Result<DenseMatrix> {
    let out = match mode {
        Mode::Eval => net.forward_eval(codes)?,
        Mode::Train => {
            net.forward_train(codes, &mut ChaCha8Rng::seed_from_u64(0))?
                .0
        }
    };
    DenseMatrix::new(codes.len(), net.dim(), out)
}

impl Decoder for NnDecoder<f32> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn decode(&self, codes: &CodeArray) -> Result<DenseMatrix> {
        DenseMatrix::new(codes.len(), self.dim, self.forward_eval(codes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoders::aq_decode;

    fn random_codes(n: usize, m: usize, bits: u32, seed: u64) -> CodeArray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t: Vec<u32> = (0..n * m)
            .map(|_| rng.random_range(0..1u32 << bits))
            .collect();
        CodeArray::pack(&t, m, bits).unwrap()
    }

    fn random_net(
        m: usize,
        bits: u32,
        d: usize,
        h: usize,
        blocks: usize,
        seed: u64,
    ) -> NnDecoder<f64> {
        let mut net = NnDecoder::<f64>::new(m, 1 << bits, d, h, blocks, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        net.lut
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        for b in &mut net.blocks {
            b.bn_gamma
                .iter_mut()
                .for_each(|v| *v = rng.random_range(0.5..1.5));
            b.bn_beta
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        net
    }

    /// max |analytic − numeric| / max |numeric| per tensor.
    fn gradient_check(
        net: &NnDecoder<f64>,
        codes: &CodeArray,
        x: &[f64],
        triplet: Option<(f64, f64)>,
    ) -> f64 {
        let nanchor = x.len() / net.dim();
        let loss_of = |n: &NnDecoder<f64>| {
            let mut n = n.clone();
            let (out, _) = n
                .forward_train(codes, &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
            loss_and_grad(&out, x, nanchor, n.dim(), triplet)
                .unwrap()
                .0
                .total
        };
        let mut work = net.clone();
        let (out, cache) = work
            .forward_train(codes, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let (_, g) = loss_and_grad(&out, x, nanchor, net.dim(), triplet).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for (t, ga) in grads.iter().enumerate() {
            let mut max_num = 0.0f64;
            let mut max_diff = 0.0f64;
            for i in 0..ga.len() {
                let mut plus = net.clone();
                plus.params_mut()[t][i] += eps;
                let mut minus = net.clone();
                minus.params_mut()[t][i] -= eps;
                let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                max_num = max_num.max(num.abs());
                max_diff = max_diff.max((num - ga[i]).abs());
            }
            let rel = if max_num < 1e-9 {
                max_diff
            } else {
                max_diff / max_num
            };
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let codes = random_codes(8, 2, 2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..8 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let net = random_net(2, 2, 4, 8, 1, 3);
        let rel = gradient_check(&net, &codes, &x, None);
        assert!(rel <= 1e-4, "relative error {rel}");

        let net2 = random_net(2, 2, 4, 8, 2, 4);
        assert!(gradient_check(&net2, &codes, &x, None) <= 1e-4);

        let mut res = random_net(2, 2, 4, 8, 1, 5);
        res.residual = true;
        assert!(gradient_check(&res, &codes, &x, None) <= 1e-4);
    }

    #[test]
    fn triplet_gradients_match_finite_differences() {
        // batch = [anchors; positives; negatives], two anchors each
        let codes = random_codes(6, 2, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..2 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let net = random_net(2, 2, 4, 8, 1, 9);
        // a large margin keeps every hinge active, away from its kink
        let rel = gradient_check(&net, &codes, &x, Some((1.0, 50.0)));
        assert!(rel <= 1e-4, "relative error {rel}");
    }

    #[test]
    fn lut_only_network_equals_aq_decode() {
        let codes = random_codes(300, 4, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let tables: Vec<f32> = (0..4 * 16 * 6)
            .map(|_| rng.random_range(-3.0..3.0))
            .collect();
        let lut = DecoderLut::new(4, 16, 6, tables).unwrap();
        let mut net = NnDecoder::<f32>::with_lut(&lut, 12, 0, 0).unwrap();
        let expected = aq_decode(&lut, &codes).unwrap();
        assert_eq!(net.decode(&codes).unwrap(), expected);
        assert_eq!(nn_forward(&mut net, &codes, Mode::Train).unwrap(), expected);
    }

    #[test]
    fn eval_is_deterministic_and_constant_network() {
        let codes = random_codes(50, 2, 4, 13);
        let net = random_net(2, 4, 5, 10, 1, 14).cast::<f32>();
        assert_eq!(
            net.forward_eval(&codes).unwrap(),
            net.forward_eval(&codes).unwrap()
        );

        let mut flat = NnDecoder::<f32>::new(2, 16, 3, 4, 1, 0).unwrap();
        let b = &mut flat.blocks[0];
        b.w1.iter_mut().for_each(|v| *v = 0.0);
        b.w2.iter_mut().for_each(|v| *v = 0.0);
        b.bn_beta = vec![2.5; 3];
        b.b2 = vec![1.0, -2.0, 0.5];
        let out = flat.forward_eval(&codes).unwrap();
        for row in out.chunks_exact(3) {
            assert_eq!(row, &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn batch_norm_statistics() {
        let codes = random_codes(400, 3, 4, 15);
        let mut net = random_net(3, 4, 6, 8, 1, 16);
        net.lut.iter_mut().for_each(|v| *v = *v * 3.0 + 1.0);
        let (_, cache) = net
            .forward_train(&codes, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let b = &net.blocks[0];
        let z = &cache.blocks[0].z;
        for j in 0..6 {
            let col: Vec<f64> = z.chunks_exact(6).map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / 400.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 400.0;
            assert!((mean - b.bn_beta[j]).abs() < 1e-3);
            assert!((var - b.bn_gamma[j].powi(2)).abs() < 1e-3 * b.bn_gamma[j].powi(2).max(1.0));
        }
        // one step moves the running stats a tenth of the way
        let y = net.lut_layer(&cache.idx, 400);
        let mean0 = y.chunks_exact(6).map(|r| r[0]).sum::<f64>() / 400.0;
        assert!((b.bn_running_mean[0] - 0.1 * mean0).abs() < 1e-12);

        // running statistics make single rows valid in eval mode only
        let one = codes.slice(0..1);
        assert!(net.forward_eval(&one).is_ok());
        let mut again = net.clone();
        assert!(again
            .forward_train(&one, &mut ChaCha8Rng::seed_from_u64(0))
            .is_err());
    }

    #[test]
    fn zero_loss_gives_zero_gradients_and_unused_rows_stay_zero() {
        let codes = CodeArray::pack(&[0, 1, 0, 1, 1, 0, 1, 0], 2, 2).unwrap();
        let net = random_net(2, 2, 3, 6, 1, 17);
        let mut work = net.clone();
        let (out, cache) = work
            .forward_train(&codes, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let (parts, g) = loss_and_grad(&out, &out, 4, 3, None).unwrap();
        assert_eq!(parts.total, 0.0);
        let grads = net.backward(&cache, &g).unwrap();
        assert!(grads.iter().all(|t| t.iter().all(|&v| v == 0.0)));

        let x = vec![1.0; 12];
        let (_, g) = loss_and_grad(&out, &x, 4, 3, None).unwrap();
        let grads = net.backward(&cache, &g).unwrap();
        // subindices 2 and 3 never occur
        for i in 0..2 {
            for k in 2..4 {
                let s = (i * 4 + k) * 3;
                assert!(grads[0][s..s + 3].iter().all(|&v| v == 0.0));
            }
        }
        assert!(grads[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_mismatched_codes() {
        let net = NnDecoder::<f32>::new(2, 16, 4, 8, 1, 0).unwrap();
        assert!(net.forward_eval(&random_codes(3, 3, 4, 0)).is_err());
        assert!(net.forward_eval(&random_codes(3, 2, 8, 0)).is_err());
    }
}
