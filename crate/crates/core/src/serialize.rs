//! Single-file model format.
//!
//! Layout, all little-endian: the 8-byte magic `QDECMODL`, a `u32` format
//! version, a `u32` kind tag, a `u32` count of shape fields followed by that
//! many `u64` fields, then the tensors. Every tensor is a `u64` element count
//! followed by its elements (`f32` for real tensors, `u32` for counts, bytes
//! for packed codes). Real scalars that must survive exactly (MSE values) are
//! stored as `f64` bit patterns in the shape fields.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::codebook::{DecoderLut, SubspaceCodebook};
use crate::codes::CodeArray;
use crate::decoders::ToplineDecoder;
use crate::encoders::{ItqModel, KMeansModel, PqModel};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::nn::{Block, NnDecoder};

pub const MAGIC: &[u8; 8] = b"QDECMODL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    KMeans(KMeansModel),
    Pq(PqModel),
    Itq(ItqModel),
    DecoderLut(DecoderLut),
    Topline(ToplineDecoder),
    Nn(NnDecoder<f32>),
    Codes(CodeArray),
}

impl Model {
    pub fn kind_tag(&self) -> u32 {
        match self {
            Model::KMeans(_) => 1,
            Model::Pq(_) => 2,
            Model::Itq(_) => 3,
            Model::DecoderLut(_) => 4,
            Model::Topline(_) => 5,
            Model::Nn(_) => 6,
            Model::Codes(_) => 7,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::KMeans(_) => "kmeans",
            Model::Pq(_) => "pq",
            Model::Itq(_) => "itq",
            Model::DecoderLut(_) => "lut",
            Model::Topline(_) => "topline",
            Model::Nn(_) => "nn",
            Model::Codes(_) => "codes",
        }
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn header(kind: u32, shape: &[u64]) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&kind.to_le_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for s in shape {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        Self { buf }
    }

    fn f32s(&mut self, t: &[f32]) {
        self.buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn u32s(&mut self, t: &[u32]) {
        self.buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn bytes(&mut self, t: &[u8]) {
        self.buf.extend_from_slice(&(t.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(t);
    }
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let kind = model.kind_tag();
    let w = match model {
        Model::KMeans(km) => {
            let mut shape = vec![
                km.k() as u64,
                km.centroids.dim() as u64,
                km.iterations_run as u64,
                km.final_mse.to_bits(),
            ];
            shape.extend(km.mse_history.iter().map(|v| v.to_bits()));
            let mut w = Writer::header(kind, &shape);
            w.f32s(km.centroids.as_slice());
            w
        }
        Model::Pq(pq) => {
            let cb = &pq.codebook;
            let rot = cb.rotation();
            let mut w = Writer::header(
                kind,
                &[
                    cb.m() as u64,
                    cb.ksub() as u64,
                    cb.dsub() as u64,
                    rot.is_some() as u64,
                ],
            );
            w.f32s(cb.centroids());
            if let Some(r) = rot {
                w.f32s(r);
            }
            w
        }
        Model::Itq(itq) => {
            let mut w = Writer::header(kind, &[itq.dim() as u64, itq.bits() as u64]);
            w.f32s(&itq.mean);
            w.f32s(&itq.pca);
            w.f32s(&itq.rotation);
            w
        }
        Model::DecoderLut(lut) => {
            let mut w =
                Writer::header(kind, &[lut.m() as u64, lut.ksub() as u64, lut.dim() as u64]);
            w.f32s(lut.tables());
            w
        }
        Model::Topline(t) => {
            let mut w = Writer::header(
                kind,
                &[
                    t.m() as u64,
                    t.bits() as u64,
                    t.table.rows() as u64,
                    t.table.dim() as u64,
                ],
            );
            w.f32s(t.table.as_slice());
            w.u32s(&t.counts);
            w
        }
        Model::Nn(net) => {
            let mut w = Writer::header(
                kind,
                &[
                    net.m() as u64,
                    net.ksub() as u64,
                    net.dim() as u64,
                    net.hidden() as u64,
                    net.block_count() as u64,
                    net.residual as u64,
                    net.dropout.to_bits(),
                ],
            );
            w.f32s(&net.lut);
            for b in &net.blocks {
                for t in [
                    &b.bn_gamma,
                    &b.bn_beta,
                    &b.bn_running_mean,
                    &b.bn_running_var,
                    &b.w1,
                    &b.b1,
                    &b.w2,
                    &b.b2,
                ] {
                    w.f32s(t);
                }
            }
            w
        }
        Model::Codes(c) => {
            let mut w = Writer::header(kind, &[c.len() as u64, c.m() as u64, c.bits() as u64]);
            w.bytes(c.payload());
            w
        }
    };
    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err("truncated stream"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, elem: usize, expected: Option<usize>) -> Result<usize> {
        let n = self.u64()?;
        let n = usize::try_from(n).map_err(|_| fmt_err("tensor length overflows"))?;
        if let Some(e) = expected {
            if n != e {
                return Err(fmt_err(format!(
                    "tensor of {n} elements where {e} were expected"
                )));
            }
        }
        if n.checked_mul(elem)
            .is_none_or(|b| b > self.buf.len() - self.pos)
        {
            return Err(fmt_err("truncated stream"));
        }
        Ok(n)
    }

    fn f32s(&mut self, expected: usize) -> Result<Vec<f32>> {
        let n = self.len(4, Some(expected))?;
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, expected: usize) -> Result<Vec<u32>> {
        let n = self.len(4, Some(expected))?;
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn bytes(&mut self, expected: usize) -> Result<Vec<u8>> {
        let n = self.len(1, Some(expected))?;
        Ok(self.take(n)?.to_vec())
    }
}

fn dim(v: u64) -> Result<usize> {
    usize::try_from(v)
        .ok()
        .filter(|&v| v < (1usize << 40))
        .ok_or_else(|| fmt_err(format!("implausible size {v}")))
}

fn product(parts: &[usize]) -> Result<usize> {
    parts
        .iter()
        .try_fold(1usize, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| fmt_err("tensor size overflows"))
}

pub fn from_bytes(buf: &[u8]) -> Result<Model> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8).map_err(|_| fmt_err("missing magic"))? != MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(fmt_err(format!("unsupported format version {version}")));
    }
    let kind = r.u32()?;
    let nshape = r.u32()? as usize;
    if nshape > (buf.len() - r.pos) / 8 {
        return Err(fmt_err("truncated stream"));
    }
    let shape: Vec<u64> = (0..nshape).map(|_| r.u64()).collect::<Result<_>>()?;
    let need = |n: usize| {
        if shape.len() < n {
            Err(fmt_err(format!(
                "kind {kind} needs {n} shape fields, found {}",
                shape.len()
            )))
        } else {
            Ok(())
        }
    };
    let model = match kind {
        1 => {
            need(4)?;
            let (k, d) = (dim(shape[0])?, dim(shape[1])?);
            let centroids = DenseMatrix::new(k, d, r.f32s(product(&[k, d])?)?)?;
            Model::KMeans(KMeansModel {
                centroids,
                iterations_run: dim(shape[2])?,
                final_mse: f64::from_bits(shape[3]),
                mse_history: shape[4..].iter().map(|&b| f64::from_bits(b)).collect(),
            })
        }
        2 => {
            need(4)?;
            let (m, ksub, dsub) = (dim(shape[0])?, dim(shape[1])?, dim(shape[2])?);
            let centroids = r.f32s(product(&[m, ksub, dsub])?)?;
            let rotation = if shape[3] != 0 {
                let d = product(&[m, dsub])?;
                Some(r.f32s(product(&[d, d])?)?)
            } else {
                None
            };
            Model::Pq(PqModel {
                codebook: SubspaceCodebook::new(m, ksub, dsub, centroids, rotation)?,
            })
        }
        3 => {
            need(2)?;
            let (d, bits) = (dim(shape[0])?, dim(shape[1])?);
            let mean = r.f32s(d)?;
            let pca = r.f32s(product(&[d, bits])?)?;
            let rotation = r.f32s(product(&[bits, bits])?)?;
            Model::Itq(ItqModel::from_parts(mean, pca, rotation, d, bits)?)
        }
        4 => {
            need(3)?;
            let (m, ksub, d) = (dim(shape[0])?, dim(shape[1])?, dim(shape[2])?);
            Model::DecoderLut(DecoderLut::new(
                m,
                ksub,
                d,
                r.f32s(product(&[m, ksub, d])?)?,
            )?)
        }
        5 => {
            need(4)?;
            let (m, bits, rows, d) = (
                dim(shape[0])?,
                dim(shape[1])?,
                dim(shape[2])?,
                dim(shape[3])?,
            );
            let table = DenseMatrix::new(rows, d, r.f32s(product(&[rows, d])?)?)?;
            let counts = r.u32s(rows)?;
            Model::Topline(ToplineDecoder::from_parts(m, bits as u32, table, counts)?)
        }
        6 => {
            need(7)?;
            let (m, ksub, d, h, nb) = (
                dim(shape[0])?,
                dim(shape[1])?,
                dim(shape[2])?,
                dim(shape[3])?,
                dim(shape[4])?,
            );
            let lut = r.f32s(product(&[m, ksub, d])?)?;
            let mut blocks = Vec::with_capacity(nb.min(64));
            for _ in 0..nb {
                blocks.push(Block {
                    bn_gamma: r.f32s(d)?,
                    bn_beta: r.f32s(d)?,
                    bn_running_mean: r.f32s(d)?,
                    bn_running_var: r.f32s(d)?,
                    w1: r.f32s(product(&[d, h])?)?,
                    b1: r.f32s(h)?,
                    w2: r.f32s(product(&[h, d])?)?,
                    b2: r.f32s(d)?,
                });
            }
            let mut net = NnDecoder::from_parts(m, ksub, d, h, lut, blocks)?;
            net.residual = shape[5] != 0;
            net.dropout = f64::from_bits(shape[6]);
            Model::Nn(net)
        }
        7 => {
            need(3)?;
            let (n, m, bits) = (dim(shape[0])?, dim(shape[1])?, dim(shape[2])?);
            let bytes_per = product(&[m, bits])?.div_ceil(8);
            let payload = r.bytes(product(&[n, bytes_per])?)?;
            Model::Codes(CodeArray::from_payload(n, m, bits as u32, payload)?)
        }
        other => return Err(fmt_err(format!("unknown model kind {other}"))),
    };
    if r.pos != buf.len() {
        return Err(fmt_err("trailing bytes after the last tensor"));
    }
    Ok(model)
}

pub fn save(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}
