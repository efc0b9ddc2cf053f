//! Packed compact codes.
//!
//! Layout is vector-major. Within a vector's code, subindex `i` occupies bits
//! `[i * bits, (i + 1) * bits)`, counted little-endian within each byte, and
//! every vector occupies `ceil(m * bits / 8)` bytes.

use crate::error::{Error, Result};

/// Widths with dedicated fast paths. Any width in `1..=MAX_BITS` packs.
pub const SUPPORTED_BITS: [u32; 4] = [1, 4, 8, 16];
pub const MAX_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeArray {
    n: usize,
    m: usize,
    bits: u32,
    payload: Vec<u8>,
}

fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::param(format!(
            "unsupported bits per subindex {bits}; expected 1..={MAX_BITS}"
        )))
    }
}

#[inline]
fn bytes_for(m: usize, bits: u32) -> usize {
    (m * bits as usize).div_ceil(8)
}

impl CodeArray {
    /// Packs an `n × m` row-major table of subindices.
    pub fn pack(indices: &[u32], m: usize, bits: u32) -> Result<Self> {
        check_bits(bits)?;
        if m == 0 {
            return Err(Error::param("m must be positive"));
        }
        if !indices.len().is_multiple_of(m) {
            return Err(Error::shape(format!(
                "{} subindices is not a multiple of m = {m}",
                indices.len()
            )));
        }
        let n = indices.len() / m;
        let limit = 1u64 << bits;
        let stride = bytes_for(m, bits);
        let mut payload = vec![0u8; n * stride];
        for (row, (code, out)) in indices
            .chunks_exact(m)
            .zip(payload.chunks_exact_mut(stride))
            .enumerate()
        {
            for (pos, &value) in code.iter().enumerate() {
                if value as u64 >= limit {
                    return Err(Error::IndexOverflow {
                        row,
                        pos,
                        value,
                        bits,
                    });
                }
                write_bits(out, pos * bits as usize, bits, value);
            }
        }
        Ok(Self {
            n,
            m,
            bits,
            payload,
        })
    }

    /// Packs a table given as one slice per vector.
    pub fn pack_rows<R: AsRef<[u32]>>(rows: &[R], bits: u32) -> Result<Self> {
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut flat = Vec::with_capacity(rows.len() * m);
        for r in rows {
            if r.as_ref().len() != m {
                return Err(Error::shape("ragged code table"));
            }
            flat.extend_from_slice(r.as_ref());
        }
        Self::pack(&flat, m, bits)
    }

    /// Wraps an existing payload, validating its length.
    pub fn from_payload(n: usize, m: usize, bits: u32, payload: Vec<u8>) -> Result<Self> {
        check_bits(bits)?;
        if m == 0 {
            return Err(Error::param("m must be positive"));
        }
        if payload.len() != n * bytes_for(m, bits) {
            return Err(Error::shape(format!(
                "payload of {} bytes for {n} codes of {} bytes",
                payload.len(),
                bytes_for(m, bits)
            )));
        }
        Ok(Self {
            n,
            m,
            bits,
            payload,
        })
    }

    pub(crate) fn from_parts_unchecked(n: usize, m: usize, bits: u32, payload: Vec<u8>) -> Self {
        debug_assert_eq!(payload.len(), n * bytes_for(m, bits));
        Self {
            n,
            m,
            bits,
            payload,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of distinct values per subindex.
    #[inline]
    pub fn ksub(&self) -> usize {
        1usize << self.bits
    }

    #[inline]
    pub fn code_bytes(&self) -> usize {
        bytes_for(self.m, self.bits)
    }

    #[inline]
    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    #[inline]
    pub fn code(&self, row: usize) -> &[u8] {
        let s = self.code_bytes();
        &self.payload[row * s..(row + 1) * s]
    }

    #[inline]
    pub fn get(&self, row: usize, i: usize) -> u32 {
        debug_assert!(i < self.m);
        read_bits(self.code(row), i * self.bits as usize, self.bits)
    }

    /// Writes the `m` subindices of one vector into `out`.
    #[inline]
    pub fn subindices_into(&self, row: usize, out: &mut [u32]) {
        let code = self.code(row);
        match self.bits {
            8 => {
                for (o, &b) in out.iter_mut().zip(code) {
                    *o = b as u32;
                }
            }
            4 => {
                for (i, o) in out.iter_mut().enumerate().take(self.m) {
                    *o = ((code[i / 2] >> ((i % 2) * 4)) & 0x0f) as u32;
                }
            }
            _ => {
                for (i, o) in out.iter_mut().enumerate().take(self.m) {
                    *o = read_bits(code, i * self.bits as usize, self.bits);
                }
            }
        }
    }

    pub fn subindices(&self, row: usize) -> Vec<u32> {
        let mut out = vec![0; self.m];
        self.subindices_into(row, &mut out);
        out
    }

    /// Unpacks to an `n × m` row-major table.
    pub fn unpack(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.n * self.m];
        for (row, chunk) in out.chunks_exact_mut(self.m).enumerate() {
            self.subindices_into(row, chunk);
        }
        out
    }

    /// The whole code read as one little-endian integer; only defined when
    /// `m * bits <= 64`. This is the cell index used by whole-code tables.
    #[inline]
    pub fn code_value(&self, row: usize) -> u64 {
        debug_assert!(self.m * self.bits as usize <= 64);
        let mut v = 0u64;
        for (i, &b) in self.code(row).iter().enumerate() {
            v |= (b as u64) << (8 * i);
        }
        v
    }

    /// Total number of bits in one code.
    #[inline]
    pub fn total_bits(&self) -> usize {
        self.m * self.bits as usize
    }

    /// Codes for a subset of rows, in the given order.
    pub fn select(&self, ids: &[usize]) -> CodeArray {
        let s = self.code_bytes();
        let mut payload = Vec::with_capacity(ids.len() * s);
        for &i in ids {
            payload.extend_from_slice(self.code(i));
        }
        Self::from_parts_unchecked(ids.len(), self.m, self.bits, payload)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> CodeArray {
        let s = self.code_bytes();
        let payload = self.payload[range.start * s..range.end * s].to_vec();
        Self::from_parts_unchecked(range.len(), self.m, self.bits, payload)
    }

    pub fn concat(&self, other: &CodeArray) -> Result<CodeArray> {
        if self.m != other.m || self.bits != other.bits {
            return Err(Error::shape("concatenating codes of different layout"));
        }
        let mut payload = self.payload.clone();
        payload.extend_from_slice(&other.payload);
        Ok(Self::from_parts_unchecked(
            self.n + other.n,
            self.m,
            self.bits,
            payload,
        ))
    }
}

#[inline]
fn read_bits(code: &[u8], start: usize, bits: u32) -> u32 {
    let byte = start / 8;
    let shift = start % 8;
    let mut word = 0u32;
    let span = (shift + bits as usize).div_ceil(8);
    for k in 0..span {
        word |= (code[byte + k] as u32) << (8 * k);
    }
    (word >> shift) & ((1u32 << bits) - 1)
}

#[inline]
fn write_bits(code: &mut [u8], start: usize, bits: u32, value: u32) {
    let byte = start / 8;
    let shift = start % 8;
    let span = (shift + bits as usize).div_ceil(8);
    let word = value << shift;
    for k in 0..span {
        code[byte + k] |= (word >> (8 * k)) as u8;
    }
}
