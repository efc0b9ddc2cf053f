//! `.fvecs`, `.bvecs` and `.ivecs` files: each record is a little-endian
//! `i32` dimension followed by that many `f32`, `u8` or `i32` values.
//!
//! Readers check the whole file (sizes and every record header) before the
//! output is allocated.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecsKind {
    F32,
    U8,
    I32,
}

impl VecsKind {
    fn elem_size(self) -> usize {
        match self {
            VecsKind::U8 => 1,
            _ => 4,
        }
    }

    /// From a file extension: `fvecs`, `bvecs` or `ivecs`.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "fvecs" => Some(VecsKind::F32),
            "bvecs" => Some(VecsKind::U8),
            "ivecs" => Some(VecsKind::I32),
            _ => None,
        }
    }
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::MalformedVecs(format!("{}: {msg}", path.display()))
}

/// Validates the file and returns `(rows, dim)`, considering at most `limit`
/// records.
fn scan(path: &Path, kind: VecsKind, limit: Option<usize>) -> Result<(usize, usize)> {
    let len = std::fs::metadata(path)?.len();
    let mut r = BufReader::with_capacity(1 << 16, File::open(path)?);
    if len == 0 {
        return Ok((0, 0));
    }
    if len < 4 {
        return Err(bad(path, "truncated header"));
    }
    let mut h = [0u8; 4];
    r.read_exact(&mut h)?;
    let d = i32::from_le_bytes(h);
    if d <= 0 {
        return Err(bad(path, format!("dimension {d} must be positive")));
    }
    let d = d as usize;
    let record = 4 + d as u64 * kind.elem_size() as u64;
    let whole = len / record;
    let rows = match limit {
        Some(l) => {
            if (l as u64) > whole {
                return Err(bad(
                    path,
                    format!("{l} records requested, file holds {whole}"),
                ));
            }
            l
        }
        None => {
            if len % record != 0 {
                return Err(bad(
                    path,
                    format!("size {len} is not a multiple of the record size {record}"),
                ));
            }
            whole as usize
        }
    };
    r.seek(SeekFrom::Start(0))?;
    for i in 0..rows {
        r.read_exact(&mut h)?;
        let di = i32::from_le_bytes(h);
        if di as i64 != d as i64 {
            return Err(bad(
                path,
                format!("record {i} has dimension {di}, expected {d}"),
            ));
        }
        r.seek_relative(record as i64 - 4)?;
    }
    Ok((rows, d))
}

fn read_payload(
    path: &Path,
    kind: VecsKind,
    rows: usize,
    d: usize,
    mut sink: impl FnMut(&[u8]),
) -> Result<()> {
    let mut r = BufReader::with_capacity(1 << 16, File::open(path)?);
    let mut buf = vec![0u8; d * kind.elem_size()];
    let mut h = [0u8; 4];
    for _ in 0..rows {
        r.read_exact(&mut h)?;
        r.read_exact(&mut buf)?;
        sink(&buf);
    }
    Ok(())
}

/// Reads `.fvecs` (or `.bvecs`, widened to `f32`) into a matrix.
pub fn read_vectors(
    path: impl AsRef<Path>,
    kind: VecsKind,
    limit: Option<usize>,
) -> Result<DenseMatrix> {
    let path = path.as_ref();
    if kind == VecsKind::I32 {
        return Err(bad(path, "integer files hold id tables, not vectors"));
    }
    let (rows, d) = scan(path, kind, limit)?;
    let mut data = Vec::with_capacity(rows * d);
    read_payload(path, kind, rows, d, |buf| match kind {
        VecsKind::U8 => data.extend(buf.iter().map(|&b| b as f32)),
        _ => data.extend(
            buf.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        ),
    })?;
    // DenseMatrix::new rejects non-finite values
    DenseMatrix::new(rows, d, data).map_err(|e| bad(path, e))
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_vectors(path, VecsKind::F32, None)
}

pub fn read_bvecs(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    read_vectors(path, VecsKind::U8, None)
}

/// Reads an `.ivecs` table as `(rows, dim, values)`.
pub fn read_ivecs(
    path: impl AsRef<Path>,
    limit: Option<usize>,
) -> Result<(usize, usize, Vec<i32>)> {
    let path = path.as_ref();
    let (rows, d) = scan(path, VecsKind::I32, limit)?;
    let mut data = Vec::with_capacity(rows * d);
    read_payload(path, VecsKind::I32, rows, d, |buf| {
        data.extend(
            buf.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap())),
        )
    })?;
    Ok((rows, d, data))
}

pub fn write_fvecs(path: impl AsRef<Path>, x: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let d = (x.dim() as i32).to_le_bytes();
    for row in x.iter_rows() {
        w.write_all(&d)?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `u8` vectors; every value must be an integer in `0..=255`.
pub fn write_bvecs(path: impl AsRef<Path>, x: &DenseMatrix) -> Result<()> {
    if let Some(v) = x
        .as_slice()
        .iter()
        .find(|v| !(0.0..=255.0).contains(*v) || v.fract() != 0.0)
    {
        return Err(Error::InvalidParameter(format!("{v} is not a byte value")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let d = (x.dim() as i32).to_le_bytes();
    for row in x.iter_rows() {
        w.write_all(&d)?;
        w.write_all(&row.iter().map(|&v| v as u8).collect::<Vec<_>>())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ivecs(path: impl AsRef<Path>, dim: usize, values: &[i32]) -> Result<()> {
    if dim == 0 || !values.len().is_multiple_of(dim) {
        return Err(Error::InvalidParameter(
            "ivecs table is not rectangular".into(),
        ));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let d = (dim as i32).to_le_bytes();
    for row in values.chunks_exact(dim) {
        w.write_all(&d)?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gaussian;

    #[test]
    fn minimal_fvecs_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.fvecs");
        let mut bytes = 2i32.to_le_bytes().to_vec();
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        let x = read_fvecs(&p).unwrap();
        assert_eq!((x.rows(), x.dim()), (1, 2));
        assert_eq!(x.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let x = gaussian(100, 96, 1);
        let p = dir.path().join("x.fvecs");
        write_fvecs(&p, &x).unwrap();
        assert_eq!(read_fvecs(&p).unwrap(), x);
        assert_eq!(
            read_vectors(&p, VecsKind::F32, Some(7)).unwrap(),
            x.slice_rows(0..7)
        );

        let b = DenseMatrix::from_rows(&[[0.0f32, 255.0, 7.0]]).unwrap();
        let pb = dir.path().join("b.bvecs");
        write_bvecs(&pb, &b).unwrap();
        let back = read_bvecs(&pb).unwrap();
        assert_eq!(back.row(0)[1], 255.0);
        assert_eq!(back, b);

        let pi = dir.path().join("g.ivecs");
        write_ivecs(&pi, 2, &[1, -2, 3, 4]).unwrap();
        assert_eq!(read_ivecs(&pi, None).unwrap(), (2, 2, vec![1, -2, 3, 4]));
        assert_eq!(VecsKind::from_path(&pi), Some(VecsKind::I32));
    }

    #[test]
    fn malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.fvecs");
        let rec = |d: i32, n: usize| {
            let mut v = d.to_le_bytes().to_vec();
            v.extend(std::iter::repeat_n(0u8, 4 * n));
            v
        };
        // inconsistent dimension
        let mut bytes = rec(2, 2);
        bytes.extend(rec(3, 1));
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_fvecs(&p), Err(Error::MalformedVecs(_))));
        // truncated record
        let mut bytes = rec(2, 2);
        bytes.extend(rec(2, 1));
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_fvecs(&p), Err(Error::MalformedVecs(_))));
        // non-positive dimension
        std::fs::write(&p, rec(0, 0)).unwrap();
        assert!(matches!(read_fvecs(&p), Err(Error::MalformedVecs(_))));
        std::fs::write(&p, rec(-4, 0)).unwrap();
        assert!(matches!(read_fvecs(&p), Err(Error::MalformedVecs(_))));
        // NaN payload
        let mut bytes = 1i32.to_le_bytes().to_vec();
        bytes.extend(f32::NAN.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_fvecs(&p).is_err());
        // too many requested rows
        std::fs::write(&p, rec(2, 2)).unwrap();
        assert!(read_vectors(&p, VecsKind::F32, Some(2)).is_err());
    }
}
