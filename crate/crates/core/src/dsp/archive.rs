//! `SSLF` spectral-stack archives.
//!
//! Layout (little-endian): magic `SSLF`, version `u16 = 1`, `n_records u32`,
//! then per record: id length `u32`, UTF-8 id, `3 x H x W` `f32` values,
//! label index `u32`. Extents are not stored; readers supply them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SpectralStack;
use crate::error::{Error, Result};

pub const STACK_MAGIC: &[u8; 4] = b"SSLF";
pub const STACK_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StackRecord {
    pub stack: SpectralStack,
    pub label: u32,
}

pub(crate) fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub(crate) fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_str(r: &mut impl Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f32>> {
    let mut buf = vec![0u8; 4 * n];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn expect_eof(r: &mut impl Read) -> std::io::Result<bool> {
    let mut probe = [0u8; 1];
    Ok(r.read(&mut probe)? == 0)
}

pub fn write_stack_archive(path: impl AsRef<Path>, records: &[StackRecord]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut body = || -> std::io::Result<()> {
        w.write_all(STACK_MAGIC)?;
        w.write_all(&STACK_VERSION.to_le_bytes())?;
        w.write_all(&(records.len() as u32).to_le_bytes())?;
        for rec in records {
            write_str(&mut w, rec.stack.source_id())?;
            for &v in rec.stack.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            w.write_all(&rec.label.to_le_bytes())?;
        }
        w.flush()
    };
    body().map_err(io)
}

pub fn read_stack_archive(path: impl AsRef<Path>, height: usize, width: usize) -> Result<Vec<StackRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let data_err = |what: String| Error::Data(format!("{}: {what}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| data_err(e.to_string()))?;
    if &magic != STACK_MAGIC {
        return Err(data_err("not an SSLF archive".into()));
    }
    let version = read_u16(&mut r).map_err(|e| data_err(e.to_string()))?;
    if version != STACK_VERSION {
        return Err(data_err(format!("unsupported SSLF version {version}")));
    }
    let n = read_u32(&mut r).map_err(|e| data_err(e.to_string()))? as usize;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let mut one = || -> std::io::Result<(String, Vec<f32>, u32)> {
            let id = read_str(&mut r)?;
            let values = read_f32s(&mut r, 3 * height * width)?;
            let label = read_u32(&mut r)?;
            Ok((id, values, label))
        };
        let (id, values, label) = one().map_err(|e| data_err(format!("record {i}: {e}")))?;
        let stack = SpectralStack::new(height, width, values.into_iter().map(f64::from).collect(), id)?;
        records.push(StackRecord { stack, label });
    }
    if !expect_eof(&mut r).map_err(|e| data_err(e.to_string()))? {
        return Err(data_err(format!(
            "trailing bytes after {n} records; were the stack extents {height}x{width} right?"
        )));
    }
    Ok(records)
}
