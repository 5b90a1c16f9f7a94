//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "VTCKPT\0\0"
//! version    u32      = 1
//! meta_len   u64      length of the UTF-8 metadata blob that follows
//! meta       bytes    free-form (the pipeline stores JSON here)
//! count      u64      number of parameters
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   frozen   u8 (0 or 1)
//!   rank     u32, extents u64 × rank
//!   values   f64 × product(extents), IEEE-754 bit patterns
//! ```
//!
//! Values are stored as raw bit patterns, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VTCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(w: &mut W, store: &ParamStore, meta: &str) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for p in store.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&[p.frozen as u8])?;
        w.write_all(&(p.value.rank() as u32).to_le_bytes())?;
        for &e in p.value.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format("checkpoint", format!("truncated file: {e}")))?;
    Ok(buf)
}

fn take_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(take(r)?))
}

fn take_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(take(r)?))
}

fn take_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format("checkpoint", format!("truncated file: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::format("checkpoint", "non-UTF-8 string"))
}

/// Returns the parameters and the metadata blob.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(ParamStore, String)> {
    if &take::<8, _>(r)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let version = take_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let meta_len = take_u64(r)? as usize;
    let meta = take_string(r, meta_len)?;
    let count = take_u64(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = take_u32(r)? as usize;
        let name = take_string(r, name_len)?;
        let frozen = take::<1, _>(r)?[0] != 0;
        let rank = take_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| take_u64(r).map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| take_u64(r).map(f64::from_bits))
            .collect::<Result<Vec<_>>>()?;
        store.insert(name.clone(), Tensor::new(shape, data)?)?;
        store.get_mut(&name).expect("just inserted").frozen = frozen;
    }
    Ok((store, meta))
}

pub fn save(path: &Path, store: &ParamStore, meta: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, store, meta)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, String)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
