//! `LFCK` tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    b"LFCK"
//! version  u32 (= 1)
//! count    u32
//! count × {
//!     name_len u32, name [u8; name_len] (UTF-8),
//!     rank u32, extents [u64; rank],
//!     payload [f32; product(extents)]
//! }
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, IoContext, Result};

const MAGIC: [u8; 4] = *b"LFCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(out: &mut W, entries: &[(String, Tensor)]) -> std::io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &e in t.shape() {
            out.write_all(&(e as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, entries).at(path)?;
    fs::write(path, buf).at(path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                expected: self.pos.saturating_add(n),
                actual: self.bytes.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Invalid(format!("checkpoint name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Invalid(format!("tensor `{name}` is too large")))?;
        let payload = r.take(numel.checked_mul(4).ok_or_else(|| Error::Invalid("tensor too large".into()))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok(entries)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    read_checkpoint(&fs::read(path).at(path)?)
}
