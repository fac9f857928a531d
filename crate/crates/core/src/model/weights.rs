//! FBIW weight archive.
//!
//! Little-endian layout, no padding anywhere:
//!
//! ```text
//! "FBIW"  version:u32 = 1  entry_count:u32
//! per entry:
//!   name_len:u32  name:[u8; name_len] (UTF-8)
//!   rank:u32  dims:[u32; rank]
//!   dtype:u8 (0 = f32)
//!   payload:[f32; product(dims)] row-major
//! ```

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: [u8; 4] = *b"FBIW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Named tensors in archive order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    entries: IndexMap<String, Tensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry; replacement keeps the original position.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.entries.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn load_weights(bytes: &[u8]) -> Result<WeightArchive> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4).map_err(|_| {
        let mut m = [0u8; 4];
        m[..bytes.len()].copy_from_slice(bytes);
        Error::BadMagic(m)
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cur.u32()?;
    let mut archive = WeightArchive::new();
    for _ in 0..count {
        let name_at = cur.pos;
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::MalformedArchive {
                offset: name_at + 4,
                message: "entry name is not valid UTF-8".into(),
            })?
            .to_string();
        if archive.get(&name).is_some() {
            return Err(Error::MalformedArchive {
                offset: name_at,
                message: format!("duplicate entry `{name}`"),
            });
        }
        let rank_at = cur.pos;
        let rank = cur.u32()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(Error::MalformedArchive {
                offset: rank_at,
                message: format!("rank {rank} of `{name}` outside 1..=4"),
            });
        }
        let dims = (0..rank)
            .map(|_| cur.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = Shape::new(dims).map_err(|e| Error::MalformedArchive {
            offset: rank_at,
            message: format!("`{name}`: {e}"),
        })?;
        let dtype_at = cur.pos;
        let dtype = cur.u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::MalformedArchive {
                offset: dtype_at,
                message: format!("unsupported dtype {dtype} for `{name}`"),
            });
        }
        let n = shape.numel();
        let payload_at = cur.pos;
        let nbytes = n.checked_mul(4).ok_or(Error::Truncated {
            offset: payload_at,
            needed: usize::MAX,
        })?;
        let payload = cur.take(nbytes)?;
        let mut data = Vec::with_capacity(n);
        for (k, c) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !v.is_finite() {
                return Err(Error::NonFiniteWeight {
                    entry: name,
                    offset: payload_at + 4 * k,
                });
            }
            data.push(v);
        }
        archive.insert(name, Tensor::from_parts(shape, data));
    }
    if cur.pos != bytes.len() {
        return Err(Error::MalformedArchive {
            offset: cur.pos,
            message: format!("{} trailing bytes after last entry", bytes.len() - cur.pos),
        });
    }
    Ok(archive)
}

pub fn save_weights(archive: &WeightArchive) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(archive.len() as u32).to_le_bytes());
    for (name, t) in archive.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DTYPE_F32);
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
