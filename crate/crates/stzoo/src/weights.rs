//! Named-array weight archive (`.stzw`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"STZW" | u32 version | u32 count
//! count × ( u32 name_len | name (utf-8) | u32 ndim | ndim × u64 dim | numel × f32 )
//! ```
//!
//! Entries are written in name order. Pretrained backbones use torchvision
//! parameter names (`layer1.0.conv1.weight`, `bn1.running_mean`, ...).

use std::io::{Read, Write};
use std::path::Path;

use stzoo_core::graph::WeightMap;
use stzoo_core::Tensor;

use crate::error::{io_err, Result, StzooError};

pub const MAGIC: &[u8; 4] = b"STZW";
pub const VERSION: u32 = 1;

pub fn encode(map: &WeightMap<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(map.len() as u32).to_le_bytes());
    for (name, t) in map.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses an archive; on success returns the map and the bytes consumed.
pub fn decode(buf: &[u8]) -> std::result::Result<(WeightMap<f32>, usize), String> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err("not a weight archive (bad magic)".into());
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(format!("unsupported archive version {version}"));
    }
    let count = c.u32()?;
    let mut map = WeightMap::new();
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|e| format!("entry name: {e}"))?.to_string();
        let ndim = c.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(usize::try_from(c.u64()?).map_err(|_| format!("{name}: dimension overflows"))?);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| format!("{name}: size overflows"))?;
        let bytes = c.take(numel.checked_mul(4).ok_or_else(|| format!("{name}: size overflows"))?)?;
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        if map.get(&name).is_some() {
            return Err(format!("duplicate entry `{name}`"));
        }
        map.insert(name, Tensor::from_vec(&shape, data).map_err(|e| e.to_string())?);
    }
    Ok((map, c.pos))
}

pub fn save(map: &WeightMap<f32>, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&encode(map)).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<WeightMap<f32>> {
    let mut buf = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(io_err(path))?;
    let (map, used) = decode(&buf).map_err(|msg| StzooError::Format { path: path.into(), msg })?;
    if used != buf.len() {
        return Err(StzooError::Format { path: path.into(), msg: format!("{} trailing bytes", buf.len() - used) });
    }
    Ok(map)
}

/// Environment variable naming the directory of pretrained archives.
pub const WEIGHTS_ENV: &str = "STZOO_WEIGHTS";

/// File name of a backbone's pretrained archive, e.g. `resnet50.stzw`.
pub fn pretrained_file(backbone: stzoo_core::Backbone) -> String {
    format!("{}.stzw", backbone.name().to_ascii_lowercase())
}

/// Loads pretrained backbone weights from `explicit` or from the
/// `STZOO_WEIGHTS` directory.
pub fn load_pretrained(backbone: stzoo_core::Backbone, explicit: Option<&Path>) -> Result<WeightMap<f32>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = std::env::var_os(WEIGHTS_ENV).ok_or_else(|| {
                StzooError::Invalid(format!("ImageNet init needs --weights or {WEIGHTS_ENV} pointing at a directory with {}", pretrained_file(backbone)))
            })?;
            Path::new(&dir).join(pretrained_file(backbone))
        }
    };
    load(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_archive_is_rejected() {
        let mut map = WeightMap::new();
        map.insert("a", Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, -0.5]).unwrap());
        let bytes = encode(&map);
        assert_eq!(decode(&bytes).unwrap().0, map);
        for cut in [0, 3, 11, bytes.len() - 1] {
            assert!(decode(&bytes[..cut]).is_err());
        }
    }
}
