//! Checkpoints: a weight archive with the architecture spec embedded.
//!
//! Layout: `b"STZC" | u32 version | u32 spec_len | spec (TOML) | archive`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stzoo_core::graph::WeightMap;
use stzoo_core::{assemble, ArchSpec, AssembledModel, Init};

use crate::error::{io_err, Result, StzooError};
use crate::weights;

const MAGIC: &[u8; 4] = b"STZC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub weights: WeightMap<f32>,
}

impl Checkpoint {
    pub fn of(model: &AssembledModel<f32>) -> Self {
        Self { arch: model.arch, weights: model.params.to_weight_map() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let spec = toml::to_string(&Header { arch: self.arch }).map_err(|e| StzooError::Invalid(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.as_bytes());
        out.extend_from_slice(&weights::encode(&self.weights));
        std::fs::write(path, out).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(io_err(path))?;
        let bad = |msg: String| StzooError::Format { path: path.into(), msg };
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let spec = buf.get(12..12 + len).ok_or_else(|| bad("truncated spec".into()))?;
        let spec = std::str::from_utf8(spec).map_err(|e| bad(e.to_string()))?;
        let header: Header = toml::from_str(spec).map_err(|e| bad(e.to_string()))?;
        let rest = &buf[12 + len..];
        let (weights, used) = weights::decode(rest).map_err(bad)?;
        if used != rest.len() {
            return Err(bad(format!("{} trailing bytes", rest.len() - used)));
        }
        Ok(Self { arch: header.arch, weights })
    }

    /// Builds the model this checkpoint describes. With `requested` set, a
    /// different embedded spec is an error unless `force_spec`; weights are
    /// then loaded into the requested architecture, and names listed in
    /// `allowlist` (prefixes) may be missing or differ in shape.
    pub fn into_model(self, requested: Option<&ArchSpec>, force_spec: bool, allowlist: &[String]) -> Result<AssembledModel<f32>> {
        let arch = match requested {
            Some(r) if *r != self.arch => {
                if !force_spec {
                    return Err(StzooError::SpecMismatch { requested: describe(r), found: describe(&self.arch) });
                }
                *r
            }
            _ => self.arch,
        };
        Ok(assemble(&arch, Init::FromCheckpoint { weights: &self.weights, allowlist })?)
    }
}

fn describe(a: &ArchSpec) -> String {
    let name = a.canonical_name().unwrap_or_else(|_| format!("{}-{}", a.family, a.backbone));
    format!("{name} ({} frames, {} classes, placement {})", a.frames, a.num_classes, a.placement)
}
