//! Versioned model container.
//!
//! ```text
//! magic       8 bytes   "HARCLMDL"
//! version     u32 LE
//! desc_len    u64 LE
//! descriptor  desc_len bytes of UTF-8 JSON (kind, config, layer list)
//! n_blobs     u32 LE
//! per blob:   name_len u32, name bytes, ndim u32, dims u64 × ndim,
//!             prod(dims) × f32 LE
//! ```
//!
//! Nothing may follow the last blob.

use super::{ParamSpec, ParamStore};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const ARTIFACT_MAGIC: &[u8; 8] = b"HARCLMDL";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: String,
    pub params: Vec<ParamSpec>,
}

/// Groups parameter specs by their `layer.` prefix.
pub(crate) fn layer_list(store: &ParamStore, kind_of: impl Fn(&str) -> &'static str) -> Vec<LayerDesc> {
    let mut layers: Vec<LayerDesc> = Vec::new();
    for spec in store.specs() {
        let layer = spec.name.split('.').next().unwrap_or(&spec.name).to_string();
        match layers.last_mut() {
            Some(l) if l.name == layer => l.params.push(spec.clone()),
            _ => layers.push(LayerDesc {
                kind: kind_of(&layer).to_string(),
                name: layer,
                params: vec![spec.clone()],
            }),
        }
    }
    layers
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub descriptor: serde_json::Value,
    pub blobs: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Artifact {
    /// Copies blob values into a freshly built store after checking that names
    /// and shapes line up exactly.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.blobs.len() != store.specs().len() {
            return Err(Error::CorruptArtifact(format!(
                "{} parameter blobs, model expects {}",
                self.blobs.len(),
                store.specs().len()
            )));
        }
        for i in 0..self.blobs.len() {
            let (name, shape, data) = &self.blobs[i];
            let spec = &store.specs()[i];
            if name != &spec.name || shape != &spec.shape {
                return Err(Error::CorruptArtifact(format!(
                    "blob {name} {shape:?} does not match {} {:?}",
                    spec.name, spec.shape
                )));
            }
            for (dst, src) in store.tensor_mut(i).iter_mut().zip(data) {
                *dst = *src as f64;
            }
        }
        Ok(())
    }
}

pub fn encode_artifact(descriptor: &serde_json::Value, store: &ParamStore) -> Vec<u8> {
    let desc = serde_json::to_vec(descriptor).expect("descriptor serializes");
    let mut out = Vec::with_capacity(32 + desc.len() + store.len() * 4);
    out.extend_from_slice(ARTIFACT_MAGIC);
    out.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    out.extend_from_slice(&(desc.len() as u64).to_le_bytes());
    out.extend_from_slice(&desc);
    out.extend_from_slice(&(store.specs().len() as u32).to_le_bytes());
    for (i, spec) in store.specs().iter().enumerate() {
        out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&(spec.shape.len() as u32).to_le_bytes());
        for &d in &spec.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in store.tensor(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_artifact(path: &Path, descriptor: &serde_json::Value, store: &ParamStore) -> Result<()> {
    std::fs::write(path, encode_artifact(descriptor, store))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptArtifact(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::CorruptArtifact("length overflow".into()))
    }
}

pub fn decode_artifact(buf: &[u8]) -> Result<Artifact> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != ARTIFACT_MAGIC {
        return Err(Error::CorruptArtifact("bad magic".into()));
    }
    let version = c.u32()?;
    if version != ARTIFACT_VERSION {
        return Err(Error::VersionMismatch { expected: ARTIFACT_VERSION, found: version });
    }
    let desc_len = c.len()?;
    let descriptor: serde_json::Value = serde_json::from_slice(c.take(desc_len)?)
        .map_err(|e| Error::CorruptArtifact(format!("descriptor: {e}")))?;
    let n_blobs = c.u32()? as usize;
    let mut blobs = Vec::with_capacity(n_blobs.min(1024));
    for _ in 0..n_blobs {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptArtifact("blob name is not UTF-8".into()))?;
        let ndim = c.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(c.len()?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::CorruptArtifact("blob size overflow".into()))?;
        let data = c
            .take(count)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        blobs.push((name, shape, data));
    }
    if c.pos != buf.len() {
        return Err(Error::CorruptArtifact(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(Artifact { descriptor, blobs })
}

pub fn read_artifact(path: &Path) -> Result<Artifact> {
    decode_artifact(&std::fs::read(path)?)
}
