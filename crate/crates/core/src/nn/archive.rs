//! Binary container for named tensors plus a JSON metadata header.
//!
//! Layout (little endian):
//!
//! ```text
//! magic      8 bytes  "TDARCHV\0"
//! version    u32
//! length     u64      payload byte count
//! payload    meta_len u32, meta JSON, count u32,
//!            count x (name_len u32, name, rows u32, cols u32, rows*cols f64)
//! digest     32 bytes SHA-256 of payload
//! ```
//!
//! Values are stored as raw IEEE-754 bits so a round trip is exact.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TDARCHV\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    /// Adds every parameter of `store` under `prefix/`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore) {
        for (name, t) in store.iter() {
            self.push(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::CheckpointShape(format!("missing tensor {name}")))?;
        Ok(self.tensors.swap_remove(pos).1)
    }

    /// Overwrites `store` from tensors saved with [`Archive::push_store`],
    /// validating every name and shape first.
    pub fn restore_store(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let mut loaded = Vec::with_capacity(store.len());
        for (name, expected) in store.iter() {
            let key = format!("{prefix}/{name}");
            let t = self
                .get(&key)
                .ok_or_else(|| Error::CheckpointShape(format!("missing tensor {key}")))?;
            if t.shape() != expected.shape() {
                return Err(Error::CheckpointShape(format!(
                    "{key}: expected {:?}, found {:?}",
                    expected.shape(),
                    t.shape()
                )));
            }
            loaded.push(t.clone());
        }
        let ids: Vec<_> = store.ids().collect();
        for (id, t) in ids.into_iter().zip(loaded) {
            *store.get_mut(id) = t;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut payload = Vec::new();
        payload.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        payload.extend_from_slice(&meta);
        payload.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            payload.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            payload.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut out = Vec::with_capacity(payload.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&Sha256::digest(&payload));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corruption { path: path.to_path_buf(), reason: reason.to_string() };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic or header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        if bytes.len() != 20 + len + 32 {
            return Err(corrupt("length mismatch (truncated or padded)"));
        }
        let payload = &bytes[20..20 + len];
        if Sha256::digest(payload).as_slice() != &bytes[20 + len..] {
            return Err(corrupt("digest mismatch"));
        }

        let mut r = Reader { buf: payload, pos: 0 };
        let meta_len = r.u32().ok_or_else(|| corrupt("meta length"))? as usize;
        let meta_bytes = r.bytes(meta_len).ok_or_else(|| corrupt("meta"))?;
        let meta = serde_json::from_slice(meta_bytes).map_err(|_| corrupt("meta json"))?;
        let count = r.u32().ok_or_else(|| corrupt("tensor count"))? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32().ok_or_else(|| corrupt("name length"))? as usize;
            let name = r.bytes(name_len).ok_or_else(|| corrupt("name"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt("name utf8"))?;
            let rows = r.u32().ok_or_else(|| corrupt("rows"))? as usize;
            let cols = r.u32().ok_or_else(|| corrupt("cols"))? as usize;
            let raw = r.bytes(rows * cols * 8).ok_or_else(|| corrupt("tensor data"))?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        if r.pos != payload.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}
