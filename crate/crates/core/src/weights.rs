//! `MMWS` weight container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MMWS"  u32 version (=1)  u32 entry_count
//! entry*: u16 name_len, name (UTF-8), u8 ndim, u64 dims[ndim], u64 offset
//! zero padding up to a multiple of 64 bytes from the file start
//! payload: f32 values; entry offsets are relative to the payload start
//! ```
//!
//! Entries are stored in increasing offset order, back to back, and cover the
//! payload exactly.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::HasParams;

pub const MAGIC: &[u8; 4] = b"MMWS";
pub const VERSION: u32 = 1;
pub const PAYLOAD_ALIGN: usize = 64;
/// Missing-name errors list at most this many names.
pub const MAX_LISTED_NAMES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Bytes from the payload start.
    pub offset: u64,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    pub entries: Vec<ManifestEntry>,
    pub payload: Vec<f32>,
}

impl WeightStore {
    pub fn from_params<P: HasParams + ?Sized>(model: &P) -> Result<Self> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        model.visit_params("", &mut |p| {
            entries.push(ManifestEntry {
                name: p.name,
                shape: p.shape,
                offset: (payload.len() * 4) as u64,
            });
            payload.extend_from_slice(p.data);
        });
        let store = Self { entries, payload };
        store.check_names()?;
        Ok(store)
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for e in &self.entries {
            if e.name.len() > u16::MAX as usize {
                return Err(Error::WeightFormat(format!("name too long: {}...", &e.name[..32])));
            }
            if e.shape.len() > u8::MAX as usize {
                return Err(Error::WeightFormat(format!("{}: too many dims", e.name)));
            }
            if seen.insert(e.name.as_str(), ()).is_some() {
                return Err(Error::WeightFormat(format!("duplicate name {}", e.name)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<(&ManifestEntry, &[f32])> {
        let e = self.entries.iter().find(|e| e.name == name)?;
        let start = e.offset as usize / 4;
        Some((e, &self.payload[start..start + e.numel()]))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&e.offset.to_le_bytes());
        }
        out.resize(out.len().next_multiple_of(PAYLOAD_ALIGN), 0);
        out.reserve(self.payload.len() * 4);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::WeightFormat("bad magic, expected MMWS".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::WeightFormat("entry name is not UTF-8".into()))?
                .to_string();
            let ndim = r.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let offset = r.u64()?;
            entries.push(ManifestEntry { name, shape, offset });
        }
        let payload_start = r.pos.next_multiple_of(PAYLOAD_ALIGN);
        if payload_start > bytes.len() {
            return Err(Error::WeightFormat("truncated before payload".into()));
        }
        let payload_bytes = &bytes[payload_start..];
        let mut expected = 0u64;
        for e in &entries {
            if e.offset != expected {
                return Err(Error::WeightFormat(format!(
                    "{}: offset {} breaks contiguous layout (expected {expected})",
                    e.name, e.offset
                )));
            }
            let size = e
                .shape
                .iter()
                .try_fold(4u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| Error::WeightFormat(format!("{}: size overflows", e.name)))?;
            expected += size;
        }
        if (payload_bytes.len() as u64) < expected {
            return Err(Error::WeightFormat(format!(
                "truncated payload: {} bytes, manifest needs {expected}",
                payload_bytes.len()
            )));
        }
        if payload_bytes.len() as u64 > expected {
            return Err(Error::WeightFormat(format!(
                "{} trailing bytes after payload",
                payload_bytes.len() as u64 - expected
            )));
        }
        let payload = payload_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let store = Self { entries, payload };
        store.check_names()?;
        Ok(store)
    }

    /// Copies every parameter of `model` from the store. Nothing is written
    /// unless all names and shapes agree.
    pub fn apply<P: HasParams + ?Sized>(&self, model: &mut P) -> Result<()> {
        let index: HashMap<&str, &ManifestEntry> = self.entries.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut missing = Vec::new();
        let mut wanted = HashMap::new();
        let mut shape_err = None;
        model.visit_params("", &mut |p| match index.get(p.name.as_str()) {
            None => missing.push(p.name),
            Some(e) => {
                if e.shape != p.shape && shape_err.is_none() {
                    shape_err = Some(Error::ParamShape {
                        name: p.name.clone(),
                        expected: p.shape.clone(),
                        actual: e.shape.clone(),
                    });
                }
                wanted.insert(p.name, ());
            }
        });
        if !missing.is_empty() {
            return Err(Error::MissingParams {
                count: missing.len(),
                first: missing.into_iter().take(MAX_LISTED_NAMES).collect(),
            });
        }
        if let Some(e) = shape_err {
            return Err(e);
        }
        let extra: Vec<String> = self
            .entries
            .iter()
            .filter(|e| !wanted.contains_key(&e.name))
            .map(|e| e.name.clone())
            .collect();
        if !extra.is_empty() {
            return Err(Error::UnexpectedParams {
                count: extra.len(),
                first: extra.into_iter().take(MAX_LISTED_NAMES).collect(),
            });
        }
        model.visit_params_mut("", &mut |p| {
            let e = index[p.name.as_str()];
            let start = e.offset as usize / 4;
            p.data.copy_from_slice(&self.payload[start..start + e.numel()]);
        });
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::WeightFormat(format!("truncated manifest at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_weights<P: HasParams + ?Sized>(model: &P, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, WeightStore::from_params(model)?.to_bytes())?;
    Ok(())
}

pub fn load_weights<P: HasParams + ?Sized>(path: impl AsRef<Path>, model: &mut P) -> Result<()> {
    let bytes = std::fs::read(path)?;
    WeightStore::from_bytes(&bytes)?.apply(model)
}
