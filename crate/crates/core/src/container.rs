//! Binary containers for trained stages and datasets.
//!
//! Both containers share one named-tensor record layout, all integers and
//! reals little-endian:
//!
//! ```text
//! record     := name_len:u32  name:utf8[name_len]  rank:u32  dims:u32[rank]  values:f64[prod(dims)]
//! ```
//!
//! Checkpoints (`.lclb`) put the records first and a JSON metadata trailer
//! last:
//!
//! ```text
//! "LCLB"  version:u32  count:u32  record[count]  meta_len:u64  meta:json[meta_len]
//! ```
//!
//! Datasets (`.lcld`) lead with a JSON manifest so the counts can be read
//! before the payload:
//!
//! ```text
//! "LCLD"  version:u32  manifest_len:u64  manifest:json  count:u32  record[count]
//! ```
//!
//! Checkpoint metadata carries `params_digest` (see [`params_digest`]) and
//! `content_digest`, a SHA-256 over the parameter digest and the canonical
//! metadata JSON. Loading recomputes both and refuses any mismatch, so a
//! tampered field is detected even when the tensors are intact.

use std::path::Path;

use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LCLB";
pub const DATASET_MAGIC: &[u8; 4] = b"LCLD";
pub const FORMAT_VERSION: u32 = 1;

/// SHA-256 over the canonical serialization of a parameter set: every
/// tensor in insertion order as a record (name, rank, dims, values). Equal
/// sets have equal digests; any bit flip changes it.
pub fn params_digest(p: &ParamSet) -> String {
    let mut h = Sha256::new();
    let mut buf = Vec::new();
    for e in p.iter() {
        buf.clear();
        encode_record(&mut buf, &e.name, &e.tensor);
        h.update(&buf);
    }
    hex::encode(h.finalize())
}

/// SHA-256 of a byte string, hex encoded.
pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(bytes_digest(&bytes))
}

pub(crate) fn encode_record(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bounds-checked reader over a byte slice.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], section: &'static str) -> Self {
        Cursor {
            bytes,
            pos: 0,
            section,
        }
    }

    pub fn section(&mut self, section: &'static str) {
        self.section = section;
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.section, msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    pub fn expect_version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(self.err(format!(
                "unsupported format version {v} (this build reads {FORMAT_VERSION})"
            )));
        }
        Ok(())
    }

    pub fn record(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(name_len)?)
            .map_err(|_| self.err("record name is not UTF-8"))?
            .to_string();
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(self.err(format!("record `{name}` has implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.remaining()))
            .ok_or_else(|| self.err(format!("record `{name}` dims {dims:?} exceed the file")))?;
        let raw = self.take(count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| self.err(e.to_string()))?;
        Ok((name, t))
    }

    pub fn json(&mut self, len: usize) -> Result<Value> {
        let raw = self.take(len)?;
        serde_json::from_slice(raw).map_err(|e| self.err(format!("invalid JSON: {e}")))
    }
}

/// A trained stage: one parameter set plus free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: String,
    pub params: ParamSet,
    /// Caller-supplied metadata (config echo, seeds, frozen digests...).
    pub metadata: Map<String, Value>,
}

impl Checkpoint {
    pub fn new(stage: &str, params: ParamSet) -> Self {
        Checkpoint {
            stage: stage.to_string(),
            params,
            metadata: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    fn trailer(&self) -> Map<String, Value> {
        let mut m = self.metadata.clone();
        m.insert("stage".into(), Value::String(self.stage.clone()));
        m.insert("params_digest".into(), Value::String(params_digest(&self.params)));
        let frozen: Vec<Value> = self
            .params
            .iter()
            .filter(|e| !e.trainable)
            .map(|e| Value::String(e.name.clone()))
            .collect();
        m.insert("frozen_tensors".into(), Value::Array(frozen));
        m.remove("content_digest");
        let digest = content_digest(&m);
        m.insert("content_digest".into(), Value::String(digest));
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for e in self.params.iter() {
            encode_record(&mut out, &e.name, &e.tensor);
        }
        let meta = serde_json::to_vec(&Value::Object(self.trailer())).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes, "checkpoint header");
        c.expect_magic(CHECKPOINT_MAGIC)?;
        c.expect_version()?;
        let count = c.u32()? as usize;
        c.section("checkpoint records");
        let mut records = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            records.push(c.record()?);
        }
        c.section("checkpoint metadata");
        let len = c.u64()? as usize;
        let meta = match c.json(len)? {
            Value::Object(m) => m,
            _ => return Err(Error::format("checkpoint metadata", "trailer is not a JSON object")),
        };
        if c.remaining() != 0 {
            return Err(Error::format("checkpoint metadata", "trailing bytes after metadata"));
        }

        let mut body = meta.clone();
        let stored = body
            .remove("content_digest")
            .and_then(|v| v.as_str().map(str::to_string))
            .ok_or_else(|| Error::format("checkpoint metadata", "missing content_digest"))?;
        if content_digest(&body) != stored {
            return Err(Error::Integrity("checkpoint metadata does not match its content digest".into()));
        }
        let frozen: Vec<String> = body
            .get("frozen_tensors")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        let mut params = ParamSet::new();
        for (name, t) in records {
            let trainable = !frozen.contains(&name);
            params
                .insert(&name, t, trainable)
                .map_err(|e| Error::format("checkpoint records", e.to_string()))?;
        }
        let recorded = body.get("params_digest").and_then(Value::as_str).unwrap_or_default();
        if recorded != params_digest(&params) {
            return Err(Error::Integrity(
                "checkpoint tensors do not match the recorded parameter digest".into(),
            ));
        }
        let stage = body
            .get("stage")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::format("checkpoint metadata", "missing stage name"))?
            .to_string();
        for k in ["stage", "params_digest", "frozen_tensors"] {
            body.remove(k);
        }
        Ok(Checkpoint {
            stage,
            params,
            metadata: body,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    pub fn params_digest(&self) -> String {
        params_digest(&self.params)
    }
}

fn content_digest(meta: &Map<String, Value>) -> String {
    // serde_json's map is ordered by key, so this encoding is canonical.
    let canonical = serde_json::to_vec(meta).expect("metadata serializes");
    bytes_digest(&canonical)
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serializes a dataset-style container.
pub(crate) fn encode_dataset(manifest: &Value, records: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let m = serde_json::to_vec(manifest).expect("manifest serializes");
    out.extend_from_slice(&(m.len() as u64).to_le_bytes());
    out.extend_from_slice(&m);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for (name, t) in records {
        encode_record(&mut out, name, t);
    }
    out
}

pub(crate) fn decode_dataset(bytes: &[u8]) -> Result<(Value, Vec<(String, Tensor)>)> {
    let mut c = Cursor::new(bytes, "dataset header");
    c.expect_magic(DATASET_MAGIC)?;
    c.expect_version()?;
    c.section("dataset manifest");
    let len = c.u64()? as usize;
    let manifest = c.json(len)?;
    c.section("dataset records");
    let count = c.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        records.push(c.record()?);
    }
    if c.remaining() != 0 {
        return Err(Error::format("dataset records", "trailing bytes after last record"));
    }
    Ok((manifest, records))
}
