//! Self-describing tensor container.
//!
//! Layout: 8-byte magic `DIARCKPT`, `u32` format version, `u64` header length,
//! a JSON header (free-form `meta` plus an entry table of name, shape and
//! element offset), then every tensor's values as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::adam::AdamState;
use super::params::ParamSet;
use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DIARCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    entries: Vec<EntryHeader>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub entries: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(name, t)| {
                let e = EntryHeader {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body_start = 20 + header_len;
        if bytes.len() < body_start {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[20..body_start])?;
        let payload = &bytes[body_start..];
        let mut entries = Vec::with_capacity(header.entries.len());
        for e in header.entries {
            let n: usize = e.shape.iter().product();
            let (lo, hi) = (e.offset * 8, (e.offset + n) * 8);
            if hi > payload.len() {
                return Err(Error::Format(format!("entry {} out of bounds", e.name)));
            }
            let data = payload[lo..hi]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            meta: header.meta,
            entries,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn push_params(&mut self, prefix: &str, params: &ParamSet) {
        for (name, t) in params.iter() {
            self.push(format!("{prefix}{name}"), t.clone());
        }
    }

    /// Restores tensors named `prefix + name` for every name in `template`.
    pub fn load_params(&self, prefix: &str, template: &ParamSet) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, t) in template.iter() {
            let key = format!("{prefix}{name}");
            let stored = self
                .get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "{key}: checkpoint shape {:?}, model expects {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            out.insert(name, stored.clone())?;
        }
        Ok(out)
    }

    pub fn push_adam(&mut self, prefix: &str, params: &ParamSet, adam: &AdamState) {
        for ((name, m), v) in params.names().iter().zip(&adam.m).zip(&adam.v) {
            self.push(format!("{prefix}m/{name}"), m.clone());
            self.push(format!("{prefix}v/{name}"), v.clone());
        }
        let obj = serde_json::json!({
            "t": adam.t,
            "learning_rate": adam.learning_rate,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
        });
        if let serde_json::Value::Object(map) = &mut self.meta {
            map.insert(format!("{prefix}state"), obj);
        }
    }

    pub fn load_adam(&self, prefix: &str, params: &ParamSet) -> Result<AdamState> {
        let key = format!("{prefix}state");
        let s = self
            .meta
            .get(&key)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
        let num = |f: &str| {
            s.get(f)
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| Error::Format(format!("{key}.{f} missing")))
        };
        let mut state = AdamState::new(params, num("learning_rate")?);
        state.t = s
            .get("t")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Format(format!("{key}.t missing")))?;
        state.beta1 = num("beta1")?;
        state.beta2 = num("beta2")?;
        state.epsilon = num("epsilon")?;
        for (i, name) in params.names().iter().enumerate() {
            for (which, dst) in [("m", &mut state.m[i]), ("v", &mut state.v[i])] {
                let k = format!("{prefix}{which}/{name}");
                let t = self
                    .get(&k)
                    .ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")))?;
                *dst = t.clone();
            }
        }
        Ok(state)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_adam() {
        let mut p = ParamSet::new();
        p.insert("a.w", Tensor::from_rows(&[vec![1.5, -2.0]]).unwrap())
            .unwrap();
        p.insert("b", Tensor::scalar(f64::MIN_POSITIVE)).unwrap();
        let mut adam = AdamState::new(&p, 1e-3);
        adam.t = 7;
        adam.m[0].data_mut()[1] = 0.25;
        let mut c = Container::new(serde_json::json!({"step": 7}));
        c.push_params("param/", &p);
        c.push_adam("adam/", &p, &adam);
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.load_params("param/", &p).unwrap(), p);
        assert_eq!(back.load_adam("adam/", &p).unwrap(), adam);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        assert!(Container::from_bytes(b"NOTACKPT00000000000000").is_err());
        let mut bytes = Container::new(serde_json::json!({})).to_bytes().unwrap();
        bytes[8] = 9;
        assert!(matches!(Container::from_bytes(&bytes), Err(Error::Format(_))));
    }
}
