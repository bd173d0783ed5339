//! Checkpoint container: a JSON header followed by little-endian `f64` sections.
//!
//! Layout: `u64` LE header length, header JSON, payload. The header is an
//! object holding caller metadata plus a `"tensors"` list of
//! `{"name","shape","offset"}` entries, offsets counted in bytes from the
//! start of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct Section {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub header: Map<String, Value>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Archive {
    pub fn new(header: Map<String, Value>) -> Self {
        Self {
            header,
            tensors: BTreeMap::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("archive has no section {name:?}")))
    }

    pub fn field<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .get(key)
            .ok_or_else(|| Error::Lookup(format!("archive header has no field {key:?}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Data(format!("header field {key:?}: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = Vec::new();
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            sections.push(Section {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut header = self.header.clone();
        header.insert(
            "tensors".into(),
            serde_json::to_value(&sections).map_err(|e| Error::Internal(e.to_string()))?,
        );
        let text = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;
        let mut out = Vec::with_capacity(8 + text.len() + payload.len());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Data(reason) => Error::format(path, reason),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Data("archive shorter than its length prefix".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Data("archive header truncated".into()))?;
        let mut header: Map<String, Value> =
            serde_json::from_slice(body).map_err(|e| Error::Data(format!("archive header: {e}")))?;
        let sections: Vec<Section> = serde_json::from_value(header.remove("tensors").unwrap_or(Value::Array(vec![])))
            .map_err(|e| Error::Data(format!("archive section list: {e}")))?;
        let payload = &bytes[8 + hlen..];
        let mut tensors = BTreeMap::new();
        for s in sections {
            let n: usize = s.shape.iter().product();
            let start = s.offset as usize;
            let raw = payload
                .get(start..start + 8 * n)
                .ok_or_else(|| Error::Data(format!("section {:?} runs past end of payload", s.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(s.name, Tensor::new(s.shape, data)?);
        }
        Ok(Self { header, tensors })
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_vec(value).expect("config serialises");
    hex::encode(Sha256::digest(&text))
}
