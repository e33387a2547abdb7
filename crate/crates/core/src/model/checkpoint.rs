//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CTXFCKPT"
//! version    u32      currently 1
//! header_len u32      byte length of the JSON header
//! header     JSON     {"model": ModelConfig, "meta": {...},
//!                      "tensors": [{"name": str, "shape": [usize]}...]}
//! payload    f32 LE   every tensor in header order, row-major
//! ```

use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CTXFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Free-form training metadata (step, epoch, seeds, ...).
    pub meta: serde_json::Value,
    entries: Vec<TensorEntry>,
    data: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            meta: serde_json::Value::Object(Default::default()),
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        self.push_raw(name, t.dims().to_vec(), values);
        Ok(())
    }

    pub fn push_raw(&mut self, name: &str, shape: Vec<usize>, values: Vec<f32>) {
        if let Some(i) = self.entries.iter().position(|e| e.name == name) {
            self.entries[i].shape = shape;
            self.data[i] = values;
        } else {
            self.entries.push(TensorEntry {
                name: name.to_string(),
                shape,
            });
            self.data.push(values);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn raw(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .map(|i| (self.entries[i].shape.as_slice(), self.data[i].as_slice()))
    }

    pub fn tensor(&self, name: &str, device: &Device) -> Result<Option<Tensor>> {
        match self.raw(name) {
            Some((shape, values)) => Ok(Some(Tensor::from_slice(values, shape, device)?)),
            None => Ok(None),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            meta: self.meta.clone(),
            tensors: self.entries.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.data.iter().map(|d| d.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for values in &self.data {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |msg: &str| Error::format(origin, msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fail(&format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < hlen {
            return Err(fail("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| fail(&format!("bad header: {e}")))?;
        let mut cursor = &body[hlen..];
        let mut data = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n: usize = entry.shape.iter().product();
            if cursor.len() < n * 4 {
                return Err(fail(&format!("truncated payload for {}", entry.name)));
            }
            let values = cursor[..n * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor = &cursor[n * 4..];
            data.push(values);
        }
        if !cursor.is_empty() {
            return Err(fail("trailing bytes after payload"));
        }
        Ok(Self {
            model: header.model,
            meta: header.meta,
            entries: header.tensors,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, path)
    }
}
