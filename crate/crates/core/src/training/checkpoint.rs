//! Versioned binary checkpoints.
//!
//! Layout:
//!
//! ```text
//! "HDTR1"                      5-byte magic / format version
//! u32 LE                       header length in bytes
//! header                       JSON: model config, step, tensor table (name, dtype, shape)
//! tensor data                  raw little-endian values, in table order
//! "HDTR1END"                   trailer
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub const MAGIC: &[u8; 5] = b"HDTR1";
const TRAILER: &[u8; 8] = b"HDTR1END";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub step: u64,
    /// Parameters keyed `generator.<name>` / `discriminator.<name>`.
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Tensors under `prefix.`, with the prefix stripped.
    pub fn section(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        let p = format!("{prefix}.");
        self.tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(&p).map(|k| (k.to_string(), v.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut payload = Vec::new();
        for (name, t) in &self.tensors {
            let t = t.flatten_all()?;
            let dtype = match t.dtype() {
                DType::F64 => {
                    for v in t.to_vec1::<f64>()? {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                    "f64"
                }
                _ => {
                    for v in t.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                    "f32"
                }
            };
            entries.push(TensorEntry {
                name: name.clone(),
                dtype: dtype.into(),
                shape: self.tensors[name].dims().to_vec(),
            });
        }
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            step: self.step,
            tensors: entries,
        })
        .map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;
        let mut out = Vec::with_capacity(header.len() + payload.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out.extend_from_slice(TRAILER);
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, device).map_err(|e| match e {
            Error::CheckpointCorrupt { reason, .. } => Error::CheckpointCorrupt {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let corrupt = |reason: String| Error::CheckpointCorrupt {
            path: Default::default(),
            reason,
        };
        if bytes.len() < MAGIC.len() {
            return Err(corrupt(format!("file too short ({} bytes)", bytes.len())));
        }
        let (magic, rest) = bytes.split_at(MAGIC.len());
        if magic != MAGIC {
            return Err(Error::CheckpointVersion {
                expected: String::from_utf8_lossy(MAGIC).into_owned(),
                found: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let mut cursor = Cursor { buf: rest, what: "header length" };
        let header_len = u32::from_le_bytes(cursor.take(4).map_err(corrupt)?.try_into().unwrap()) as usize;
        cursor.what = "header";
        let header: Header = serde_json::from_slice(cursor.take(header_len).map_err(corrupt)?)
            .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            cursor.what = "tensor data";
            let t = match entry.dtype.as_str() {
                "f32" => {
                    let raw = cursor.take(4 * n).map_err(corrupt)?;
                    let vals: Vec<f32> = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(vals, entry.shape.as_slice(), device)?
                }
                "f64" => {
                    let raw = cursor.take(8 * n).map_err(corrupt)?;
                    let vals: Vec<f64> = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    Tensor::from_vec(vals, entry.shape.as_slice(), device)?
                }
                other => return Err(corrupt(format!("unknown dtype {other:?} for {}", entry.name))),
            };
            tensors.insert(entry.name, t);
        }
        cursor.what = "trailer";
        if cursor.take(TRAILER.len()).map_err(corrupt)? != TRAILER {
            return Err(corrupt("bad trailer".into()));
        }
        if !cursor.buf.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", cursor.buf.len())));
        }
        header.model.validate()?;
        Ok(Self {
            model: header.model,
            step: header.step,
            tensors,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() < n {
            return Err(format!(
                "truncated while reading {}: need {n} bytes, {} left",
                self.what,
                self.buf.len()
            ));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
}
