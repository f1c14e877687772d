//! Binary checkpoints: a JSON header echoing the configuration followed by
//! named little-endian `f64` tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "IGRECCKP"
//! version    u32      1
//! header_len u64
//! header     header_len bytes of UTF-8 JSON:
//!            {"config": {...}, "dataset_fingerprint": "..." | null}
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rows u64, cols u64, rows*cols f64 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ParamSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"IGRECCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    dataset_fingerprint: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub dataset_fingerprint: Option<String>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn from_model(model: &Model, dataset_fingerprint: Option<String>) -> Self {
        Self { config: model.config().clone(), dataset_fingerprint, params: model.params().clone() }
    }

    pub fn to_model(&self) -> Result<Model> {
        Model::from_params(&self.config, self.params.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            dataset_fingerprint: self.dataset_fingerprint.clone(),
        })
        .expect("header serialises");
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(r)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(take(r)?) as usize;
        let header: Header = serde_json::from_slice(take_slice(r, header_len)?)?;
        header.config.validate()?;
        let count = u32::from_le_bytes(take(r)?) as usize;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(take(r)?) as usize;
            let name = std::str::from_utf8(take_slice(r, name_len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = u64::from_le_bytes(take(r)?) as usize;
            let cols = u64::from_le_bytes(take(r)?) as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint(format!("tensor {name} too large")))?;
            let raw = take_slice(r, n.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            params.push(name, Tensor::from_vec(rows, cols, data)?);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { config: header.config, dataset_fingerprint: header.dataset_fingerprint, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(r: &mut &[u8], out: &mut [u8]) -> Result<()> {
    let s = take_slice(r, out.len())?;
    out.copy_from_slice(s);
    Ok(())
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn take_slice<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}
