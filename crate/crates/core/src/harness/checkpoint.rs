//! Versioned binary checkpoint container.
//!
//! Layout: the 8-byte magic `SSSPCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header (config
//! snapshot, step counter, tensor index with byte offsets into the data
//! section), then the raw little-endian tensor data in index order.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

pub const MAGIC: &[u8; 8] = b"SSSPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    step: u64,
    config: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Little-endian element bytes.
    pub bytes: Vec<u8>,
}

impl TensorData {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let bytes = match t.dtype() {
            DType::F32 => t.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            DType::F64 => t.flatten_all()?.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(Self { dtype: t.dtype(), shape: t.dims().to_vec(), bytes })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let n: usize = self.shape.iter().product();
        let t = match self.dtype {
            DType::F32 => {
                let v: Vec<f32> = self.bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                check_len(v.len(), n)?;
                Tensor::from_vec(v, self.shape.as_slice(), device)?
            }
            DType::F64 => {
                let v: Vec<f64> = self.bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
                check_len(v.len(), n)?;
                Tensor::from_vec(v, self.shape.as_slice(), device)?
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
        };
        Ok(t)
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Checkpoint(format!("tensor holds {got} values, shape needs {want}")));
    }
    Ok(())
}

fn dtype_name(d: DType) -> &'static str {
    match d {
        DType::F64 => "f64",
        _ => "f32",
    }
}

fn parse_dtype(s: &str) -> Result<DType> {
    match s {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unknown dtype {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub step: u64,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value, step: u64) -> Self {
        Self { version: FORMAT_VERSION, step, config, tensors: BTreeMap::new() }
    }

    /// Snapshot of every parameter whose name starts with one of `prefixes`
    /// (all parameters when `prefixes` is empty).
    pub fn from_store(store: &ParamStore, prefixes: &[&str], config: serde_json::Value, step: u64) -> Result<Self> {
        let mut ck = Self::new(config, step);
        let vars = if prefixes.is_empty() { store.all() } else { store.vars_with_prefix(prefixes) };
        for (name, var) in vars {
            ck.tensors.insert(name, TensorData::from_tensor(var.as_tensor())?);
        }
        Ok(ck)
    }

    /// Writes the checkpoint's tensors into `store`, converting to its dtype.
    /// Names absent from the store are created.
    pub fn load_into(&self, store: &ParamStore) -> Result<()> {
        for (name, data) in &self.tensors {
            let t = data.to_tensor(store.device())?.to_dtype(store.dtype())?;
            store.insert(name, &t)?;
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorData> {
        self.tensors.get(name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, data) in &self.tensors {
            entries.push(Entry {
                name: name.clone(),
                dtype: dtype_name(data.dtype).into(),
                shape: data.shape.clone(),
                offset,
                len: data.bytes.len() as u64,
            });
            offset += data.bytes.len() as u64;
        }
        let header = Header { version: self.version, step: self.step, config: self.config.clone(), tensors: entries };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for data in self.tensors.values() {
            out.extend_from_slice(&data.bytes);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..body])?;
        if header.version != version {
            return Err(bad("header version disagrees with preamble"));
        }
        let data = &bytes[body..];
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let (start, len) = (e.offset as usize, e.len as usize);
            let end = start.checked_add(len).filter(|&x| x <= data.len()).ok_or_else(|| bad("truncated data"))?;
            let td = TensorData { dtype: parse_dtype(&e.dtype)?, shape: e.shape, bytes: data[start..end].to_vec() };
            let width = if td.dtype == DType::F64 { 8 } else { 4 };
            check_len(len / width, td.shape.iter().product())?;
            tensors.insert(e.name, td);
        }
        Ok(Self { version, step: header.step, config: header.config, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn sample() -> Checkpoint {
        let store = ParamStore::new(DType::F32, 3);
        let root = store.root();
        root.pp("vq").get("codebook", (4, 3), Init::Normal { std: 1.0 }).unwrap();
        root.pp("generator.backbone").get("w", (2, 2, 3), Init::Uniform { lo: -1.0, hi: 1.0 }).unwrap();
        Checkpoint::from_store(&store, &[], serde_json::json!({"stage": "vq", "lr": 0.0002}), 7).unwrap()
    }

    #[test]
    fn save_load_save_identical() {
        let ck = sample();
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), a);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        ck.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), a);
    }

    #[test]
    fn rejects_damaged_input() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(b"garbage").is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(Checkpoint::from_bytes(&v).is_err());
    }

    #[test]
    fn load_into_restores_values() {
        let ck = sample();
        let store = ParamStore::new(DType::F32, 99);
        ck.load_into(&store).unwrap();
        let t = store.get("vq.codebook").unwrap();
        assert_eq!(TensorData::from_tensor(t.as_tensor()).unwrap(), ck.tensors["vq.codebook"]);
    }
}
