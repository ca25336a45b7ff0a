//! Versioned binary checkpoints.
//!
//! Layout: `DSQCKPT\0`, format version (u32 LE), header length (u64 LE),
//! a JSON header, raw little-endian tensor data in the model dtype, and a
//! SHA-256 of everything before it.

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::{DualHeadUNet, NetConfig};

pub const MAGIC: &[u8; 8] = b"DSQCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: SlotKind,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub adam_t: u64,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

/// Everything a checkpoint holds, decoded and verified.
#[derive(Debug)]
pub struct Checkpoint {
    pub header: Header,
    pub tensors: Vec<(TensorEntry, Tensor)>,
}

fn dtype_name(dtype: DType) -> Result<&'static str> {
    match dtype {
        DType::F32 => Ok("f32"),
        DType::F64 => Ok("f64"),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}

fn dtype_of(name: &str) -> Result<DType> {
    match name {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Checkpoint(format!("unsupported dtype `{other}`"))),
    }
}

fn tensor_bytes(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    match t.dtype() {
        DType::F32 => out.extend(t.flatten_all()?.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes())),
        DType::F64 => out.extend(t.flatten_all()?.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes())),
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
    Ok(())
}

/// Serializes `(kind, name, tensor)` slots. Writes to a temporary sibling
/// and renames, so a crash never leaves a truncated file at `path`.
pub fn write(
    path: &Path,
    train: &TrainConfig,
    net: &NetConfig,
    step: u64,
    adam_t: u64,
    dtype: DType,
    slots: &[(SlotKind, &str, &Tensor)],
) -> Result<()> {
    let mut data = Vec::new();
    let mut tensors = Vec::with_capacity(slots.len());
    for &(kind, name, t) in slots {
        if t.dtype() != dtype {
            return Err(Error::Checkpoint(format!("tensor `{name}` is {:?}, expected {dtype:?}", t.dtype())));
        }
        tensors.push(TensorEntry {
            name: name.to_string(),
            kind,
            shape: t.dims().to_vec(),
            offset: data.len(),
        });
        tensor_bytes(t, &mut data)?;
    }
    let header = Header {
        net: net.clone(),
        train: train.clone(),
        step,
        adam_t,
        dtype: dtype_name(dtype)?.to_string(),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(PREFIX_LEN + header.len() + data.len() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&data);
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads and fully verifies a checkpoint before decoding any tensor.
pub fn read(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if buf.len() < PREFIX_LEN + DIGEST_LEN || &buf[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(&format!("format version {version}, this build reads {FORMAT_VERSION}")));
    }
    let (body, digest) = buf.split_at(buf.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file is corrupted or truncated)"));
    }
    let header_len = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
    let data_start = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&s| s <= body.len())
        .ok_or_else(|| bad("header length out of range"))?;
    let header: Header = serde_json::from_slice(&body[PREFIX_LEN..data_start])
        .map_err(|e| bad(&format!("header: {e}")))?;
    let dtype = dtype_of(&header.dtype)?;
    let data = &body[data_start..];
    let elem = dtype.size_in_bytes();

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset.checked_add(n * elem).filter(|&e| e <= data.len());
        let Some(end) = end else {
            return Err(bad(&format!("tensor `{}` exceeds the data section", entry.name)));
        };
        let raw = &data[entry.offset..end];
        let t = match dtype {
            DType::F64 => {
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
                Tensor::from_vec(v, entry.shape.as_slice(), &Device::Cpu)?
            }
            _ => {
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
                Tensor::from_vec(v, entry.shape.as_slice(), &Device::Cpu)?
            }
        };
        tensors.push((entry.clone(), t));
    }
    Ok(Checkpoint { header, tensors })
}

impl Checkpoint {
    pub fn dtype(&self) -> Result<DType> {
        dtype_of(&self.header.dtype)
    }

    pub fn slot(&self, kind: SlotKind, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(e, _)| e.kind == kind && e.name == name)
            .map(|(_, t)| t)
    }

    /// Rebuilds the network and loads its parameters. Every parameter of the
    /// architecture must be present with a matching shape.
    pub fn model(&self) -> Result<DualHeadUNet> {
        let model = DualHeadUNet::with_dtype(self.header.net.clone(), self.header.train.seed, self.dtype()?)?;
        let params = model.params();
        let stored = self.tensors.iter().filter(|(e, _)| e.kind == SlotKind::Param).count();
        if stored != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {stored} parameters, architecture has {}",
                params.len()
            )));
        }
        for name in params.names() {
            let t = self
                .slot(SlotKind::Param, name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            params.assign(name, t)?;
        }
        Ok(model)
    }
}

/// Loads just the network from a checkpoint, for inference.
pub fn load_model(path: impl AsRef<Path>) -> Result<DualHeadUNet> {
    read(path.as_ref())?.model()
}
