//! `KCCK` checkpoint.
//!
//! ```text
//! magic   "KCCK"
//! u32     version (1)
//! u64     metadata length, then that many bytes of canonical JSON
//! sections until end of file:
//!   u32   name byte length, name (UTF-8)
//!   u32   rank
//!   u64 × rank  dims
//!   f32 × Π dims
//! ```
//!
//! Little-endian throughout. Trainable tensors are stored under their
//! parameter names (`lp_img.weight`, `entity`, ...); AdamW moments under
//! `adam.m/<name>` and `adam.v/<name>`. The metadata carries the training
//! config, vocabularies, raw input dims, step counter and data paths.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{put_f32s, put_u32, put_u64, Reader};
use super::DataPaths;
use crate::encoders::{ModelParams, ModelShape};
use crate::error::{Error, Result};
use crate::trainer::{OptimizerState, TrainConfig};

const MAGIC: &[u8; 4] = b"KCCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub config: TrainConfig,
    pub image_dim: usize,
    pub text_dim: usize,
    /// Entity QIDs in row order of the entity table.
    pub entities: Vec<String>,
    /// Relation PIDs in row order of the relation table.
    pub relations: Vec<String>,
    #[serde(default)]
    pub data: Option<DataPaths>,
}

impl CheckpointMeta {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            image_dim: self.image_dim,
            text_dim: self.text_dim,
            d_e: self.config.d_e,
            n_entities: self.entities.len(),
            n_relations: self.relations.len(),
            fusion: self.config.fusion,
            mlp_layers: self.config.mlp_layers,
            kge_method: self.config.kge_method,
        }
    }
}

/// Full trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams<f32>,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: CheckpointMeta,
    step: u64,
}

fn put_section(buf: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    put_u32(buf, name.len() as u32);
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, dims.len() as u32);
    for &d in dims {
        put_u64(buf, d as u64);
    }
    put_f32s(buf, data);
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        meta: ckpt.meta.clone(),
        step: ckpt.optimizer.step,
    };
    let blob = serde_json::to_vec(&header).expect("serializable metadata");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, blob.len() as u64);
    buf.extend_from_slice(&blob);
    for (prefix, params) in [
        ("", &ckpt.params),
        ("adam.m/", &ckpt.optimizer.first),
        ("adam.v/", &ckpt.optimizer.second),
    ] {
        for (name, dims, data) in params.tensors() {
            put_section(&mut buf, &format!("{prefix}{name}"), &dims, data);
        }
    }
    buf
}

struct Section {
    offset: u64,
    dims: Vec<usize>,
    data: Vec<f32>,
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(path, bytes);
    if r.take(4, "magic")? != MAGIC {
        return Err(r.error_at(0, "bad magic, expected KCCK"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error_at(4, format!("unsupported version {version}")));
    }
    let blob_len = r.u64("metadata length")?;
    let blob_at = r.offset();
    let blob = r.take(
        usize::try_from(blob_len).map_err(|_| r.error("metadata length overflows"))?,
        "metadata",
    )?;
    let header: Header = serde_json::from_slice(blob).map_err(|e| r.error_at(blob_at, format!("bad metadata: {e}")))?;

    let mut sections = BTreeMap::new();
    while !r.is_empty() {
        let offset = r.offset();
        let name_len = r.u32("section name length")? as usize;
        let name = r.string(name_len, "section name")?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u64("dim")? as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error_at(offset, format!("{name}: element count overflows")))?;
        let data = r.f32s(count, &name)?;
        if sections.insert(name.clone(), Section { offset, dims, data }).is_some() {
            return Err(r.error_at(offset, format!("duplicate tensor {name}")));
        }
    }

    let shape = header.meta.shape();
    let mut take = |prefix: &str| -> Result<ModelParams<f32>> {
        let mut params = ModelParams::<f32>::zeros(&shape)?;
        let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
        for ((name, dims), (_, slot)) in expected.iter().zip(params.tensors_mut()) {
            let full = format!("{prefix}{name}");
            let sec = sections
                .remove(&full)
                .ok_or_else(|| Error::format(path, bytes.len() as u64, format!("missing tensor {full}")))?;
            if &sec.dims != dims {
                return Err(Error::format(
                    path,
                    sec.offset,
                    format!("tensor {full} has shape {:?}, config implies {:?}", sec.dims, dims),
                ));
            }
            slot.copy_from_slice(&sec.data);
        }
        Ok(params)
    };
    let params = take("")?;
    let first = take("adam.m/")?;
    let second = take("adam.v/")?;
    if let Some((name, sec)) = sections.iter().next() {
        return Err(Error::format(path, sec.offset, format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint {
        meta: header.meta,
        params,
        optimizer: OptimizerState {
            step: header.step,
            first,
            second,
        },
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
