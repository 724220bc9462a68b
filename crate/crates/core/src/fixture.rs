//! Tensor fixtures on disk: a JSON manifest next to one raw little-endian
//! `f32` blob.
//!
//! ```text
//! weights.json   {"magic": "TPSW", "version": 1, "blob": "weights.bin", ...}
//! weights.bin    tensor bytes back to back, in manifest order
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vit::{ImageBatch, ModelConfig, ModelWeights};

pub const MAGIC: &str = "TPSW";
pub const FORMAT_VERSION: u32 = 1;

const IMAGES: &str = "images";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Hex SHA-256 of the tensor's bytes.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub blob_bytes: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn write_tensors(path: &Path, config: Option<&ModelConfig>, tensors: &[NamedTensor]) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::shape("write_tensors", format!("{numel} values for {}", t.name), t.data.len()));
        }
        let start = blob.len();
        for v in &t.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset: start as u64,
            checksum: sha256_hex(&blob[start..]),
        });
    }
    let bin = blob_path(path);
    let manifest = Manifest {
        magic: MAGIC.into(),
        version: FORMAT_VERSION,
        config: config.cloned(),
        blob: bin
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("bad fixture path {}", path.display())))?
            .into(),
        blob_bytes: blob.len() as u64,
        tensors: entries,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: &Path) -> Result<(Manifest, Vec<NamedTensor>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::load("manifest", e.to_string()))?;
    if manifest.magic != MAGIC {
        return Err(Error::load("magic", format!("expected {MAGIC:?}, found {:?}", manifest.magic)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::load(
            "version",
            format!("expected {FORMAT_VERSION}, found {}", manifest.version),
        ));
    }
    let bin = path.with_file_name(&manifest.blob);
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(Error::load(
            "blob_bytes",
            format!("expected {} bytes, found {} in {}", manifest.blob_bytes, blob.len(), bin.display()),
        ));
    }
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let field = format!("tensors.{}", e.name);
        let bytes = e.shape.iter().product::<usize>() as u64 * 4;
        let end = e.offset.checked_add(bytes).filter(|&end| end <= blob.len() as u64).ok_or_else(|| {
            Error::load(&field, format!("bytes {}..{} exceed blob of {} bytes", e.offset, e.offset + bytes, blob.len()))
        })?;
        let raw = &blob[e.offset as usize..end as usize];
        if sha256_hex(raw) != e.checksum {
            return Err(Error::load(format!("{field}.checksum"), "checksum mismatch"));
        }
        tensors.push(NamedTensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
        });
    }
    Ok((manifest, tensors))
}

pub fn save_weights(path: &Path, cfg: &ModelConfig, weights: &ModelWeights) -> Result<()> {
    weights.validate(cfg)?;
    let tensors: Vec<NamedTensor> = weights
        .tensors()
        .into_iter()
        .map(|(name, shape, data)| NamedTensor { name, shape, data })
        .collect();
    write_tensors(path, Some(cfg), &tensors)
}

pub fn load_weights(path: &Path) -> Result<(ModelConfig, ModelWeights)> {
    let (manifest, tensors) = read_tensors(path)?;
    let cfg = manifest
        .config
        .ok_or_else(|| Error::load("config", "weight manifest has no model config"))?;
    cfg.validate().map_err(|e| Error::load("config", e.to_string()))?;
    let mut weights = ModelWeights::zeros(&cfg);
    let mut slots = weights.slots_mut();
    if tensors.len() != slots.len() {
        return Err(Error::load(
            "tensors",
            format!("expected {} tensors, found {}", slots.len(), tensors.len()),
        ));
    }
    for (slot, t) in slots.iter_mut().zip(tensors) {
        if slot.name != t.name {
            return Err(Error::load(
                format!("tensors.{}", t.name),
                format!("expected tensor {} at this position", slot.name),
            ));
        }
        if slot.shape != t.shape {
            return Err(Error::load(
                format!("tensors.{}.shape", t.name),
                format!("expected {:?}, found {:?}", slot.shape, t.shape),
            ));
        }
        slot.data.copy_from_slice(&t.data);
    }
    drop(slots);
    Ok((cfg, weights))
}

pub fn save_images(path: &Path, images: &ImageBatch) -> Result<()> {
    write_tensors(
        path,
        None,
        &[NamedTensor {
            name: IMAGES.into(),
            shape: vec![images.batch, images.size, images.size, 3],
            data: images.data.clone(),
        }],
    )
}

pub fn load_images(path: &Path) -> Result<ImageBatch> {
    let (_, tensors) = read_tensors(path)?;
    let t = tensors
        .into_iter()
        .find(|t| t.name == IMAGES)
        .ok_or_else(|| Error::load(format!("tensors.{IMAGES}"), "missing"))?;
    match t.shape[..] {
        [b, h, w, 3] if h == w => ImageBatch::new(b, h, t.data),
        _ => Err(Error::load(
            format!("tensors.{IMAGES}.shape"),
            format!("expected [batch, size, size, 3], found {:?}", t.shape),
        )),
    }
}
