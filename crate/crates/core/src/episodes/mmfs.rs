//! MMFS v1: `manifest.json` next to a flat little-endian `f32` payload,
//! `embeddings.bin`. Offsets in the manifest count floats, not bytes.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{make_meta_split, ClassRecord, DataError, Dataset, MetaSplit};
use crate::rng;

pub const MMFS_FORMAT: &str = "mmfs";
pub const MMFS_VERSION: u32 = 1;
pub const PAYLOAD_FILE: &str = "embeddings.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub image_dim: u32,
    pub text_dim: u32,
    pub classes: Vec<ManifestClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<ManifestSplits>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestClass {
    pub id: u32,
    pub name: String,
    pub n_images: u32,
    #[serde(default)]
    pub text_offset: Option<u64>,
    pub image_offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestSplits {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

/// Writes `classes` as MMFS v1 into `dir`. Values are stored as `f32`.
pub fn write_dataset(
    dir: &Path,
    image_dim: usize,
    text_dim: usize,
    classes: &[ClassRecord],
    split: Option<&MetaSplit>,
) -> Result<Manifest, DataError> {
    fs::create_dir_all(dir)?;
    let mut payload: Vec<u8> = Vec::new();
    let mut entries = Vec::with_capacity(classes.len());
    let push = |payload: &mut Vec<u8>, values: &[f64]| {
        for &v in values {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    let offset = |payload: &Vec<u8>| payload.len() as u64 / 4;
    for class in classes {
        if class.text.len() != text_dim {
            return Err(DataError::DimMismatch(format!(
                "class {} text has {} values, expected {text_dim}",
                class.id,
                class.text.len()
            )));
        }
        let text_offset = offset(&payload);
        push(&mut payload, &class.text);
        let image_offset = offset(&payload);
        for im in &class.images {
            if im.len() != image_dim {
                return Err(DataError::DimMismatch(format!(
                    "class {} image has {} values, expected {image_dim}",
                    class.id,
                    im.len()
                )));
            }
            push(&mut payload, im);
        }
        entries.push(ManifestClass {
            id: class.id,
            name: class.name.clone(),
            n_images: class.images.len() as u32,
            text_offset: Some(text_offset),
            image_offset,
        });
    }
    let manifest = Manifest {
        format: MMFS_FORMAT.to_owned(),
        version: MMFS_VERSION,
        image_dim: image_dim as u32,
        text_dim: text_dim as u32,
        classes: entries,
        splits: split.map(|s| ManifestSplits {
            train: s.train.clone(),
            val: s.val.clone(),
            test: s.test.clone(),
        }),
        metadata: None,
    };
    fs::write(dir.join(PAYLOAD_FILE), payload)?;
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read_floats(payload: &[f32], offset: u64, len: u64) -> Result<Vec<f64>, DataError> {
    let end = offset.checked_add(len).ok_or(DataError::TruncatedPayload {
        needed: u64::MAX,
        available: payload.len() as u64,
    })?;
    if end > payload.len() as u64 {
        return Err(DataError::TruncatedPayload {
            needed: end,
            available: payload.len() as u64,
        });
    }
    Ok(payload[offset as usize..end as usize]
        .iter()
        .map(|&v| f64::from(v))
        .collect())
}

/// Loads an MMFS v1 dataset. Without a split in the manifest, classes are
/// split 60:20:20 with `seed`.
pub fn load_dataset(manifest_path: &Path, seed: u64) -> Result<Dataset, DataError> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(manifest_path)?)
        .map_err(|e| DataError::Format(format!("manifest: {e}")))?;
    if manifest.format != MMFS_FORMAT || manifest.version != MMFS_VERSION {
        return Err(DataError::Format(format!(
            "expected {MMFS_FORMAT} v{MMFS_VERSION}, found {} v{}",
            manifest.format, manifest.version
        )));
    }
    if manifest.classes.is_empty() {
        return Err(DataError::Format("manifest lists no classes".into()));
    }
    if manifest.image_dim == 0 || manifest.text_dim == 0 {
        return Err(DataError::DimMismatch(format!(
            "image_dim {} / text_dim {} must be positive",
            manifest.image_dim, manifest.text_dim
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(PAYLOAD_FILE))?;
    if bytes.len() % 4 != 0 {
        return Err(DataError::Format(format!(
            "payload length {} is not a whole number of f32 values",
            bytes.len()
        )));
    }
    let payload: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let image_dim = manifest.image_dim as u64;
    let text_dim = manifest.text_dim as u64;
    let mut seen = HashSet::new();
    let mut classes = Vec::with_capacity(manifest.classes.len());
    for entry in &manifest.classes {
        if !seen.insert(entry.id) {
            return Err(DataError::Format(format!("duplicate class id {}", entry.id)));
        }
        let text_offset = entry.text_offset.ok_or(DataError::MissingDescription(entry.id))?;
        let text = read_floats(&payload, text_offset, text_dim)?;
        let flat = read_floats(&payload, entry.image_offset, entry.n_images as u64 * image_dim)?;
        let images = flat.chunks(image_dim as usize).map(<[f64]>::to_vec).collect();
        classes.push(ClassRecord {
            id: entry.id,
            name: entry.name.clone(),
            text,
            images,
        });
    }

    let ids: Vec<u32> = classes.iter().map(|c| c.id).collect();
    let split = match &manifest.splits {
        Some(s) => {
            let split = MetaSplit {
                train: s.train.clone(),
                val: s.val.clone(),
                test: s.test.clone(),
            };
            let listed: HashSet<u32> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
            if !split.is_disjoint() || listed != seen {
                return Err(DataError::Format(
                    "splits must partition the manifest's class ids".into(),
                ));
            }
            split
        }
        None => make_meta_split(&ids, (0.6, 0.2, 0.2), &mut rng::stream(seed, "meta-split"))?,
    };
    Ok(Dataset {
        image_dim: image_dim as usize,
        text_dim: text_dim as usize,
        classes,
        split,
    })
}
