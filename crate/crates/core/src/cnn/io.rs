//! Model file serialization.
//!
//! Layout: magic `MSQD`, format version u16 = 1 (little-endian), then the
//! eight parameter blocks in fixed order (conv1.w, conv1.b, conv2.w,
//! conv2.b, dense1.w, dense1.b, dense2.w, dense2.b), each as a u32 value
//! count followed by that many little-endian IEEE-754 f64 values.

use super::{CnnModel, CLASSES, CONV1_FILTERS, CONV2_FILTERS, HIDDEN, IN_CHANNELS, KERNEL};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MSQD";
const VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelIoError {
    #[error("bad model file magic")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {VERSION})")]
    VersionMismatch { found: u16 },
    #[error("model file size inconsistent: {0}")]
    SizeMismatch(&'static str),
}

pub fn save_model(model: &CnnModel) -> Vec<u8> {
    let total: usize = model.param_blocks().iter().map(|b| 4 + b.len() * 8).sum();
    let mut out = Vec::with_capacity(6 + total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for block in model.param_blocks() {
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_model(bytes: &[u8]) -> Result<CnnModel, ModelIoError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(ModelIoError::SizeMismatch("header truncated"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ModelIoError::VersionMismatch { found: version });
    }
    let mut offset = 6usize;
    let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(8);
    for _ in 0..8 {
        if bytes.len() - offset < 4 {
            return Err(ModelIoError::SizeMismatch("block length truncated"));
        }
        let count = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
        offset += 4;
        if (bytes.len() - offset) / 8 < count {
            return Err(ModelIoError::SizeMismatch("block data truncated"));
        }
        let mut block = Vec::with_capacity(count);
        for i in 0..count {
            let raw: [u8; 8] = bytes[offset + i * 8..offset + i * 8 + 8].try_into().unwrap();
            block.push(f64::from_le_bytes(raw));
        }
        offset += count * 8;
        blocks.push(block);
    }
    if offset != bytes.len() {
        return Err(ModelIoError::SizeMismatch("trailing bytes after last block"));
    }

    let per_filter1 = IN_CHANNELS * KERNEL * KERNEL;
    let per_filter2 = CONV1_FILTERS * KERNEL * KERNEL;
    if blocks[0].len() != CONV1_FILTERS * per_filter1
        || blocks[1].len() != CONV1_FILTERS
        || blocks[2].len() != CONV2_FILTERS * per_filter2
        || blocks[3].len() != CONV2_FILTERS
        || blocks[5].len() != HIDDEN
        || blocks[6].len() != CLASSES * HIDDEN
        || blocks[7].len() != CLASSES
    {
        return Err(ModelIoError::SizeMismatch("parameter block has unexpected length"));
    }
    if !blocks[4].len().is_multiple_of(HIDDEN) {
        return Err(ModelIoError::SizeMismatch("dense1 weights not divisible by unit count"));
    }
    let flat = blocks[4].len() / HIDDEN;
    if !flat.is_multiple_of(CONV2_FILTERS) {
        return Err(ModelIoError::SizeMismatch("dense1 width inconsistent with channel count"));
    }
    let pooled_area = flat / CONV2_FILTERS;
    let pooled_side = (pooled_area as f64).sqrt().round() as usize;
    if pooled_side * pooled_side != pooled_area {
        return Err(ModelIoError::SizeMismatch("dense1 width is not a square spatial map"));
    }
    let input_side = pooled_side * 4;

    let mut it = blocks.into_iter();
    // The format carries parameters only; the recorded init seed is not
    // persisted, so a loaded model reports seed 0.
    Ok(CnnModel {
        input_side,
        conv1_w: it.next().unwrap(),
        conv1_b: it.next().unwrap(),
        conv2_w: it.next().unwrap(),
        conv2_b: it.next().unwrap(),
        dense1_w: it.next().unwrap(),
        dense1_b: it.next().unwrap(),
        dense2_w: it.next().unwrap(),
        dense2_b: it.next().unwrap(),
        rng_seed: 0,
    })
}
