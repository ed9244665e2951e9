use std::path::Path;

use super::{layout, ModelConfig, ModelError, Parameters};
use crate::grad::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ASTR";
pub const CHECKPOINT_VERSION: u32 = 1;
const CONFIG_FIELDS: usize = 10;

fn config_block(c: &ModelConfig) -> [u32; CONFIG_FIELDS] {
    [
        c.embed_dim as u32,
        c.layers as u32,
        c.heads as u32,
        c.patch_h as u32,
        c.patch_w as u32,
        c.stride as u32,
        c.mel_bins as u32,
        c.max_frames as u32,
        c.num_classes as u32,
        u32::from(c.backbone_trainable),
    ]
}

/// Layout: magic, version, ten config integers, parameter count (u64),
/// parameters as f32 in declaration order, CRC32 of everything before it.
/// All integers little-endian.
pub fn encode_checkpoint(params: &Parameters, config: &ModelConfig) -> Result<Vec<u8>, ModelError> {
    config.validate()?;
    params.check_shapes(config)?;
    let mut buf = Vec::with_capacity(64 + 4 * params.scalar_count());
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in config_block(config) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(params.scalar_count() as u64).to_le_bytes());
    for t in &params.tensors {
        for &v in t.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Parameters, ModelConfig), ModelError> {
    let header = 4 + 4 + 4 * CONFIG_FIELDS + 8;
    if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < header + 4 {
        return Err(ModelError::Truncated);
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(ModelError::Checksum { stored, computed });
    }
    let f: Vec<usize> = (0..CONFIG_FIELDS).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let config = ModelConfig {
        embed_dim: f[0],
        layers: f[1],
        heads: f[2],
        patch_h: f[3],
        patch_w: f[4],
        stride: f[5],
        mel_bins: f[6],
        max_frames: f[7],
        num_classes: f[8],
        backbone_trainable: f[9] != 0,
    };
    config.validate()?;
    let count = u64::from_le_bytes(bytes[header - 8..header].try_into().expect("8 bytes")) as usize;
    let specs = layout(&config);
    let expected: usize = specs.iter().map(|s| s.rows * s.cols).sum();
    if count != expected {
        return Err(ModelError::Config(format!(
            "checkpoint holds {count} parameters but its config implies {expected}"
        )));
    }
    if body.len() != header + 4 * count {
        return Err(ModelError::Truncated);
    }
    let mut values = body[header..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    let tensors = specs
        .iter()
        .map(|s| Tensor::from_vec(s.rows, s.cols, values.by_ref().take(s.rows * s.cols).collect()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((Parameters { tensors }, config))
}

pub fn save_checkpoint(params: &Parameters, config: &ModelConfig, path: &Path) -> Result<(), ModelError> {
    let bytes = encode_checkpoint(params, config)?;
    std::fs::write(path, bytes).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(Parameters, ModelConfig), ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
