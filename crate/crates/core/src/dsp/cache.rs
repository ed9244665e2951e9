use std::fs;
use std::path::Path;

use super::{DspError, Spectrogram};

pub const FBNK_MAGIC: [u8; 4] = *b"FBNK";
pub const RMAP_MAGIC: [u8; 4] = *b"RMAP";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Decoded bins×frames matrix file (bin-major payload).
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub magic: [u8; 4],
    pub bins: usize,
    pub frames: usize,
    pub original_frames: usize,
    pub values: Vec<f32>,
}

impl MatrixFile {
    pub fn from_spectrogram(spec: &Spectrogram) -> Self {
        Self {
            magic: FBNK_MAGIC,
            bins: spec.bins(),
            frames: spec.frames(),
            original_frames: spec.original_frames,
            values: spec.values().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn into_spectrogram(self) -> Result<Spectrogram, DspError> {
        Spectrogram::new(
            self.bins,
            self.frames,
            self.values.into_iter().map(f64::from).collect(),
            self.original_frames,
        )
    }
}

/// Header: magic, then little-endian u32 version, bins, frames,
/// original_frames; then `bins·frames` little-endian f32.
pub fn write_matrix_file(path: &Path, file: &MatrixFile) -> Result<(), DspError> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * file.values.len());
    bytes.extend_from_slice(&file.magic);
    for v in [VERSION, file.bins as u32, file.frames as u32, file.original_frames as u32] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in &file.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|source| DspError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_matrix_file(path: &Path, expected_magic: [u8; 4]) -> Result<MatrixFile, DspError> {
    let bytes = fs::read(path).map_err(|source| DspError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |detail: String| DspError::BadFile {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad("shorter than header".into()));
    }
    if bytes[..4] != expected_magic {
        return Err(bad(format!(
            "magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(&expected_magic)
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != VERSION {
        return Err(bad(format!("version {}", word(0))));
    }
    let (bins, frames, original) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * bins * frames {
        return Err(bad(format!(
            "payload {} bytes for {bins}x{frames}",
            payload.len()
        )));
    }
    if original > frames {
        return Err(bad(format!("original_frames {original} > frames {frames}")));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MatrixFile {
        magic: expected_magic,
        bins,
        frames,
        original_frames: original,
        values,
    })
}
