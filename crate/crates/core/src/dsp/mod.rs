//! Waveform decoding, resampling and log-Mel featurization.
//!
//! Spectrograms are stored bin-major (`values[bin * frames + frame]`) at
//! 100 frames per second. `original_frames` remembers the unpadded length
//! so relevance maps and renders can be cut back to the real utterance.

mod cache;
mod mel;
mod resample;
mod wav;

use std::io;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{read_matrix_file, write_matrix_file, MatrixFile, FBNK_MAGIC, RMAP_MAGIC};
pub use mel::{
    hz_to_mel, log_mel_spectrogram, mel_centers_hz, mel_to_hz, FbankExtractor, MelFilterbank,
    FFT_SIZE, FRAME_RATE, HOP, LOG_FLOOR, MEL_BINS, SAMPLE_RATE, WINDOW,
};
pub use resample::resample;
pub use wav::{decode_wav, write_wav, Waveform};

#[derive(Debug, Error)]
pub enum DspError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: unsupported audio format ({detail}); expected 16-bit PCM")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("waveform has no samples")]
    EmptyWaveform,
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
    #[error("expected {expected} Hz audio, got {actual} Hz")]
    WrongRate { expected: u32, actual: u32 },
    #[error("waveform of {samples} samples is shorter than one hop ({minimum})")]
    TooShort { samples: usize, minimum: usize },
    #[error("spectrogram shape mismatch: {0}")]
    Shape(String),
    #[error("normalization std must be positive, got {0}")]
    ZeroStd(f64),
    #[error("{path}: bad matrix file: {detail}")]
    BadFile { path: PathBuf, detail: String },
}

/// Log-Mel energies with their unpadded length.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
    pub original_frames: usize,
}

impl Spectrogram {
    pub fn new(
        bins: usize,
        frames: usize,
        values: Vec<f64>,
        original_frames: usize,
    ) -> Result<Self, DspError> {
        if values.len() != bins * frames {
            return Err(DspError::Shape(format!(
                "{} values for {bins}x{frames}",
                values.len()
            )));
        }
        if original_frames > frames {
            return Err(DspError::Shape(format!(
                "original_frames {original_frames} exceeds frames {frames}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(DspError::Shape(format!("non-finite value {v}")));
        }
        Ok(Self {
            bins,
            frames,
            values,
            original_frames,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Current frame count; equals the padded length after [`pad_or_truncate`].
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn padded_frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    pub fn original_seconds(&self) -> f64 {
        self.original_frames as f64 / FRAME_RATE as f64
    }
}

/// Decodes a WAV file, resamples it to 16 kHz and extracts log-Mel energies.
pub fn featurize_file(path: &std::path::Path) -> Result<Spectrogram, DspError> {
    let wave = decode_wav(path)?;
    let wave = if wave.sample_rate == SAMPLE_RATE { wave } else { resample(&wave, SAMPLE_RATE)? };
    log_mel_spectrogram(&wave)
}

/// Right-pads with `fill` or truncates to `round(100·max_seconds)` frames.
pub fn pad_or_truncate(spec: &Spectrogram, max_seconds: f64, fill: f64) -> Spectrogram {
    let target = (max_seconds * FRAME_RATE as f64).round() as usize;
    if target == spec.frames {
        return spec.clone();
    }
    let mut values = Vec::with_capacity(spec.bins * target);
    for b in 0..spec.bins {
        let row = &spec.values[b * spec.frames..(b + 1) * spec.frames];
        if target <= spec.frames {
            values.extend_from_slice(&row[..target]);
        } else {
            values.extend_from_slice(row);
            values.resize((b + 1) * target, fill);
        }
    }
    Spectrogram {
        bins: spec.bins,
        frames: target,
        values,
        original_frames: spec.original_frames.min(target),
    }
}

/// Global mean and standard deviation of training-split log energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Statistics over the unpadded cells of every spectrogram.
    pub fn from_spectrograms<'a>(specs: impl IntoIterator<Item = &'a Spectrogram>) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for s in specs {
            for b in 0..s.bins {
                for &v in &s.values[b * s.frames..b * s.frames + s.original_frames] {
                    n += 1;
                    sum += v;
                    sq += v * v;
                }
            }
        }
        let mean = if n > 0 { sum / n as f64 } else { 0.0 };
        let var = if n > 0 { (sq / n as f64 - mean * mean).max(0.0) } else { 0.0 };
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

/// `(x − mean) / (2·std)` on every cell.
pub fn normalize_spectrogram(spec: &Spectrogram, stats: NormStats) -> Result<Spectrogram, DspError> {
    if !(stats.std > 0.0) {
        return Err(DspError::ZeroStd(stats.std));
    }
    let scale = 1.0 / (2.0 * stats.std);
    let mut out = spec.clone();
    for v in &mut out.values {
        *v = (*v - stats.mean) * scale;
    }
    Ok(out)
}

pub fn denormalize_spectrogram(spec: &Spectrogram, stats: NormStats) -> Result<Spectrogram, DspError> {
    if !(stats.std > 0.0) {
        return Err(DspError::ZeroStd(stats.std));
    }
    let mut out = spec.clone();
    for v in &mut out.values {
        *v = *v * 2.0 * stats.std + stats.mean;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(frames: usize) -> Spectrogram {
        let values = (0..2 * frames).map(|i| i as f64 * 0.5 - 3.0).collect();
        Spectrogram::new(2, frames, values, frames).unwrap()
    }

    #[test]
    fn pads_to_the_model_length() {
        let s = pad_or_truncate(&spec(100), 2.0, -1.0);
        assert_eq!((s.frames(), s.original_frames), (200, 100));
        assert_eq!(s.get(1, 150), -1.0);
        assert_eq!(s.get(1, 99), spec(100).get(1, 99));
    }

    #[test]
    fn truncates_and_clamps_original_length() {
        let s = pad_or_truncate(&spec(250), 2.0, 0.0);
        assert_eq!((s.frames(), s.original_frames), (200, 200));
        assert_eq!(s.get(1, 199), spec(250).get(1, 199));
    }

    #[test]
    fn exact_length_is_unchanged() {
        assert_eq!(pad_or_truncate(&spec(100), 1.0, 9.0), spec(100));
    }

    #[test]
    fn constant_spectrogram_normalizes_to_zero() {
        let s = Spectrogram::new(2, 3, vec![4.5; 6], 3).unwrap();
        let n = normalize_spectrogram(&s, NormStats { mean: 4.5, std: 1.0 }).unwrap();
        assert!(n.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_inverts() {
        let s = spec(17);
        let stats = NormStats { mean: -2.25, std: 3.7 };
        let back = denormalize_spectrogram(&normalize_spectrogram(&s, stats).unwrap(), stats).unwrap();
        for (a, b) in back.values().iter().zip(s.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_std_is_rejected() {
        let r = normalize_spectrogram(&spec(3), NormStats { mean: 0.0, std: 0.0 });
        assert!(matches!(r, Err(DspError::ZeroStd(_))));
    }

    #[test]
    fn stats_ignore_padding() {
        let a = Spectrogram::new(1, 4, vec![1.0, 3.0, 100.0, 100.0], 2).unwrap();
        let st = NormStats::from_spectrograms([&a]);
        assert_eq!(st, NormStats { mean: 2.0, std: 1.0 });
    }
}
