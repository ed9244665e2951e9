use std::io;
use std::path::Path;

use super::DspError;

/// Mono audio with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if samples.is_empty() {
            return Err(DspError::EmptyWaveform);
        }
        if sample_rate == 0 {
            return Err(DspError::InvalidRate(sample_rate));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads a 16-bit PCM WAV file, keeping only the first channel.
pub fn decode_wav(path: &Path) -> Result<Waveform, DspError> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(DspError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    let channels = usize::from(spec.channels.max(1));
    let expected = reader.duration() as usize;
    let mut samples = Vec::with_capacity(expected);
    for (i, s) in reader.samples::<i16>().enumerate() {
        let s = s.map_err(|e| map_hound(path, e))?;
        if i % channels == 0 {
            samples.push(f64::from(s) / 32768.0);
        }
    }
    if samples.len() < expected {
        return Err(DspError::Io {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::UnexpectedEof, "truncated sample data"),
        });
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, clamping samples to the representable range.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in &wave.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound(path, e))
}

fn map_hound(path: &Path, err: hound::Error) -> DspError {
    match err {
        hound::Error::IoError(source) => DspError::Io {
            path: path.to_path_buf(),
            source,
        },
        hound::Error::Unsupported => DspError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "unsupported encoding".into(),
        },
        other => DspError::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}
