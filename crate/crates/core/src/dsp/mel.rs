use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspError, Spectrogram, Waveform};

pub const SAMPLE_RATE: u32 = 16_000;
pub const MEL_BINS: usize = 128;
pub const FRAME_RATE: usize = 100;
/// 10 ms at 16 kHz.
pub const HOP: usize = 160;
/// 25 ms at 16 kHz.
pub const WINDOW: usize = 400;
pub const FFT_SIZE: usize = 512;
pub const LOG_FLOOR: f64 = 1e-10;
pub const MEL_LOW_HZ: f64 = 0.0;
pub const MEL_HIGH_HZ: f64 = 8000.0;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequency (Hz) of each mel filter.
pub fn mel_centers_hz(bins: usize) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
    let step = (hi - lo) / (bins + 1) as f64;
    (1..=bins).map(|i| mel_to_hz(lo + step * i as f64)).collect()
}

/// Triangular filters with unit peak, linear on the mel axis.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    bins: usize,
    /// Per filter: first FFT bin and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

impl MelFilterbank {
    pub fn new(bins: usize, fft_size: usize, sample_rate: u32) -> Self {
        let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
        let step = (hi - lo) / (bins + 1) as f64;
        let n_freqs = fft_size / 2 + 1;
        let bin_mel: Vec<f64> = (0..n_freqs)
            .map(|k| hz_to_mel(k as f64 * f64::from(sample_rate) / fft_size as f64))
            .collect();
        let filters = (0..bins)
            .map(|m| {
                let left = lo + step * m as f64;
                let center = left + step;
                let right = center + step;
                let weights: Vec<(usize, f64)> = bin_mel
                    .iter()
                    .enumerate()
                    .filter_map(|(k, &mel)| {
                        let w = if mel > left && mel <= center {
                            (mel - left) / (center - left)
                        } else if mel > center && mel < right {
                            (right - mel) / (right - center)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => (start, weights.iter().map(|&(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        Self { bins, filters }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, (start, weights)) in out.iter_mut().zip(&self.filters) {
            *o = weights
                .iter()
                .zip(&power[*start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

/// Frame-level analysis state shared across calls.
pub struct FbankExtractor {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    filterbank: MelFilterbank,
}

impl Default for FbankExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FbankExtractor {
    pub fn new() -> Self {
        let window = (0..WINDOW)
            .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (WINDOW - 1) as f64).cos())
            .collect();
        Self {
            window,
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
            filterbank: MelFilterbank::new(MEL_BINS, FFT_SIZE, SAMPLE_RATE),
        }
    }

    /// Per-frame power spectra (`FFT_SIZE/2 + 1` bins each).
    pub fn power_frames(&self, wave: &Waveform) -> Result<Vec<Vec<f64>>, DspError> {
        if wave.sample_rate != SAMPLE_RATE {
            return Err(DspError::WrongRate {
                expected: SAMPLE_RATE,
                actual: wave.sample_rate,
            });
        }
        let n = wave.samples.len();
        if n < HOP {
            return Err(DspError::TooShort { samples: n, minimum: HOP });
        }
        let frames = (n as f64 / HOP as f64).round() as usize;
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let mut out = Vec::with_capacity(frames);
        for k in 0..frames {
            let start = (k * HOP) as i64 - (WINDOW / 2) as i64;
            for (j, slot) in buf.iter_mut().enumerate() {
                *slot = if j < WINDOW {
                    let idx = reflect(start + j as i64, n);
                    Complex::new(wave.samples[idx] * self.window[j], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            out.push(buf[..=FFT_SIZE / 2].iter().map(|c| c.norm_sqr()).collect());
        }
        Ok(out)
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn compute(&self, wave: &Waveform) -> Result<Spectrogram, DspError> {
        let power = self.power_frames(wave)?;
        let frames = power.len();
        let mut values = vec![0.0; MEL_BINS * frames];
        let mut energies = vec![0.0; MEL_BINS];
        for (f, p) in power.iter().enumerate() {
            self.filterbank.apply(p, &mut energies);
            for (b, &e) in energies.iter().enumerate() {
                values[b * frames + f] = e.max(LOG_FLOOR).ln();
            }
        }
        Spectrogram::new(MEL_BINS, frames, values, frames)
    }
}

/// 128-bin log-Mel spectrogram at 100 frames/s, frame `k` centred at
/// sample `160·k` with reflect padding at both edges.
pub fn log_mel_spectrogram(wave: &Waveform) -> Result<Spectrogram, DspError> {
    FbankExtractor::new().compute(wave)
}

/// Mirror an out-of-range index back into `0..n` (no edge repetition).
fn reflect(mut i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}
