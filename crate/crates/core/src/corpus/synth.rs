//! Source–filter synthesis of a fixed vowel-sequence carrier phrase.
//!
//! Each recording is a train of glottal flow-derivative pulses passed
//! through a cascade of three formant resonators. Pathological recordings
//! perturb the cycle lengths (jitter), the cycle amplitudes (shimmer) and
//! add aspiration noise, all drawn from configurable ranges.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, CorpusManifest, Gender, ManifestSource, RecordingMeta, Status};
use super::CorpusError;
use crate::dsp::{write_wav, Waveform};
use crate::viz::{Interval, PhonemeAlignment};

/// (label, F1, F2, F3) for an adult male vocal tract.
const PHRASE: &[(&str, [f64; 3])] = &[
    ("u", [300.0, 870.0, 2240.0]),
    ("ə", [500.0, 1500.0, 2500.0]),
    ("ɔ", [570.0, 840.0, 2410.0]),
    ("ə", [500.0, 1500.0, 2500.0]),
    ("i", [270.0, 2290.0, 3010.0]),
    ("e", [400.0, 2000.0, 2550.0]),
    ("ɛ", [530.0, 1840.0, 2480.0]),
    ("i", [270.0, 2290.0, 3010.0]),
    ("ə", [500.0, 1500.0, 2500.0]),
];
const BANDWIDTHS: [f64; 3] = [80.0, 110.0, 150.0];
const ORGANIC_LABELS: &[&str] = &["laryngitis", "vocal fold polyp", "reinke edema"];
const INORGANIC_LABELS: &[&str] = &[
    "functional dysphonia",
    "hyperfunctional dysphonia",
    "psychogenic dysphonia",
];

/// Voice-quality ranges for one class. Jitter and shimmer are relative
/// standard deviations of cycle length and cycle amplitude; `hnr_db` is the
/// harmonics-to-noise ratio of the filtered output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoiceQuality {
    pub jitter: (f64, f64),
    pub shimmer: (f64, f64),
    pub hnr_db: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_healthy: usize,
    pub n_pathological: usize,
    pub sample_rate: u32,
    /// Mean duration of each vowel segment in seconds.
    pub segment_seconds: f64,
    /// Leading and trailing silence in seconds.
    pub silence_seconds: f64,
    pub healthy: VoiceQuality,
    pub pathological: VoiceQuality,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_healthy: 200,
            n_pathological: 200,
            sample_rate: 50_000,
            segment_seconds: 0.11,
            silence_seconds: 0.1,
            healthy: VoiceQuality {
                jitter: (0.002, 0.006),
                shimmer: (0.015, 0.04),
                hnr_db: (20.0, 28.0),
            },
            pathological: VoiceQuality {
                jitter: (0.02, 0.04),
                shimmer: (0.08, 0.15),
                hnr_db: (9.0, 17.0),
            },
        }
    }
}

/// Per-recording voice parameters, drawn once from the file's RNG stream.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceParams {
    pub gender: Gender,
    pub f0: f64,
    pub formant_scale: f64,
    pub jitter: f64,
    pub shimmer: f64,
    pub hnr_db: f64,
    pub segment_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthesizedRecording {
    pub wave: Waveform,
    pub alignment: PhonemeAlignment,
    /// Cycle lengths in samples as generated (before quantization).
    pub cycle_lengths: Vec<f64>,
}

/// Planned recording: identity, class and RNG stream index.
#[derive(Debug, Clone)]
struct Plan {
    index: usize,
    id: String,
    gender: Gender,
    status: Status,
    label: Option<&'static str>,
}

fn plans(config: &SynthConfig) -> Vec<Plan> {
    let mut out = Vec::with_capacity(config.n_healthy + config.n_pathological);
    for i in 0..config.n_healthy {
        out.push(Plan {
            index: out.len(),
            id: format!("h{i:04}"),
            gender: if i % 2 == 0 { Gender::Female } else { Gender::Male },
            status: Status::Healthy,
            label: None,
        });
    }
    for i in 0..config.n_pathological {
        let organic = (i / 2) % 2 == 0;
        let pool = if organic { ORGANIC_LABELS } else { INORGANIC_LABELS };
        out.push(Plan {
            index: out.len(),
            id: format!("p{i:04}"),
            gender: if i % 2 == 0 { Gender::Female } else { Gender::Male },
            status: if organic { Status::Organic } else { Status::Inorganic },
            label: Some(pool[(i / 4) % pool.len()]),
        });
    }
    out
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn draw_params(rng: &mut impl Rng, gender: Gender, quality: &VoiceQuality, segment_seconds: f64) -> VoiceParams {
    let (f0, formant_scale) = match gender {
        Gender::Male => (uniform(rng, (100.0, 135.0)), uniform(rng, (0.95, 1.05))),
        Gender::Female => (uniform(rng, (185.0, 235.0)), uniform(rng, (1.12, 1.22))),
    };
    VoiceParams {
        gender,
        f0,
        formant_scale,
        jitter: uniform(rng, quality.jitter),
        shimmer: uniform(rng, quality.shimmer),
        hnr_db: uniform(rng, quality.hnr_db),
        segment_seconds: PHRASE
            .iter()
            .map(|_| segment_seconds * uniform(rng, (0.8, 1.2)))
            .collect(),
    }
}

/// Glottal flow derivative over one cycle phase in `[0, 1)`.
fn glottal_derivative(phase: f64) -> f64 {
    const OPEN: f64 = 0.4;
    const CLOSE: f64 = 0.16;
    if phase < OPEN {
        0.5 * PI / OPEN * (PI * phase / OPEN).sin()
    } else if phase < OPEN + CLOSE {
        -PI / (2.0 * CLOSE) * (PI * (phase - OPEN) / (2.0 * CLOSE)).sin()
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
struct Resonator {
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn step(&mut self, x: f64, freq: f64, bandwidth: f64, rate: f64) -> f64 {
        let t = 1.0 / rate;
        let c = -(-2.0 * PI * bandwidth * t).exp();
        let b = 2.0 * (-PI * bandwidth * t).exp() * (2.0 * PI * freq * t).cos();
        let a = 1.0 - b - c;
        let y = a * x + b * self.y1 + c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

pub fn synthesize(params: &VoiceParams, sample_rate: u32, silence_seconds: f64, rng: &mut impl Rng) -> SynthesizedRecording {
    let rate = f64::from(sample_rate);
    let voiced: f64 = params.segment_seconds.iter().sum();
    let lead = (silence_seconds * rate).round() as usize;
    let voiced_len = (voiced * rate).round() as usize;
    let total = lead * 2 + voiced_len;

    // segment boundaries in samples, relative to voicing onset
    let mut bounds = vec![0.0];
    for s in &params.segment_seconds {
        bounds.push(bounds.last().unwrap() + s * rate);
    }
    let formants_at = |n: f64| -> [f64; 3] {
        let seg = bounds.partition_point(|&b| b <= n).saturating_sub(1).min(PHRASE.len() - 1);
        let mut f = PHRASE[seg].1;
        // 30 ms linear glide into the next vowel
        let glide = 0.03 * rate;
        let until_next = bounds[seg + 1] - n;
        if seg + 1 < PHRASE.len() && until_next < glide {
            let w = 1.0 - until_next / glide;
            let next = PHRASE[seg + 1].1;
            for k in 0..3 {
                f[k] += w * (next[k] - f[k]);
            }
        }
        f.map(|v| v * params.formant_scale)
    };

    // glottal source, cycle by cycle
    let mut source = vec![0.0; voiced_len];
    let mut cycle_lengths = Vec::new();
    let mut start = 0.0;
    while start < voiced_len as f64 {
        let progress = start / voiced_len as f64;
        let f0 = params.f0 * (1.06 - 0.12 * progress);
        let z: f64 = StandardNormal.sample(rng);
        let period = (rate / f0) * (1.0 + params.jitter * z).max(0.5);
        let za: f64 = StandardNormal.sample(rng);
        let amp = (1.0 + params.shimmer * za).max(0.1);
        let first = start.ceil() as usize;
        let last = ((start + period).ceil() as usize).min(voiced_len);
        for (n, s) in source.iter_mut().enumerate().take(last).skip(first) {
            *s = amp * glottal_derivative((n as f64 - start) / period);
        }
        cycle_lengths.push(period);
        start += period;
    }

    // harmonic and aspiration parts share the filter; mixing after
    // filtering fixes the output HNR exactly
    let ramp = 0.015 * rate;
    let mut harmonic_bank = [Resonator { y1: 0.0, y2: 0.0 }; 3];
    let mut noise_bank = harmonic_bank;
    let mut harmonic = Vec::with_capacity(voiced_len);
    let mut aspiration = Vec::with_capacity(voiced_len);
    for (n, &s) in source.iter().enumerate() {
        let env = (n as f64 / ramp).min((voiced_len - n) as f64 / ramp).min(1.0);
        let z: f64 = StandardNormal.sample(rng);
        let f = formants_at(n as f64);
        let (mut h, mut a) = (env * s, env * z);
        for k in 0..3 {
            let bw = BANDWIDTHS[k] * params.formant_scale;
            h = harmonic_bank[k].step(h, f[k], bw, rate);
            a = noise_bank[k].step(a, f[k], bw, rate);
        }
        harmonic.push(h);
        aspiration.push(a);
    }
    let power = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    let gain = (power(&harmonic) / power(&aspiration) / 10f64.powf(params.hnr_db / 10.0)).sqrt();
    let voiced_out: Vec<f64> = harmonic.iter().zip(&aspiration).map(|(h, a)| h + gain * a).collect();
    let peak = voiced_out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut samples = vec![0.0; total];
    for (dst, v) in samples[lead..lead + voiced_len].iter_mut().zip(&voiced_out) {
        *dst = 0.7 * v / peak;
    }

    let lead_s = lead as f64 / rate;
    let total_s = total as f64 / rate;
    let mut intervals = vec![Interval {
        label: String::new(),
        start: 0.0,
        end: lead_s,
    }];
    for (k, (label, _)) in PHRASE.iter().enumerate() {
        intervals.push(Interval {
            label: (*label).to_string(),
            start: lead_s + bounds[k] / rate,
            end: lead_s + bounds[k + 1] / rate,
        });
    }
    intervals.push(Interval {
        label: String::new(),
        start: lead_s + voiced_len as f64 / rate,
        end: total_s,
    });
    for iv in &mut intervals {
        iv.start = (iv.start * 1e4).round() / 1e4;
        iv.end = (iv.end * 1e4).round() / 1e4;
    }

    SynthesizedRecording {
        wave: Waveform {
            samples,
            sample_rate,
        },
        alignment: PhonemeAlignment { intervals },
        cycle_lengths,
    }
}

/// Generates a full recording for stream `index` of `seed`.
fn render_plan(config: &SynthConfig, plan: &Plan, seed: u64) -> SynthesizedRecording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(plan.index as u64);
    let quality = if plan.status.is_pathological() {
        &config.pathological
    } else {
        &config.healthy
    };
    let params = draw_params(&mut rng, plan.gender, quality, config.segment_seconds);
    synthesize(&params, config.sample_rate, config.silence_seconds, &mut rng)
}

/// Writes `audio/<id>.wav`, `align/<id>.json` and `manifest.csv` under `out`.
pub fn synth_corpus(config: &SynthConfig, seed: u64, out: &Path) -> Result<CorpusManifest, CorpusError> {
    let io = |path: PathBuf| move |source| CorpusError::Io { path, source };
    let audio_dir = out.join("audio");
    let align_dir = out.join("align");
    fs::create_dir_all(&audio_dir).map_err(io(audio_dir.clone()))?;
    fs::create_dir_all(&align_dir).map_err(io(align_dir.clone()))?;

    let plans = plans(config);
    plans.par_iter().try_for_each(|plan| -> Result<(), CorpusError> {
        let rec = render_plan(config, plan, seed);
        let wav = audio_dir.join(format!("{}.wav", plan.id));
        write_wav(&wav, &rec.wave).map_err(|e| CorpusError::Audio(e.to_string()))?;
        let json = serde_json::to_string_pretty(&rec.alignment.intervals).expect("intervals serialize");
        let align = align_dir.join(format!("{}.json", plan.id));
        fs::write(&align, json).map_err(io(align.clone()))
    })?;

    let records = plans
        .iter()
        .map(|p| RecordingMeta {
            id: p.id.clone(),
            audio_path: PathBuf::from(format!("audio/{}.wav", p.id)),
            speaker_id: format!("spk-{}", p.id),
            gender: p.gender,
            pathology_labels: p.label.map(|l| l.to_string()).into_iter().collect::<BTreeSet<_>>(),
            status: p.status,
        })
        .collect();
    let manifest = CorpusManifest {
        records,
        source: ManifestSource::Synthetic,
        root: out.to_path_buf(),
    };
    write_manifest(&out.join("manifest.csv"), &manifest)?;
    Ok(manifest)
}
