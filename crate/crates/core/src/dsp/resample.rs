use std::f64::consts::PI;

use super::{DspError, Waveform};

/// Zero crossings of the sinc kernel on each side, measured at the cutoff.
const ZERO_CROSSINGS: usize = 32;

/// Band-limited sample-rate conversion with a Blackman-windowed sinc.
///
/// The rate ratio is reduced to `up/down`; output sample `i` sits at input
/// position `i·down/up`, so there are exactly `up` distinct fractional
/// phases and their kernels are built once.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform, DspError> {
    if target_rate == 0 {
        return Err(DspError::InvalidRate(target_rate));
    }
    let source_rate = wave.sample_rate;
    if source_rate == target_rate {
        return Ok(wave.clone());
    }
    let g = gcd(u64::from(source_rate), u64::from(target_rate));
    let up = u64::from(target_rate) / g;
    let down = u64::from(source_rate) / g;

    let n_in = wave.samples.len();
    let n_out = ((n_in as f64) * f64::from(target_rate) / f64::from(source_rate)).round() as usize;
    let cutoff = (f64::from(target_rate) / f64::from(source_rate)).min(1.0);
    let half_width = (ZERO_CROSSINGS as f64 / cutoff).ceil() as i64;

    let kernels: Vec<Vec<f64>> = (0..up)
        .map(|phase| {
            let frac = phase as f64 / up as f64;
            (-half_width + 1..=half_width)
                .map(|k| tap(k as f64 - frac, cutoff, half_width as f64))
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out as u64 {
        let pos = i * down;
        let base = (pos / up) as i64;
        let kernel = &kernels[(pos % up) as usize];
        let mut acc = 0.0;
        for (offset, &w) in (-half_width + 1..=half_width).zip(kernel) {
            let idx = base + offset;
            if idx >= 0 && (idx as usize) < n_in {
                acc += w * wave.samples[idx as usize];
            }
        }
        out.push(acc);
    }
    Waveform::new(out, target_rate)
}

fn tap(x: f64, cutoff: f64, half_width: f64) -> f64 {
    if x.abs() >= half_width {
        return 0.0;
    }
    let arg = PI * cutoff * x;
    let sinc = if arg.abs() < 1e-12 { 1.0 } else { arg.sin() / arg };
    // Blackman window over [-half_width, half_width].
    let t = (x + half_width) / (2.0 * half_width);
    let window = 0.42 - 0.5 * (2.0 * PI * t).cos() + 0.08 * (4.0 * PI * t).cos();
    cutoff * sinc * window
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
