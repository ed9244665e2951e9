//! Spectrogram/relevance composites, phoneme annotation strips and PNG output.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

mod alignment;
pub mod font;

pub use alignment::{load_alignment, parse_alignment, Interval, PhonemeAlignment};

use crate::dsp::{Spectrogram, FRAME_RATE};
use crate::rollout::RelevanceMap;

/// Rows of the annotation strip added by [`overlay`].
pub const STRIP_HEIGHT: usize = 11;
const STRIP_BACKGROUND: [u8; 3] = [255, 255, 255];
const INK: [u8; 3] = [0, 0, 0];
const PANEL_GAP: usize = 2;

/// Categorical colors for scatter plots.
pub const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [140, 86, 75],
];

#[derive(Debug, thiserror::Error)]
pub enum VizError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("alignment format: {0}")]
    Format(String),
    #[error("alignment: {0}")]
    Validation(String),
    #[error("{0}")]
    Shape(String),
    #[error("png {path}: {message}")]
    Png { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for y in 0..src.height.min(self.height.saturating_sub(y0)) {
            for x in 0..src.width.min(self.width.saturating_sub(x0)) {
                self.set(x0 + x, y0 + y, src.get(x, y));
            }
        }
    }

    fn append_rows(&mut self, rows: usize, fill: [u8; 3]) {
        self.pixels.extend(std::iter::repeat_n(fill, rows * self.width));
        self.height += rows;
    }
}

/// A rendered spectrogram panel; the first `bins` rows are the
/// time–frequency plane and anything below is annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedImage {
    pub image: RgbImage,
    pub bins: usize,
    pub frames: usize,
}

/// Standard sector HSV→RGB with `h` in degrees.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

/// Min-max normalized log-energy over the unpadded frames, bin-major.
fn brightness(spec: &Spectrogram) -> Vec<f64> {
    let frames = spec.original_frames;
    let cells: Vec<f64> = (0..spec.bins())
        .flat_map(|b| (0..frames).map(move |f| (b, f)))
        .map(|(b, f)| spec.get(b, f))
        .collect();
    let lo = cells.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cells.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        cells.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; cells.len()]
    }
}

fn check_shapes(spec: &Spectrogram, map: &RelevanceMap) -> Result<(), VizError> {
    if spec.bins() != map.bins() || spec.original_frames != map.frames() {
        return Err(VizError::Shape(format!(
            "spectrogram is {}×{} (unpadded) but relevance map is {}×{}",
            spec.bins(),
            spec.original_frames,
            map.bins(),
            map.frames()
        )));
    }
    Ok(())
}

/// Hue from relevance (240° at 0, 0° at 1), value from energy; low
/// frequencies at the bottom.
pub fn compose(spec: &Spectrogram, map: &RelevanceMap) -> Result<ComposedImage, VizError> {
    check_shapes(spec, map)?;
    let (bins, frames) = (spec.bins(), spec.original_frames);
    let v = brightness(spec);
    let mut image = RgbImage::new(frames, bins, [0, 0, 0]);
    for b in 0..bins {
        for f in 0..frames {
            let rel = map.get(b, f);
            image.set(f, bins - 1 - b, hsv_to_rgb(240.0 * (1.0 - rel), 1.0, v[b * frames + f]));
        }
    }
    Ok(ComposedImage { image, bins, frames })
}

/// Grayscale spectrogram panel with the same value channel as [`compose`].
pub fn grayscale(spec: &Spectrogram) -> ComposedImage {
    let (bins, frames) = (spec.bins(), spec.original_frames);
    let v = brightness(spec);
    let mut image = RgbImage::new(frames, bins, [0, 0, 0]);
    for b in 0..bins {
        for f in 0..frames {
            let g = ((v[b * frames + f]).clamp(0.0, 1.0) * 255.0).round() as u8;
            image.set(f, bins - 1 - b, [g, g, g]);
        }
    }
    ComposedImage { image, bins, frames }
}

/// Column of the tick for a time in seconds.
pub fn tick_column(seconds: f64, width: usize) -> usize {
    ((FRAME_RATE as f64 * seconds).round().max(0.0) as usize).min(width.saturating_sub(1))
}

/// Appends an annotation strip with interval boundary ticks and centered
/// labels. Intervals past the end of the recording are clipped.
pub fn overlay(image: &ComposedImage, alignment: &PhonemeAlignment) -> (ComposedImage, Vec<String>) {
    let mut out = image.clone();
    let top = out.image.height;
    out.image.append_rows(STRIP_HEIGHT, STRIP_BACKGROUND);
    let width = out.frames;
    let duration = width as f64 / FRAME_RATE as f64;
    let mut warnings = Vec::new();
    for iv in &alignment.intervals {
        if iv.start >= duration {
            warnings.push(format!("interval {:?} starts after the recording ends; dropped", iv.label));
            continue;
        }
        let end = if iv.end > duration + 0.5 / FRAME_RATE as f64 {
            warnings.push(format!("interval {:?} clipped to {duration} s", iv.label));
            duration
        } else {
            iv.end
        };
        let (c0, c1) = (tick_column(iv.start, width), tick_column(end, width));
        for c in [c0, c1] {
            for y in top..out.image.height {
                out.image.set(c, y, INK);
            }
        }
        if !iv.label.is_empty() {
            let mid = (c0 + c1) as i64 / 2;
            let x = mid - font::text_width(&iv.label) as i64 / 2;
            font::draw_text(&mut out.image, x, (top + 2) as i64, &iv.label, INK);
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    (out, warnings)
}

/// Places `left` and `right` next to each other with a white gap.
pub fn side_by_side(left: &ComposedImage, right: &ComposedImage) -> RgbImage {
    let height = left.image.height.max(right.image.height);
    let mut img = RgbImage::new(left.image.width + PANEL_GAP + right.image.width, height, [255, 255, 255]);
    img.blit(&left.image, 0, 0);
    img.blit(&right.image, left.image.width + PANEL_GAP, 0);
    img
}

/// Adds a title line above the image, widening it if the text needs room.
pub fn with_title(img: &RgbImage, title: &str) -> RgbImage {
    let band = font::GLYPH_HEIGHT + 4;
    let width = img.width.max(font::text_width(title) + 4);
    let mut out = RgbImage::new(width, img.height + band, [255, 255, 255]);
    font::draw_text(&mut out, 2, 2, title, INK);
    out.blit(img, 0, band);
    out
}

/// Square scatter plot with a legend in the top-left corner.
pub fn scatter(points: &[[f64; 2]], colors: &[[u8; 3]], legend: &[(String, [u8; 3])], size: usize) -> RgbImage {
    let mut img = RgbImage::new(size, size, [255, 255, 255]);
    let margin = 8.0;
    let span = |k: usize| {
        let lo = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xs), (y0, ys)) = (span(0), span(1));
    let usable = size as f64 - 2.0 * margin - 1.0;
    for (p, &c) in points.iter().zip(colors) {
        let px = (margin + (p[0] - x0) / xs * usable).round() as i64;
        let py = (margin + (1.0 - (p[1] - y0) / ys) * usable).round() as i64;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    img.set(x as usize, y as usize, c);
                }
            }
        }
    }
    for (k, (name, c)) in legend.iter().enumerate() {
        let y = 2 + k * (font::GLYPH_HEIGHT + 2);
        for dy in 0..5 {
            for dx in 0..5 {
                if 2 + dx < size && y + 1 + dy < size {
                    img.set(2 + dx, y + 1 + dy, *c);
                }
            }
        }
        font::draw_text(&mut img, 9, y as i64, name, INK);
    }
    img
}

/// 8-bit RGB, non-interlaced, fixed filter and compression so equal
/// images give equal bytes.
pub fn write_image(img: &RgbImage, path: &Path) -> Result<(), VizError> {
    let png_err = |e: png::EncodingError| VizError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::create(path).map_err(|source| VizError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::Sub);
    let mut writer = enc.write_header().map_err(png_err)?;
    let bytes: Vec<u8> = img.pixels.iter().flatten().copied().collect();
    writer.write_image_data(&bytes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn read_image(path: &Path) -> Result<RgbImage, VizError> {
    let png_err = |message: String| VizError::Png {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|source| VizError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(|e| png_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(format!("expected 8-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    let pixels = buf[..info.buffer_size()]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok(RgbImage {
        width: info.width as usize,
        height: info.height as usize,
        pixels,
    })
}
