//! Frame preprocessing: grayscale conversion with bilinear resizing,
//! frame differencing, and threshold-based motion masks, plus a
//! bit-packed on-disk mask cache.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub out_height: usize,
    pub out_width: usize,
    pub epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { out_height: 32, out_width: 32, epsilon: 0.1 }
    }
}

impl PreprocessConfig {
    pub fn new(out_height: usize, out_width: usize, epsilon: f64) -> Result<Self> {
        if out_height == 0 || out_width == 0 {
            return Err(Error::Usage("resize target must be nonzero in both dimensions".into()));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!(
                "mask threshold must lie in (0,1), got {epsilon}"
            )));
        }
        Ok(PreprocessConfig { out_height, out_width, epsilon })
    }
}

/// Binary motion masks for one sample window, chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMaskSequence {
    pub masks: Vec<Array2<f64>>,
}

impl MotionMaskSequence {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// ITU luma (0.299 R + 0.587 G + 0.114 B on [0,1] channels) followed
/// by a center-aligned bilinear resize.
pub fn grayscale_resize(
    rgb: &image::RgbImage,
    config: &PreprocessConfig,
) -> Result<Array2<f64>> {
    let (w, h) = rgb.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Usage("empty input frame".into()));
    }
    let (h, w) = (h as usize, w as usize);
    let mut gray = Array2::<f64>::zeros((h, w));
    for (x, y, px) in rgb.enumerate_pixels() {
        let [r, g, b] = px.0;
        gray[(y as usize, x as usize)] =
            (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
    }
    Ok(bilinear_resize(&gray, config.out_height, config.out_width))
}

/// Center-aligned bilinear interpolation: destination pixel (i, j)
/// samples the source at ((i+0.5)·scale − 0.5, (j+0.5)·scale − 0.5),
/// clamped at the borders.
pub fn bilinear_resize(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    if (h, w) == (out_h, out_w) {
        return src.clone();
    }
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for i in 0..out_h {
        let sy = ((i as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for j in 0..out_w {
            let sx = ((j as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let top = src[(y0, x0)] * (1.0 - fx) + src[(y0, x1)] * fx;
            let bottom = src[(y1, x0)] * (1.0 - fx) + src[(y1, x1)] * fx;
            out[(i, j)] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

/// Absolute elementwise differences of consecutive frames: L+1 gray
/// images yield L difference images in chronological order.
pub fn difference_sequence(grays: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    if grays.len() < 2 {
        return Err(Error::Usage(format!(
            "differencing needs at least 2 frames, got {}",
            grays.len()
        )));
    }
    Ok(grays.windows(2).map(|pair| (&pair[1] - &pair[0]).mapv(f64::abs)).collect())
}

/// Threshold at ε times the per-image maximum: entries at or above it
/// become 1. A zero-maximum difference image maps to the all-zeros
/// mask rather than the all-ones mask the raw rule would produce.
pub fn motion_mask(diff: &Array2<f64>, epsilon: f64) -> Array2<f64> {
    let max = diff.iter().cloned().fold(0.0f64, f64::max);
    if max == 0.0 {
        return Array2::zeros(diff.raw_dim());
    }
    let threshold = epsilon * max;
    diff.mapv(|x| if x >= threshold { 1.0 } else { 0.0 })
}

/// Full pipeline for one window: L+1 raw frames in, L masks out.
pub fn preprocess_sequence(
    frames: &[image::RgbImage],
    config: &PreprocessConfig,
) -> Result<MotionMaskSequence> {
    let grays: Vec<Array2<f64>> =
        frames.iter().map(|f| grayscale_resize(f, config)).collect::<Result<_>>()?;
    let diffs = difference_sequence(&grays)?;
    Ok(MotionMaskSequence {
        masks: diffs.iter().map(|d| motion_mask(d, config.epsilon)).collect(),
    })
}

// ----------------------------------------------------------------------
// Mask cache
// ----------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 4] = b"MMSK";
const CACHE_VERSION: u32 = 1;

/// Serialize one window's masks: a fixed header carrying
/// (height, width, mask count, ε) followed by row-major bit-packed
/// mask planes, one byte boundary per mask.
pub fn save_mask_cache(path: &Path, seq: &MotionMaskSequence, epsilon: f64) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    let (h, w) = seq.masks.first().map(|m| m.dim()).unwrap_or((0, 0));
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.masks.len() as u32).to_le_bytes());
    buf.extend_from_slice(&epsilon.to_le_bytes());
    for mask in &seq.masks {
        assert_eq!(mask.dim(), (h, w), "mixed mask dimensions in one sequence");
        let mut byte = 0u8;
        let mut used = 0u8;
        for &v in mask.iter() {
            byte = (byte << 1) | (v != 0.0) as u8;
            used += 1;
            if used == 8 {
                buf.push(byte);
                byte = 0;
                used = 0;
            }
        }
        if used > 0 {
            buf.push(byte << (8 - used));
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Read back a cache file written by [`save_mask_cache`], verifying
/// the threshold matches the requesting configuration.
pub fn load_mask_cache(path: &Path, expected_epsilon: f64) -> Result<MotionMaskSequence> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 28];
    file.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != CACHE_MAGIC {
        return Err(Error::Config(format!("{} is not a mask cache file", path.display())));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(Error::Config(format!(
            "mask cache version {version} unsupported (expected {CACHE_VERSION})"
        )));
    }
    let h = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(header[16..20].try_into().unwrap()) as usize;
    let epsilon = f64::from_le_bytes(header[20..28].try_into().unwrap());
    if (epsilon - expected_epsilon).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "mask cache built with threshold {epsilon}, requested {expected_epsilon}"
        )));
    }
    let bytes_per_mask = (h * w).div_ceil(8);
    let mut body = Vec::new();
    file.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != bytes_per_mask * count {
        return Err(Error::Config(format!(
            "mask cache {} truncated: expected {} body bytes, found {}",
            path.display(),
            bytes_per_mask * count,
            body.len()
        )));
    }
    let mut masks = Vec::with_capacity(count);
    for m in 0..count {
        let plane = &body[m * bytes_per_mask..(m + 1) * bytes_per_mask];
        let mut mask = Array2::<f64>::zeros((h, w));
        for (flat, slot) in mask.iter_mut().enumerate() {
            let bit = (plane[flat / 8] >> (7 - flat % 8)) & 1;
            *slot = bit as f64;
        }
        masks.push(mask);
    }
    Ok(MotionMaskSequence { masks })
}

/// Write a grayscale [0,1] image as an 8-bit PNG row-major buffer;
/// used by the synthetic generator and handy in tests.
pub fn gray_to_rgb_image(gray: &Array2<f64>) -> image::RgbImage {
    let (h, w) = gray.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (gray[(y as usize, x as usize)].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([v, v, v])
    })
}
