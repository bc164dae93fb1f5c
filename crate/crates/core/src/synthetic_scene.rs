//! Desk-scale dataset generator with analytically known labels: a
//! bright rectangle sweeps across a static textured background, its
//! horizontal position maps linearly to an azimuth, and the optimal
//! beam at that azimuth is the frame's label.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::beam_oracle::{
    build_codebook, optimal_beam, steering_vector, ArrayGeometry, ChannelSnapshot, Codebook,
};
use crate::error::{Error, Result};
use crate::preprocess::gray_to_rgb_image;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub frame_height: usize,
    pub frame_width: usize,
    /// Object rectangle (height, width) in pixels.
    pub object_size: (usize, usize),
    /// Inclusive bounds on the per-sequence speed in pixels per step.
    /// Fractional speeds are deliberate: the object is rendered at the
    /// rounded position, so per-step pixel displacements vary within a
    /// sequence and a longer mask window pins the speed down more
    /// tightly than a short one.
    pub speed_range: (f64, f64),
    /// Azimuth interval (radians) the frame width spans.
    pub field_of_view: (f64, f64),
    pub n_distractors: usize,
    pub frames_per_sequence: usize,
    pub n_sequences: usize,
    pub geometry: ArrayGeometry,
    pub codebook_size: usize,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            frame_height: 64,
            frame_width: 64,
            object_size: (6, 6),
            speed_range: (1.0, 2.0),
            field_of_view: (-std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_3),
            n_distractors: 2,
            frames_per_sequence: 30,
            n_sequences: 120,
            geometry: ArrayGeometry { n_antennas: 8, spacing: 0.5 },
            codebook_size: 16,
            rng_seed: 7,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let (oh, ow) = self.object_size;
        if oh == 0 || ow == 0 || oh > self.frame_height || ow > self.frame_width {
            return Err(Error::Domain(format!(
                "object {oh}x{ow} does not fit a {}x{} frame",
                self.frame_height, self.frame_width
            )));
        }
        let (lo, hi) = self.speed_range;
        if !(lo >= 1.0 && hi >= lo) {
            return Err(Error::Domain(format!("bad speed range ({lo}, {hi})")));
        }
        let travel = hi * self.frames_per_sequence.saturating_sub(1) as f64;
        let track = (self.frame_width - ow) as f64;
        if travel > track {
            return Err(Error::Domain(format!(
                "speed {hi} over {} frames travels {travel} px but only {track} px fit; \
                 the object would stall at the frame edge",
                self.frames_per_sequence
            )));
        }
        if !(self.field_of_view.0 < self.field_of_view.1) {
            return Err(Error::Domain("field of view must be a nonempty interval".into()));
        }
        let half_pi = std::f64::consts::FRAC_PI_2;
        if self.field_of_view.0 < -half_pi || self.field_of_view.1 > half_pi {
            return Err(Error::Domain("field of view must lie within [-pi/2, pi/2]".into()));
        }
        if self.frames_per_sequence < 3 {
            return Err(Error::Domain("sequences need at least 3 frames".into()));
        }
        Ok(())
    }

    pub fn codebook(&self) -> Result<Codebook> {
        build_codebook(self.geometry, self.codebook_size, 1.0)
    }
}

/// One generated sequence: frames, the object's left-edge track, and
/// the per-frame optimal beams.
#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub sequence_id: usize,
    pub frames: Vec<image::RgbImage>,
    /// Per frame (x, y): left edge column and top edge row of the object.
    pub positions: Vec<(f64, usize)>,
    pub labels: Vec<usize>,
}

/// Map a horizontal pixel position to a LoS channel: azimuth is the
/// linear interpolation of the field of view across the frame width,
/// the channel is the steering vector there, and the noise floor is 1.
pub fn position_to_channel(x: f64, config: &SceneConfig) -> Result<ChannelSnapshot> {
    if !(x >= 0.0 && x < config.frame_width as f64) {
        return Err(Error::Domain(format!(
            "position {x} outside frame of width {}",
            config.frame_width
        )));
    }
    let (lo, hi) = config.field_of_view;
    let theta = lo + x / (config.frame_width - 1) as f64 * (hi - lo);
    Ok(ChannelSnapshot { h: steering_vector(theta, config.geometry)?, noise_power: 1.0 })
}

fn label_for_position(x: f64, config: &SceneConfig, codebook: &Codebook) -> Result<usize> {
    optimal_beam(&position_to_channel(x, config)?, codebook)
}

/// Luminance bands keeping the object at least 0.35 above everything
/// static, so difference images are informative by construction.
const BACKGROUND_RANGE: (f64, f64) = (0.05, 0.35);
const DISTRACTOR_RANGE: (f64, f64) = (0.45, 0.6);
const OBJECT_LUMA: f64 = 0.95;

/// Render one sequence. The background texture, distractor layout,
/// vertical lane, speed, and traversal direction are all drawn from
/// `rng`; the object never reverses or stalls, so labels are monotone
/// along the traversal.
pub fn generate_sequence(
    config: &SceneConfig,
    sequence_id: usize,
    codebook: &Codebook,
    rng: &mut ChaCha8Rng,
) -> Result<SequenceRecord> {
    config.validate()?;
    let (fh, fw) = (config.frame_height, config.frame_width);
    let (oh, ow) = config.object_size;

    let mut background = Array2::<f64>::zeros((fh, fw));
    for v in background.iter_mut() {
        *v = BACKGROUND_RANGE.0 + rng.random::<f64>() * (BACKGROUND_RANGE.1 - BACKGROUND_RANGE.0);
    }
    for _ in 0..config.n_distractors {
        let dh = rng.random_range(3..=(fh / 4).max(3));
        let dw = rng.random_range(3..=(fw / 4).max(3));
        let top = rng.random_range(0..=fh - dh);
        let left = rng.random_range(0..=fw - dw);
        let luma =
            DISTRACTOR_RANGE.0 + rng.random::<f64>() * (DISTRACTOR_RANGE.1 - DISTRACTOR_RANGE.0);
        for i in top..top + dh {
            for j in left..left + dw {
                background[(i, j)] = luma;
            }
        }
    }

    let speed = rng.random_range(config.speed_range.0..=config.speed_range.1);
    let track = fw - ow;
    let travel = speed * (config.frames_per_sequence - 1);
    let slack = track - travel;
    let offset = if slack > 0 { rng.random_range(0..=slack) } else { 0 };
    let left_to_right = rng.random::<bool>();
    let y = rng.random_range(0..=fh - oh);

    let mut frames = Vec::with_capacity(config.frames_per_sequence);
    let mut positions = Vec::with_capacity(config.frames_per_sequence);
    let mut labels = Vec::with_capacity(config.frames_per_sequence);
    for k in 0..config.frames_per_sequence {
        let x = if left_to_right { offset + k * speed } else { track - offset - k * speed };
        let mut frame = background.clone();
        for i in y..y + oh {
            for j in x..x + ow {
                frame[(i, j)] = OBJECT_LUMA;
            }
        }
        frames.push(gray_to_rgb_image(&frame));
        positions.push((x as f64, y));
        labels.push(label_for_position(x as f64, config, codebook)?);
    }
    Ok(SequenceRecord { sequence_id, frames, positions, labels })
}

/// Generate all sequences and write them under `out_dir` as PNG frames
/// plus a `manifest.jsonl`. Per-sequence RNG streams are pre-seeded
/// from the master seed, so output is byte-reproducible.
pub fn generate_dataset(config: &SceneConfig, out_dir: &Path) -> Result<Vec<SequenceRecord>> {
    config.validate()?;
    let codebook = config.codebook()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let seeds: Vec<u64> = (0..config.n_sequences).map(|_| master.random()).collect();

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(config.n_sequences);
    let mut manifest = String::new();
    for (sid, seed) in seeds.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let record = generate_sequence(config, sid, &codebook, &mut rng)?;
        let seq_dir = out_dir.join(format!("seq{sid:04}"));
        std::fs::create_dir_all(&seq_dir).map_err(|e| Error::io(&seq_dir, e))?;
        for (k, frame) in record.frames.iter().enumerate() {
            let rel = format!("seq{sid:04}/frame{k:03}.png");
            let path = out_dir.join(&rel);
            frame.save(&path)?;
            let line = crate::dataset::FrameRecord {
                sequence_id: sid,
                frame_index: k,
                image_path: rel,
                label: Some(record.labels[k]),
                powers: None,
            };
            manifest.push_str(&serde_json::to_string(&line)?);
            manifest.push('\n');
        }
        records.push(record);
    }
    let manifest_path = out_dir.join("manifest.jsonl");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;

    let config_path = out_dir.join("scene_config.json");
    let config_json = serde_json::to_string_pretty(config)?;
    std::fs::write(&config_path, config_json).map_err(|e| Error::io(&config_path, e))?;
    Ok(records)
}

/// Path of the manifest inside a generated dataset directory.
pub fn manifest_path(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("manifest.jsonl")
}
