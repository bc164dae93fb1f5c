//! Manifest ingestion, label extraction from per-beam powers,
//! sliding-window sample construction, train/validation splitting,
//! and epoch batching.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::{
    load_mask_cache, preprocess_sequence, save_mask_cache, MotionMaskSequence, PreprocessConfig,
};

/// Per-beam received powers, either inline or in a sidecar file of
/// little-endian 32-bit floats.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum PowerField {
    Inline(Vec<f64>),
    File(String),
}

/// One manifest line: a frame plus its supervision (an explicit beam
/// label, per-beam powers, or both).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FrameRecord {
    pub sequence_id: usize,
    pub frame_index: usize,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub powers: Option<PowerField>,
}

/// A frame with its label resolved and its image path absolute.
#[derive(Debug, Clone)]
pub struct ResolvedFrame {
    pub sequence_id: usize,
    pub frame_index: usize,
    pub image_path: PathBuf,
    pub label: usize,
}

/// One training/evaluation window: L+1 frame paths ending at the
/// anchor, and J+1 labels starting there.
#[derive(Debug, Clone)]
pub struct Sample {
    pub sequence_id: usize,
    pub anchor: usize,
    pub raw_window: Vec<PathBuf>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Sequence,
    Sample,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub granularity: Granularity,
    pub rng_seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_fraction: 0.8, granularity: Granularity::Sequence, rng_seed: 0 }
    }
}

/// Index of the maximum power, ties toward the lowest index.
pub fn labels_from_power(powers: &[f64]) -> Result<usize> {
    if powers.is_empty() {
        return Err(Error::Usage("cannot derive a beam label from an empty power vector".into()));
    }
    if let Some(bad) = powers.iter().find(|p| !p.is_finite()) {
        return Err(Error::Domain(format!("non-finite received power {bad}")));
    }
    let mut best = 0usize;
    for (i, &p) in powers.iter().enumerate() {
        if p > powers[best] {
            best = i;
        }
    }
    Ok(best)
}

fn read_power_file(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Config(format!(
            "power file {} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
}

/// Parse a line-delimited manifest and resolve every record to an
/// absolute image path and a concrete label (explicit labels win over
/// powers). Output is sorted by (sequence_id, frame_index).
pub fn ingest_manifest(manifest: &Path) -> Result<Vec<ResolvedFrame>> {
    let root = manifest.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let mut frames = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: FrameRecord = serde_json::from_str(line).map_err(|e| {
            Error::Config(format!("{}:{}: {e}", manifest.display(), lineno + 1))
        })?;
        let label = match (&record.label, &record.powers) {
            (Some(l), _) => *l,
            (None, Some(PowerField::Inline(p))) => labels_from_power(p)?,
            (None, Some(PowerField::File(rel))) => {
                labels_from_power(&read_power_file(&root.join(rel))?)?
            }
            (None, None) => {
                return Err(Error::Config(format!(
                    "{}:{}: record carries neither a label nor powers",
                    manifest.display(),
                    lineno + 1
                )))
            }
        };
        frames.push(ResolvedFrame {
            sequence_id: record.sequence_id,
            frame_index: record.frame_index,
            image_path: root.join(&record.image_path),
            label,
        });
    }
    frames.sort_by_key(|f| (f.sequence_id, f.frame_index));
    for pair in frames.windows(2) {
        if pair[0].sequence_id == pair[1].sequence_id {
            if pair[0].frame_index == pair[1].frame_index {
                return Err(Error::Config(format!(
                    "duplicate frame {} in sequence {}",
                    pair[0].frame_index, pair[0].sequence_id
                )));
            }
            if pair[1].frame_index != pair[0].frame_index + 1 {
                return Err(Error::Config(format!(
                    "sequence {} skips from frame {} to {}",
                    pair[0].sequence_id, pair[0].frame_index, pair[1].frame_index
                )));
            }
        }
    }
    Ok(frames)
}

/// Slide an (L+1 in, J+1 out) window over every sequence: anchor t
/// needs L history frames behind it and J labels ahead of it, so a
/// sequence of F frames yields max(0, F − L − J) samples.
pub fn window_sequences(frames: &[ResolvedFrame], l: usize, j: usize) -> Vec<Sample> {
    let mut by_seq: BTreeMap<usize, Vec<&ResolvedFrame>> = BTreeMap::new();
    for f in frames {
        by_seq.entry(f.sequence_id).or_default().push(f);
    }
    let mut samples = Vec::new();
    for (seq_id, seq) in by_seq {
        let f = seq.len();
        if f < l + j + 1 {
            continue;
        }
        for t in l..f - j {
            samples.push(Sample {
                sequence_id: seq_id,
                anchor: seq[t].frame_index,
                raw_window: (t - l..=t).map(|k| seq[k].image_path.clone()).collect(),
                labels: (t..=t + j).map(|k| seq[k].label).collect(),
            });
        }
    }
    samples
}

/// Seeded partition at the requested granularity. At sequence
/// granularity whole sequences land on one side; train size is the
/// floored fraction of the unit count, and both sides must end up
/// nonempty.
pub fn split_dataset(
    samples: Vec<Sample>,
    spec: &SplitSpec,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if samples.is_empty() {
        return Err(Error::Usage("cannot split an empty sample set".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "train fraction must lie in (0,1), got {}",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    match spec.granularity {
        Granularity::Sample => {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            order.shuffle(&mut rng);
            let n_train = (samples.len() as f64 * spec.train_fraction).floor() as usize;
            if n_train == 0 || n_train == samples.len() {
                return Err(Error::Usage(format!(
                    "fraction {} leaves one side of a {}-sample split empty",
                    spec.train_fraction,
                    samples.len()
                )));
            }
            let train_idx: std::collections::HashSet<usize> =
                order[..n_train].iter().copied().collect();
            let mut train = Vec::with_capacity(n_train);
            let mut val = Vec::with_capacity(samples.len() - n_train);
            for (i, s) in samples.into_iter().enumerate() {
                if train_idx.contains(&i) {
                    train.push(s);
                } else {
                    val.push(s);
                }
            }
            Ok((train, val))
        }
        Granularity::Sequence => {
            let mut seq_ids: Vec<usize> = samples.iter().map(|s| s.sequence_id).collect();
            seq_ids.sort_unstable();
            seq_ids.dedup();
            seq_ids.shuffle(&mut rng);
            let n_train = (seq_ids.len() as f64 * spec.train_fraction).floor() as usize;
            if n_train == 0 || n_train == seq_ids.len() {
                return Err(Error::Usage(format!(
                    "fraction {} leaves one side of a {}-sequence split empty",
                    spec.train_fraction,
                    seq_ids.len()
                )));
            }
            let train_seqs: std::collections::HashSet<usize> =
                seq_ids[..n_train].iter().copied().collect();
            let (train, val): (Vec<Sample>, Vec<Sample>) =
                samples.into_iter().partition(|s| train_seqs.contains(&s.sequence_id));
            Ok((train, val))
        }
    }
}

/// Shuffle sample indices and chunk them; the final batch may be
/// short. Callers derive a fresh stream per epoch for reshuffling.
pub fn make_batches(n_samples: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Epoch-indexed RNG stream for batch shuffling: one seed, one stream
/// per epoch. Stream 0 is left to weight initialization so an epoch's
/// shuffle never replays the init draws.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Count of each beam label across all slots of all samples.
pub fn class_histogram(samples: &[Sample], n_classes: usize) -> Vec<usize> {
    let mut hist = vec![0usize; n_classes];
    for s in samples {
        for &l in &s.labels {
            if l < n_classes {
                hist[l] += 1;
            }
        }
    }
    hist
}

/// Deterministic cache file name for one sample window.
pub fn mask_cache_name(sample: &Sample) -> String {
    format!("s{:05}_t{:04}.mask", sample.sequence_id, sample.anchor)
}

/// Motion masks for one sample: served from `cache_dir` when present,
/// otherwise computed from the raw frames (and written back when a
/// cache directory is given).
pub fn sample_masks(
    sample: &Sample,
    config: &PreprocessConfig,
    cache_dir: Option<&Path>,
) -> Result<MotionMaskSequence> {
    if let Some(dir) = cache_dir {
        let path = dir.join(mask_cache_name(sample));
        if path.exists() {
            return load_mask_cache(&path, config.epsilon);
        }
    }
    let mut frames = Vec::with_capacity(sample.raw_window.len());
    for p in &sample.raw_window {
        let img = image::open(p)?.to_rgb8();
        frames.push(img);
    }
    let masks = preprocess_sequence(&frames, config)?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_mask_cache(&dir.join(mask_cache_name(sample)), &masks, config.epsilon)?;
    }
    Ok(masks)
}
