//! The training loop: cyclic cosine learning-rate schedule, batch
//! updates with gradient clipping and decoupled weight decay,
//! validation-driven best-model tracking with early stopping, and the
//! three-stage teacher/self-distillation/student pipeline.

use std::path::Path;
use std::time::Instant;

use crate::checkpoint::CheckpointBundle;
use crate::dataset::{epoch_rng, make_batches, sample_masks, Sample};
use crate::error::{Error, Result};
use crate::losses::{
    batch_distill_loss, batch_task_loss, combine_losses, sample_logit_matrix, task_loss,
    FocalConfig, KDConfig,
};
use crate::models::{forward_rows, masks_to_batch, Model, ModelConfig, Role};
use crate::nn::layers::apply_bn_updates;
use crate::nn::optim::{clip_global_norm, AdamW};
use crate::nn::{Binder, Graph};
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_lr: f64,
    pub cycle_epochs: usize,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
    pub focal: FocalConfig,
    pub kd: KDConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 100,
            initial_lr: 1e-4,
            min_lr: 1e-6,
            cycle_epochs: 10,
            weight_decay: 1e-4,
            clip_norm: 10.0,
            patience: 20,
            seed: 7,
            focal: FocalConfig::default(),
            kd: KDConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if self.cycle_epochs == 0 {
            return Err(Error::Config("cosine cycle needs at least one epoch".into()));
        }
        if !(self.initial_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return Err(Error::Config("learning rates must satisfy 0 < min ≤ initial".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        self.focal.validate()?;
        self.kd.validate()?;
        Ok(())
    }

    pub fn digest(&self) -> String {
        use sha2::Digest;
        let json = serde_json::to_string(self).expect("config serializes");
        crate::models::hex_string(&sha2::Sha256::digest(json.as_bytes())[..8])
    }
}

/// One line of the run log. Wall-clock time is tracked for live
/// diagnostics but never serialized, so logs from identical runs are
/// identical files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    #[serde(skip_serializing, default)]
    pub wall_seconds: f64,
}

/// Cyclic cosine annealing: restarts every `cycle_epochs`, gliding
/// from `initial_lr` down to `min_lr` within each cycle.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let cycle = cfg.cycle_epochs;
    if cycle <= 1 {
        return cfg.initial_lr;
    }
    let pos = epoch % cycle;
    let progress = pos as f64 / (cycle - 1) as f64;
    cfg.min_lr + 0.5 * (cfg.initial_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Where training reads its samples and mask cache from.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub preprocess: &'a PreprocessConfig,
    pub cache_dir: Option<&'a Path>,
}

/// Mean per-slot task loss over a sample set, evaluation mode.
pub fn validate(model: &Model, samples: &[Sample], data: &TrainData, cfg: &TrainConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    let slots = model.config.horizon + 1;
    let mut total = 0.0;
    for chunk in samples.chunks(cfg.batch_size) {
        let masks = chunk
            .iter()
            .map(|s| sample_masks(s, data.preprocess, data.cache_dir))
            .collect::<Result<Vec<_>>>()?;
        let rows = model.forward_batch(&masks)?;
        for (b, sample) in chunk.iter().enumerate() {
            let logits = sample_logit_matrix(&rows, chunk.len(), slots, b);
            total += task_loss(&logits, &sample.labels, &cfg.focal)?;
        }
    }
    Ok(total / (samples.len() * slots) as f64)
}

/// Best-validation bookkeeping with patience-based stopping.
struct BestTracker {
    best: f64,
    epochs_since_improvement: usize,
    patience: usize,
}

enum Observation {
    Improved,
    NoImprovement,
    Stop,
}

impl BestTracker {
    fn new(patience: usize) -> Self {
        BestTracker { best: f64::INFINITY, epochs_since_improvement: 0, patience }
    }

    fn observe(&mut self, val_loss: f64) -> Observation {
        if val_loss < self.best {
            self.best = val_loss;
            self.epochs_since_improvement = 0;
            Observation::Improved
        } else {
            self.epochs_since_improvement += 1;
            if self.epochs_since_improvement >= self.patience {
                Observation::Stop
            } else {
                Observation::NoImprovement
            }
        }
    }
}

#[derive(Debug)]
pub struct FitOutcome {
    pub bundle: CheckpointBundle,
    pub history: Vec<EpochRecord>,
    /// Batches for which a guiding forward pass ran.
    pub teacher_forwards: usize,
}

/// Train `model` and return the best checkpoint seen, not the last.
/// With `kd.beta > 0`, each batch also runs `teacher` (frozen, on its
/// own full-length window) and distills from its logits; the student
/// itself consumes the most recent `model.config.window` masks.
pub fn fit(
    model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    teacher: Option<&Model>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    model.config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Usage("validation set is empty".into()));
    }
    if cfg.kd.beta > 0.0 && teacher.is_none() {
        return Err(Error::Usage("distillation weight set but no guiding model given".into()));
    }
    if let Some(t) = teacher {
        if t.config.window < model.config.window {
            return Err(Error::Usage(format!(
                "guiding model sees {} masks but the learner needs {}",
                t.config.window, model.config.window
            )));
        }
        if t.config.n_classes != model.config.n_classes || t.config.horizon != model.config.horizon {
            return Err(Error::Usage("guide and learner must share beam classes and horizon".into()));
        }
    }
    let slots = model.config.horizon + 1;
    for s in data.train.iter().chain(data.val.iter()).take(1) {
        if s.labels.len() != slots {
            return Err(Error::Usage(format!(
                "samples carry {} labels but the model predicts {slots} slots",
                s.labels.len()
            )));
        }
    }

    let mut model = model;
    let mut optimizer = AdamW::new(cfg.weight_decay);
    let mut tracker = BestTracker::new(cfg.patience);
    let mut best_params = model.params.clone();
    let mut best_epoch = 0usize;
    let mut history = Vec::new();
    let mut teacher_forwards = 0usize;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        let mut rng = epoch_rng(cfg.seed, epoch);
        let batches = make_batches(data.train.len(), cfg.batch_size, &mut rng);
        let mut loss_sum = 0.0;

        for (batch_idx, batch) in batches.iter().enumerate() {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &data.train[i]).collect();
            let masks = samples
                .iter()
                .map(|s| sample_masks(s, data.preprocess, data.cache_dir))
                .collect::<Result<Vec<_>>>()?;
            let b = samples.len();
            let mut labels = Vec::with_capacity(slots * b);
            for j in 0..slots {
                for s in &samples {
                    labels.push(s.labels[j]);
                }
            }
            let divisor = (b * slots) as f64;

            let teacher_rows = match teacher {
                Some(t) if cfg.kd.beta > 0.0 => {
                    teacher_forwards += 1;
                    Some(t.forward_batch(&masks)?)
                }
                _ => None,
            };

            let input = masks_to_batch(&masks, &model.config)?;
            let mut g = Graph::new();
            let mut binder = Binder::new(&model.params);
            let x = g.constant(input);
            let mut bn_updates = Vec::new();
            let logits = forward_rows(&mut g, &mut binder, &model.config, x, b, Some(&mut bn_updates));
            let task = batch_task_loss(&mut g, logits, &labels, &cfg.focal, divisor);
            let loss = match &teacher_rows {
                Some(t_rows) => {
                    let distill =
                        batch_distill_loss(&mut g, t_rows, logits, cfg.kd.temperature, divisor);
                    combine_losses(&mut g, task, Some(distill), cfg.kd.beta)
                }
                None => combine_losses(&mut g, task, None, 0.0),
            };
            let loss_value = g.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { loss: loss_value, epoch, batch: batch_idx });
            }
            loss_sum += loss_value;

            let mut grads = g.backward(loss);
            let mut by_name = binder.grads_by_name(&mut grads);
            clip_global_norm(&mut by_name, cfg.clip_norm);
            optimizer.step(&mut model.params, &by_name, lr);
            apply_bn_updates(&mut model.params, &bn_updates);
        }

        let train_loss = loss_sum / batches.len() as f64;
        let val_loss = validate(&model, data.val, data, cfg)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        match tracker.observe(val_loss) {
            Observation::Improved => {
                best_params = model.params.clone();
                best_epoch = epoch;
            }
            Observation::NoImprovement => {}
            Observation::Stop => break,
        }
    }

    let bundle = CheckpointBundle {
        model: Model { config: model.config, params: best_params },
        epoch: best_epoch,
        best_val_loss: tracker.best,
        seed: cfg.seed,
        train_config_digest: cfg.digest(),
    };
    Ok(FitOutcome { bundle, history, teacher_forwards })
}

/// Distillation weight and temperature for a student window length:
/// the tabulated settings are L=8 → (0.3, 5), L=5 → (0.5, 3),
/// L=3 → (0.5, 4); other lengths use the nearest tabulated L, ties
/// toward the smaller one.
pub fn student_kd_defaults(window: usize) -> KDConfig {
    const TABLE: [(usize, f64, f64); 3] =
        [(3, 0.5, 4.0), (5, 0.5, 3.0), (8, 0.3, 5.0)];
    let (_, beta, temperature) = TABLE
        .iter()
        .copied()
        .min_by_key(|&(l, _, _)| (window.abs_diff(l), l))
        .unwrap();
    KDConfig { beta, temperature }
}

pub const SELF_KD: KDConfig = KDConfig { beta: 0.3, temperature: 2.0 };

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub train: TrainConfig,
    /// Distillation settings for the self-refinement stage.
    pub self_kd: KDConfig,
    /// Student-stage distillation; None picks the tabulated defaults
    /// for the student's window length.
    pub student_kd: Option<KDConfig>,
}

impl PipelineConfig {
    pub fn new(teacher: ModelConfig, student: ModelConfig, train: TrainConfig) -> Self {
        PipelineConfig { teacher, student, train, self_kd: SELF_KD, student_kd: None }
    }
}

#[derive(Debug)]
pub struct StageOutcome {
    pub bundle: CheckpointBundle,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub teacher_vanilla: StageOutcome,
    pub teacher_selfkd: StageOutcome,
    pub student: StageOutcome,
}

fn stage_config(base: &TrainConfig, stage: u64, kd: KDConfig) -> TrainConfig {
    TrainConfig { seed: base.seed.wrapping_add(stage), kd, ..base.clone() }
}

/// The full three-stage schedule: a vanilla teacher, a freshly
/// initialized teacher refined under the first one's guidance, and a
/// student distilled from the refined teacher.
pub fn run_pipeline(
    data: &TrainData,
    cfg: &PipelineConfig,
    mut on_epoch: impl FnMut(&str, &EpochRecord),
) -> Result<PipelineOutcome> {
    if cfg.teacher.role != Role::Teacher || cfg.student.role != Role::Student {
        return Err(Error::Usage("pipeline needs a teacher config and a student config".into()));
    }

    let vanilla_cfg = stage_config(&cfg.train, 0, KDConfig::default());
    let vanilla_model = Model::init(cfg.teacher.clone(), vanilla_cfg.seed)?;
    let vanilla = fit(vanilla_model, data, &vanilla_cfg, None, |r| on_epoch("teacher-vanilla", r))?;

    let selfkd_cfg = stage_config(&cfg.train, 1, cfg.self_kd);
    let selfkd_model = Model::init(cfg.teacher.clone(), selfkd_cfg.seed)?;
    let selfkd = fit(
        selfkd_model,
        data,
        &selfkd_cfg,
        Some(&vanilla.bundle.model),
        |r| on_epoch("teacher-self-kd", r),
    )?;

    let student_kd = cfg.student_kd.unwrap_or_else(|| student_kd_defaults(cfg.student.window));
    let student_cfg = stage_config(&cfg.train, 2, student_kd);
    let student_model = Model::init(cfg.student.clone(), student_cfg.seed)?;
    let student = fit(
        student_model,
        data,
        &student_cfg,
        Some(&selfkd.bundle.model),
        |r| on_epoch("student-kd", r),
    )?;

    Ok(PipelineOutcome {
        teacher_vanilla: StageOutcome { bundle: vanilla.bundle, history: vanilla.history },
        teacher_selfkd: StageOutcome { bundle: selfkd.bundle, history: selfkd.history },
        student: StageOutcome { bundle: student.bundle, history: student.history },
    })
}

/// One serialized EpochRecord per line.
pub fn write_run_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::new();
    for record in history {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_run_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ingest_manifest, split_dataset, window_sequences, SplitSpec};
    use crate::models::ConvSpec;
    use crate::synthetic_scene::{generate_dataset, manifest_path, SceneConfig};

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn lr_schedule_endpoints_and_reset() {
        let cfg = TrainConfig { cycle_epochs: 10, ..TrainConfig::default() };
        approx(lr_at(0, &cfg), 1e-4, 1e-12);
        approx(lr_at(9, &cfg), 1e-6, 1e-12);
        approx(lr_at(10, &cfg), 1e-4, 1e-12);
        let odd = TrainConfig { cycle_epochs: 11, ..TrainConfig::default() };
        approx(lr_at(5, &odd), (1e-4 + 1e-6) / 2.0, 1e-12);
        for e in 0..30 {
            let lr = lr_at(e, &cfg);
            assert!(lr >= cfg.min_lr - 1e-15 && lr <= cfg.initial_lr + 1e-15);
        }
    }

    #[test]
    fn patience_halts_after_the_configured_gap() {
        let mut tracker = BestTracker::new(20);
        let mut epochs = 0;
        for e in 0..100 {
            let val = if e < 5 { 10.0 - e as f64 } else { 7.0 };
            epochs += 1;
            if matches!(tracker.observe(val), Observation::Stop) {
                break;
            }
        }
        assert_eq!(epochs, 25);
        approx(tracker.best, 6.0, 1e-12);
    }

    #[test]
    fn equal_loss_is_not_an_improvement() {
        let mut tracker = BestTracker::new(2);
        assert!(matches!(tracker.observe(1.0), Observation::Improved));
        assert!(matches!(tracker.observe(1.0), Observation::NoImprovement));
        assert!(matches!(tracker.observe(1.0), Observation::Stop));
    }

    #[test]
    fn tabulated_student_settings_and_nearest_fallback() {
        for (w, beta, temp) in [
            (8, 0.3, 5.0),
            (5, 0.5, 3.0),
            (3, 0.5, 4.0),
            (4, 0.5, 4.0),  // tie between 3 and 5 goes to 3
            (2, 0.5, 4.0),
            (6, 0.5, 3.0),
            (20, 0.3, 5.0),
        ] {
            let kd = student_kd_defaults(w);
            assert_eq!((kd.beta, kd.temperature), (beta, temp), "window {w}");
        }
    }

    #[test]
    fn run_log_round_trips_without_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.log");
        let history = vec![
            EpochRecord { epoch: 0, train_loss: 1.5, val_loss: 1.2, lr: 1e-4, wall_seconds: 3.3 },
            EpochRecord { epoch: 1, train_loss: 1.1, val_loss: 1.0, lr: 9e-5, wall_seconds: 3.1 },
        ];
        write_run_log(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("wall_seconds"));
        let back = read_run_log(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].epoch, 1);
        approx(back[1].val_loss, 1.0, 1e-12);
        assert_eq!(back[0].wall_seconds, 0.0);
    }

    fn micro_scene() -> SceneConfig {
        SceneConfig {
            frame_height: 32,
            frame_width: 32,
            object_size: (4, 4),
            speed_range: (1, 1),
            n_distractors: 1,
            frames_per_sequence: 6,
            n_sequences: 3,
            geometry: crate::beam_oracle::ArrayGeometry { n_antennas: 4, spacing: 0.5 },
            codebook_size: 8,
            rng_seed: 11,
            ..SceneConfig::default()
        }
    }

    fn micro_model(window: usize, role: crate::models::Role) -> ModelConfig {
        let base = match role {
            crate::models::Role::Teacher => ModelConfig::desk_teacher(window, 1, 8),
            crate::models::Role::Student => ModelConfig::desk_student(window, 1, 8),
        };
        ModelConfig {
            input_dims: (16, 16),
            cnn_spec: vec![ConvSpec::s2(4), ConvSpec::s2(8)],
            pool_grid: (2, 2),
            ..base
        }
    }

    struct MicroData {
        _dir: tempfile::TempDir,
        train: Vec<Sample>,
        val: Vec<Sample>,
        preprocess: PreprocessConfig,
    }

    fn micro_data() -> MicroData {
        let dir = tempfile::tempdir().unwrap();
        let scene = micro_scene();
        generate_dataset(&scene, dir.path()).unwrap();
        let frames = ingest_manifest(&manifest_path(dir.path())).unwrap();
        let samples = window_sequences(&frames, 2, 1);
        let (train, val) = split_dataset(
            samples,
            &SplitSpec { train_fraction: 0.67, ..SplitSpec::default() },
        )
        .unwrap();
        MicroData {
            _dir: dir,
            train,
            val,
            preprocess: PreprocessConfig::new(16, 16, 0.1).unwrap(),
        }
    }

    fn quick_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs,
            initial_lr: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fit_runs_and_returns_the_best_epoch() {
        let data = micro_data();
        let td = TrainData {
            train: &data.train,
            val: &data.val,
            preprocess: &data.preprocess,
            cache_dir: None,
        };
        let model = Model::init(micro_model(2, Role::Teacher), 1).unwrap();
        let out = fit(model, &td, &quick_cfg(3), None, |_| {}).unwrap();
        assert_eq!(out.history.len(), 3);
        assert_eq!(out.teacher_forwards, 0);
        let best_from_history = out
            .history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        approx(out.bundle.best_val_loss, best_from_history, 1e-12);
        assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
        assert_eq!(
            out.bundle.epoch,
            out.history
                .iter()
                .min_by(|a, b| a.val_loss.partial_cmp(&b.val_loss).unwrap())
                .unwrap()
                .epoch
        );
    }

    #[test]
    fn identical_seeds_reproduce_the_history_exactly() {
        let data = micro_data();
        let td = TrainData {
            train: &data.train,
            val: &data.val,
            preprocess: &data.preprocess,
            cache_dir: None,
        };
        let cfg = quick_cfg(2);
        let a = fit(Model::init(micro_model(2, Role::Teacher), 1).unwrap(), &td, &cfg, None, |_| {})
            .unwrap();
        let b = fit(Model::init(micro_model(2, Role::Teacher), 1).unwrap(), &td, &cfg, None, |_| {})
            .unwrap();
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_loss.to_bits(), rb.val_loss.to_bits());
        }
    }

    #[test]
    fn distillation_requires_a_guide_and_invokes_it() {
        let data = micro_data();
        let td = TrainData {
            train: &data.train,
            val: &data.val,
            preprocess: &data.preprocess,
            cache_dir: None,
        };
        let cfg = TrainConfig {
            kd: KDConfig { beta: 0.5, temperature: 2.0 },
            ..quick_cfg(1)
        };
        let student = Model::init(micro_model(1, Role::Student), 2).unwrap();
        match fit(student.clone(), &td, &cfg, None, |_| {}) {
            Err(Error::Usage(_)) => {}
            r => panic!("expected usage error, got {r:?}"),
        }

        let teacher = Model::init(micro_model(2, Role::Teacher), 1).unwrap();
        let out = fit(student, &td, &cfg, Some(&teacher), |_| {}).unwrap();
        assert!(out.teacher_forwards > 0);
        let n_batches = data.train.len().div_ceil(4);
        assert_eq!(out.teacher_forwards, n_batches);
    }

    #[test]
    fn shorter_learner_windows_accept_longer_guides_only() {
        let data = micro_data();
        let td = TrainData {
            train: &data.train,
            val: &data.val,
            preprocess: &data.preprocess,
            cache_dir: None,
        };
        let cfg = TrainConfig {
            kd: KDConfig { beta: 0.3, temperature: 2.0 },
            ..quick_cfg(1)
        };
        // learner window 2, guide window 1: rejected
        let guide = Model::init(micro_model(1, Role::Teacher), 3).unwrap();
        let learner = Model::init(micro_model(2, Role::Teacher), 4).unwrap();
        match fit(learner, &td, &cfg, Some(&guide), |_| {}) {
            Err(Error::Usage(_)) => {}
            r => panic!("expected usage error, got {r:?}"),
        }
    }

    #[test]
    fn validation_is_deterministic_and_uniform_at_the_focal_level() {
        let data = micro_data();
        let td = TrainData {
            train: &data.train,
            val: &data.val,
            preprocess: &data.preprocess,
            cache_dir: None,
        };
        let cfg = quick_cfg(1);
        let model = Model::init(micro_model(2, Role::Student), 9).unwrap();
        let a = validate(&model, data.val.as_slice(), &td, &cfg).unwrap();
        let b = validate(&model, data.val.as_slice(), &td, &cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        // a fresh model is near-uniform, so the loss sits near the
        // uniform focal value α(1−1/C)^γ ln C
        let uniform = (1.0 - 1.0 / 8.0f64).powi(2) * 8.0f64.ln();
        assert!((a - uniform).abs() / uniform < 0.2, "val {a} vs uniform {uniform}");
    }
}
