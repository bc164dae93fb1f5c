//! Command-line entry points: synthetic data generation, manifest
//! ingestion, mask-cache preprocessing, staged training, evaluation,
//! and report rendering.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{file_digest, load_checkpoint, save_checkpoint, CheckpointBundle};
use crate::dataset::{ingest_manifest, split_dataset, window_sequences, Sample, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::KDConfig;
use crate::metrics::{evaluate_model, write_report};
use crate::models::{Model, ModelConfig, Role};
use crate::preprocess::PreprocessConfig;
use crate::report::{plot_slot_accuracy, plot_slot_dba, plot_training_curves, render_markdown};
use crate::synthetic_scene::{generate_dataset, manifest_path, SceneConfig};
use crate::training::{
    fit, read_run_log, student_kd_defaults, write_run_log, TrainConfig, TrainData, SELF_KD,
};

/// How raw frames turn into training windows: L history masks in,
/// J future slots out.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct Windowing {
    pub window: usize,
    pub horizon: usize,
}

impl Default for Windowing {
    fn default() -> Self {
        Windowing { window: 4, horizon: 3 }
    }
}

/// Everything one experiment needs, loadable from a TOML preset.
/// Missing sections fall back to the desk-scale defaults.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub preprocess: PreprocessConfig,
    pub windowing: Windowing,
    pub split: SplitSpec,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub train: TrainConfig,
    pub self_kd: KDConfig,
    pub student_kd: Option<KDConfig>,
    pub delta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneConfig::default(),
            preprocess: PreprocessConfig { out_height: 64, out_width: 64, epsilon: 0.1 },
            windowing: Windowing { window: 4, horizon: 3 },
            split: SplitSpec { train_fraction: 5.0 / 6.0, ..SplitSpec::default() },
            teacher: ModelConfig::desk_teacher(4, 3, 16),
            student: ModelConfig::desk_student(2, 3, 16),
            train: TrainConfig { epochs: 40, initial_lr: 3e-4, ..TrainConfig::default() },
            self_kd: SELF_KD,
            student_kd: None,
            delta: 5.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Toml(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => {
                let cfg = RunConfig::default();
                cfg.validate()?;
                Ok(cfg)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        PreprocessConfig::new(
            self.preprocess.out_height,
            self.preprocess.out_width,
            self.preprocess.epsilon,
        )?;
        self.teacher.validate()?;
        self.student.validate()?;
        self.train.validate()?;
        self.self_kd.validate()?;
        if let Some(kd) = &self.student_kd {
            kd.validate()?;
        }
        if self.windowing.window == 0 {
            return Err(Error::Config("windowing.window must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        let mask_dims = (self.preprocess.out_height, self.preprocess.out_width);
        for (name, model) in [("teacher", &self.teacher), ("student", &self.student)] {
            if model.input_dims != mask_dims {
                return Err(Error::Config(format!(
                    "{name} expects {}x{} masks but preprocessing produces {}x{}",
                    model.input_dims.0, model.input_dims.1, mask_dims.0, mask_dims.1
                )));
            }
            if model.window > self.windowing.window {
                return Err(Error::Config(format!(
                    "{name} window {} exceeds the dataset window {}",
                    model.window, self.windowing.window
                )));
            }
            if model.horizon != self.windowing.horizon {
                return Err(Error::Config(format!(
                    "{name} horizon {} differs from the dataset horizon {}",
                    model.horizon, self.windowing.horizon
                )));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config("split.train_fraction must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    /// Task loss only.
    Vanilla,
    /// A fresh teacher guided by an already-trained one.
    #[value(name = "self-kd")]
    SelfKd,
    /// The student guided by a trained teacher.
    Kd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum SplitArg {
    Train,
    #[default]
    Val,
    All,
}

#[derive(Parser, Debug)]
#[command(
    name = "beamtrack",
    version,
    about = "Vision-aided long-term beam tracking with knowledge distillation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic moving-object dataset with oracle beam labels
    GenSynthetic {
        /// TOML run config; defaults to the desk-scale preset
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize an external frame manifest (labels resolved from
    /// powers where necessary) into a dataset directory
    Ingest {
        /// Line-delimited JSON manifest of frames
        #[arg(long)]
        manifest: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute the bit-packed motion-mask cache for a dataset
    Preprocess {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory containing manifest.jsonl
        #[arg(long)]
        data: PathBuf,
        /// Cache directory to fill
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one stage of the teacher/student pipeline
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint, log, and manifest
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long, value_enum)]
        stage: StageArg,
        /// Guiding checkpoint, required for the self-kd and kd stages
        #[arg(long)]
        teacher_checkpoint: Option<PathBuf>,
        /// Existing mask cache; defaults to <out>/mask_cache
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset split
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Output directory for eval_report.json
        #[arg(long)]
        out: PathBuf,
        /// Optional mask cache to reuse
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Render markdown tables and charts from one or more run directories
    Report {
        /// Run directory (repeatable); may contain eval_report.json
        /// and/or run.log
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse and execute; returns the process exit code (0 success,
/// 2 usage/config mistakes, 1 runtime failures).
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenSynthetic { config, out } => gen_synthetic(config.as_deref(), &out),
        Cmd::Ingest { manifest, out } => ingest(&manifest, &out),
        Cmd::Preprocess { config, data, out } => {
            preprocess_cmd(config.as_deref(), &resolve_data(data), &out)
        }
        Cmd::Train { config, data, out, role, stage, teacher_checkpoint, cache } => train_cmd(
            config.as_deref(),
            &resolve_data(data),
            &out,
            role,
            stage,
            teacher_checkpoint.as_deref(),
            cache.as_deref(),
        ),
        Cmd::Evaluate { checkpoint, data, config, split, out, cache } => eval_cmd(
            &checkpoint,
            &resolve_data(data),
            config.as_deref(),
            split,
            &out,
            cache.as_deref(),
        ),
        Cmd::Report { runs, out } => report_cmd(&runs, &out),
    }
}

/// Relative --data paths resolve against $BEAMTRACK_DATA_ROOT when it
/// is set.
fn resolve_data(path: PathBuf) -> PathBuf {
    if path.is_relative() {
        if let Ok(root) = std::env::var("BEAMTRACK_DATA_ROOT") {
            return PathBuf::from(root).join(path);
        }
    }
    path
}

#[derive(serde::Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_path: Option<String>,
    resolved_config: &'a RunConfig,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<&'static str, String>,
    seed: u64,
    artifact_digests: BTreeMap<String, String>,
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let path = dir.join("run_manifest.json");
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn digest_into(map: &mut BTreeMap<String, String>, path: &Path) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    map.insert(name, file_digest(path)?);
    Ok(())
}

fn gen_synthetic(config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let records = generate_dataset(&cfg.scene, out)?;
    let frames: usize = records.iter().map(|r| r.frames.len()).sum();
    eprintln!(
        "generated {} sequences ({frames} frames) into {}",
        records.len(),
        out.display()
    );

    let mut digests = BTreeMap::new();
    digest_into(&mut digests, &manifest_path(out))?;
    write_manifest(
        out,
        &RunManifest {
            command: "gen-synthetic",
            config_path: config.map(|p| p.display().to_string()),
            resolved_config: &cfg,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::from([("dataset", out.display().to_string())]),
            seed: cfg.scene.rng_seed,
            artifact_digests: digests,
        },
    )?;
    println!("{}", manifest_path(out).display());
    Ok(())
}

fn ingest(manifest: &Path, out: &Path) -> Result<()> {
    let frames = ingest_manifest(manifest)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut text = String::new();
    for f in &frames {
        let record = crate::dataset::FrameRecord {
            sequence_id: f.sequence_id,
            frame_index: f.frame_index,
            image_path: f.image_path.display().to_string(),
            label: Some(f.label),
            powers: None,
        };
        text.push_str(&serde_json::to_string(&record)?);
        text.push('\n');
    }
    let out_manifest = out.join("manifest.jsonl");
    std::fs::write(&out_manifest, text).map_err(|e| Error::io(&out_manifest, e))?;
    eprintln!("ingested {} frames into {}", frames.len(), out_manifest.display());
    println!("{}", out_manifest.display());
    Ok(())
}

fn load_samples(cfg: &RunConfig, data: &Path) -> Result<Vec<Sample>> {
    let frames = ingest_manifest(&manifest_path(data))?;
    let samples = window_sequences(&frames, cfg.windowing.window, cfg.windowing.horizon);
    if samples.is_empty() {
        return Err(Error::Usage(format!(
            "dataset {} yields no windows for L={} J={}",
            data.display(),
            cfg.windowing.window,
            cfg.windowing.horizon
        )));
    }
    Ok(samples)
}

fn preprocess_cmd(config: Option<&Path>, data: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let samples = load_samples(&cfg, data)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for sample in &samples {
        crate::dataset::sample_masks(sample, &cfg.preprocess, Some(out))?;
    }
    eprintln!(
        "cached motion masks for {} samples ({}x{}) in {}",
        samples.len(),
        cfg.preprocess.out_height,
        cfg.preprocess.out_width,
        out.display()
    );
    write_manifest(
        out,
        &RunManifest {
            command: "preprocess",
            config_path: config.map(|p| p.display().to_string()),
            resolved_config: &cfg,
            inputs: BTreeMap::from([("data", data.display().to_string())]),
            outputs: BTreeMap::from([("cache", out.display().to_string())]),
            seed: cfg.split.rng_seed,
            artifact_digests: BTreeMap::new(),
        },
    )?;
    println!("{}", out.display());
    Ok(())
}

fn train_cmd(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    role: RoleArg,
    stage: StageArg,
    teacher_checkpoint: Option<&Path>,
    cache: Option<&Path>,
) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(config)?;

    let model_cfg = match role {
        RoleArg::Teacher => cfg.teacher.clone(),
        RoleArg::Student => cfg.student.clone(),
    };
    let kd = match (role, stage) {
        (_, StageArg::Vanilla) => KDConfig::default(),
        (RoleArg::Teacher, StageArg::SelfKd) => cfg.self_kd,
        (RoleArg::Student, StageArg::Kd) => {
            cfg.student_kd.unwrap_or_else(|| student_kd_defaults(cfg.student.window))
        }
        (RoleArg::Student, StageArg::SelfKd) => {
            return Err(Error::Usage("self-kd refines the teacher, not the student".into()))
        }
        (RoleArg::Teacher, StageArg::Kd) => {
            return Err(Error::Usage("the kd stage trains the student; teachers use self-kd".into()))
        }
    };
    let guide = match stage {
        StageArg::Vanilla => {
            if teacher_checkpoint.is_some() {
                return Err(Error::Usage(
                    "--teacher-checkpoint has no effect in the vanilla stage".into(),
                ));
            }
            None
        }
        StageArg::SelfKd | StageArg::Kd => {
            let path = teacher_checkpoint.ok_or_else(|| {
                Error::Usage("this stage requires --teacher-checkpoint".into())
            })?;
            let bundle = load_checkpoint(path)?;
            if bundle.model.config.role != Role::Teacher {
                return Err(Error::Usage("the guiding checkpoint must hold a teacher".into()));
            }
            Some(bundle)
        }
    };
    cfg.train.kd = kd;

    let samples = load_samples(&cfg, data)?;
    let (train_set, val_set) = split_dataset(samples, &cfg.split)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let default_cache = out.join("mask_cache");
    let cache_dir = cache.map(Path::to_path_buf).unwrap_or(default_cache);
    std::fs::create_dir_all(&cache_dir).map_err(|e| Error::io(&cache_dir, e))?;

    let td = TrainData {
        train: &train_set,
        val: &val_set,
        preprocess: &cfg.preprocess,
        cache_dir: Some(&cache_dir),
    };
    eprintln!(
        "training {:?}/{:?}: {} train / {} val samples, beta={}, temperature={}",
        role,
        stage,
        train_set.len(),
        val_set.len(),
        cfg.train.kd.beta,
        cfg.train.kd.temperature
    );

    let model = Model::init(model_cfg, cfg.train.seed)?;
    let outcome = fit(model, &td, &cfg.train, guide.as_ref().map(|b| &b.model), |r| {
        eprintln!(
            "epoch {:>3}  train {:.6}  val {:.6}  lr {:.2e}  ({:.1}s)",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.wall_seconds
        );
    })?;

    let ckpt_path = out.join("checkpoint.ckpt");
    save_checkpoint(&outcome.bundle, &ckpt_path)?;
    let log_path = out.join("run.log");
    write_run_log(&log_path, &outcome.history)?;

    let mut digests = BTreeMap::new();
    digest_into(&mut digests, &ckpt_path)?;
    digest_into(&mut digests, &log_path)?;
    write_manifest(
        out,
        &RunManifest {
            command: "train",
            config_path: config.map(|p| p.display().to_string()),
            resolved_config: &cfg,
            inputs: BTreeMap::from([
                ("data", data.display().to_string()),
                (
                    "teacher_checkpoint",
                    teacher_checkpoint.map(|p| p.display().to_string()).unwrap_or_default(),
                ),
            ]),
            outputs: BTreeMap::from([
                ("checkpoint", ckpt_path.display().to_string()),
                ("run_log", log_path.display().to_string()),
            ]),
            seed: cfg.train.seed,
            artifact_digests: digests,
        },
    )?;
    eprintln!(
        "best val loss {:.6} at epoch {} after {} epochs",
        outcome.bundle.best_val_loss,
        outcome.bundle.epoch,
        outcome.history.len()
    );
    println!("{}", ckpt_path.display());
    Ok(())
}

fn eval_cmd(
    checkpoint: &Path,
    data: &Path,
    config: Option<&Path>,
    split: SplitArg,
    out: &Path,
    cache: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load_or_default(config)?;
    let bundle: CheckpointBundle = load_checkpoint(checkpoint)?;
    let model = &bundle.model;
    if model.config.horizon != cfg.windowing.horizon {
        return Err(Error::Usage(format!(
            "checkpoint predicts {} slots but the config windows {}",
            model.config.horizon + 1,
            cfg.windowing.horizon + 1
        )));
    }
    if model.config.window > cfg.windowing.window {
        return Err(Error::Usage(format!(
            "checkpoint consumes {} masks but the config windows only {}",
            model.config.window, cfg.windowing.window
        )));
    }

    let samples = load_samples(&cfg, data)?;
    let (train_set, val_set) = split_dataset(samples, &cfg.split)?;
    let chosen: Vec<Sample> = match split {
        SplitArg::Train => train_set,
        SplitArg::Val => val_set,
        SplitArg::All => {
            let mut all = train_set;
            all.extend(val_set);
            all
        }
    };

    let report = evaluate_model(
        model,
        &chosen,
        &cfg.preprocess,
        cache,
        cfg.train.batch_size,
        cfg.delta,
    )?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report_path = out.join("eval_report.json");
    write_report(&report_path, &report)?;

    let mut digests = BTreeMap::new();
    digest_into(&mut digests, &report_path)?;
    write_manifest(
        out,
        &RunManifest {
            command: "evaluate",
            config_path: config.map(|p| p.display().to_string()),
            resolved_config: &cfg,
            inputs: BTreeMap::from([
                ("checkpoint", checkpoint.display().to_string()),
                ("data", data.display().to_string()),
            ]),
            outputs: BTreeMap::from([("report", report_path.display().to_string())]),
            seed: bundle.seed,
            artifact_digests: digests,
        },
    )?;
    eprintln!(
        "atop1 {:.4}  atop3 {:.4}  atop5 {:.4}  adba {:.4}  ({} samples)",
        report.atop1, report.atop3, report.atop5, report.adba, report.n_samples
    );
    println!("{}", report_path.display());
    Ok(())
}

fn report_cmd(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut reports = Vec::new();
    let mut histories = Vec::new();
    for run in runs {
        let name = run
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| run.display().to_string());
        let report_path = run.join("eval_report.json");
        if report_path.exists() {
            reports.push((name.clone(), crate::metrics::read_report(&report_path)?));
        }
        let log_path = run.join("run.log");
        if log_path.exists() {
            histories.push((name, read_run_log(&log_path)?));
        }
    }
    if reports.is_empty() && histories.is_empty() {
        return Err(Error::Usage(
            "no eval_report.json or run.log found in the given run directories".into(),
        ));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let md_path = out.join("report.md");
    std::fs::write(&md_path, render_markdown(&reports, &histories))
        .map_err(|e| Error::io(&md_path, e))?;
    let mut written = vec![md_path.display().to_string()];
    if !reports.is_empty() {
        let acc = out.join("per_slot_accuracy.png");
        plot_slot_accuracy(&acc, &reports)?;
        let dba = out.join("per_slot_dba.png");
        plot_slot_dba(&dba, &reports)?;
        written.push(acc.display().to_string());
        written.push(dba.display().to_string());
    }
    if histories.iter().any(|(_, h)| !h.is_empty()) {
        let curves = out.join("training_curves.png");
        plot_training_curves(&curves, &histories)?;
        written.push(curves.display().to_string());
    }
    eprintln!("report rendered from {} run(s)", runs.len());
    for w in &written {
        println!("{w}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_coherent() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn config_survives_a_toml_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.teacher, cfg.teacher);
        assert_eq!(back.train, cfg.train);
        assert_eq!(back.split.train_fraction, cfg.split.train_fraction);
    }

    #[test]
    fn sparse_toml_fills_in_defaults() {
        let cfg: RunConfig = toml::from_str("[train]\nseed = 99\n").unwrap();
        assert_eq!(cfg.train.seed, 99);
        assert_eq!(cfg.windowing.window, 4);
        assert_eq!(cfg.teacher.n_classes, 16);
    }

    #[test]
    fn mismatched_mask_dims_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.preprocess.out_height = 48;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn help_exits_zero_and_bad_flags_exit_two() {
        assert_eq!(run_command(["beamtrack", "--help"]), 0);
        assert_eq!(run_command(["beamtrack", "no-such-command"]), 2);
        assert_eq!(run_command(["beamtrack", "train", "--bogus"]), 2);
    }

    #[test]
    fn kd_stage_without_guide_is_a_usage_error() {
        let code = run_command([
            "beamtrack",
            "train",
            "--data",
            "/nonexistent",
            "--out",
            "/tmp/beamtrack-test-unused",
            "--role",
            "student",
            "--stage",
            "kd",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn stage_role_mismatches_are_usage_errors() {
        for (role, stage) in [("student", "self-kd"), ("teacher", "kd")] {
            let code = run_command([
                "beamtrack",
                "train",
                "--data",
                "/nonexistent",
                "--out",
                "/tmp/beamtrack-test-unused",
                "--role",
                role,
                "--stage",
                stage,
                "--teacher-checkpoint",
                "/nonexistent.ckpt",
            ]);
            assert_eq!(code, 2, "role {role} stage {stage}");
        }
    }
}
