//! Command orchestration behind the CLI: run configuration with
//! dot-path overrides, artifact layout, and the split / train / eval /
//! map / gradcheck entry points.

use crate::arch::{self, predict_logits, Dataset, NetworkConfig, ParamStore};
use crate::data::io::{
    class_table_csv, load_cube, read_manifest, write_manifest,
};
use crate::data::{
    extract_patch, materialize, normalize_channels, HyperCube, Normalization, SampleRef,
    SplitOutcome, SplitSpec,
};
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::gradcheck::{self, GradCheckReport};
use crate::metrics::map::{
    ground_truth_field, render_class_map, render_thematic_map, write_ppm, MapCoverage, PALETTE,
};
use crate::metrics::{metrics_report, ConfusionMatrix, MetricsReport};
use crate::rng::{streams, Rng};
use crate::train::{
    argmax, load_checkpoint, save_checkpoint, train, AdamState, Checkpoint, EpochStats,
    ResumePoint, TrainSchedule,
};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetChoice {
    pub dataset: Dataset,
    pub configuration: u8,
    pub parameter_sharing: bool,
}

fn default_per_class_train() -> usize {
    200
}
fn default_val_fraction() -> f64 {
    0.25
}

/// Split stanza of the run config. The draw seed is not configured
/// here; it is derived from the top-level run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSettings {
    #[serde(default = "default_per_class_train")]
    pub per_class_train: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction_of_train: f64,
    #[serde(default)]
    pub top_k_classes: Option<usize>,
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings {
            per_class_train: default_per_class_train(),
            val_fraction_of_train: default_val_fraction(),
            top_k_classes: None,
        }
    }
}

/// One JSON file drives every command. Exactly one of `preset` and
/// `network` selects the architecture; everything random flows from
/// `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: PathBuf,
    pub labels: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default)]
    pub preset: Option<PresetChoice>,
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub map_coverage: MapCoverage,
}

/// Parse `KEY=VALUE` and write VALUE at the dot-separated KEY path,
/// creating intermediate objects as needed. VALUE is parsed as JSON
/// when possible, otherwise taken as a string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {:?} is not KEY=VALUE", assignment)))?;
    if key.is_empty() {
        return Err(Error::config(format!("override {:?} has an empty key", assignment)));
    }
    let segments: Vec<&str> = key.split('.').collect();
    let mut cursor = root;
    for seg in &segments[..segments.len() - 1] {
        let obj = cursor.as_object_mut().ok_or_else(|| {
            Error::config(format!("override key {:?} descends into a non-object", key))
        })?;
        cursor = obj
            .entry(seg.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    let obj = cursor.as_object_mut().ok_or_else(|| {
        Error::config(format!("override key {:?} descends into a non-object", key))
    })?;
    let value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    obj.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {}", path.display(), e)))?;
        let mut value: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e)))?;
        for assignment in overrides {
            apply_override(&mut value, assignment)?;
        }
        let config: RunConfig = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("{}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.network_config()?;
        self.split_spec().validate()?;
        self.schedule.validate()?;
        Ok(())
    }

    /// Resolve the preset or explicit network into a validated config.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        match (&self.preset, &self.network) {
            (Some(p), None) => arch::preset(p.dataset, p.configuration, p.parameter_sharing),
            (None, Some(n)) => {
                n.shape_trace()?;
                Ok(n.clone())
            }
            (Some(_), Some(_)) => Err(Error::config(
                "config sets both preset and network; pick one",
            )),
            (None, None) => Err(Error::config("config needs either preset or network")),
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            per_class_train: self.split.per_class_train,
            val_fraction_of_train: self.split.val_fraction_of_train,
            seed: Rng::derive(self.seed, streams::SPLIT),
            top_k_classes: self.split.top_k_classes,
        }
    }

    fn load_raw_cube(&self) -> Result<HyperCube> {
        load_cube(&self.scene, &self.labels)
    }

    fn load_normalized_cube(&self, cfg: &NetworkConfig) -> Result<HyperCube> {
        let raw = self.load_raw_cube()?;
        if raw.channels != cfg.in_channels {
            return Err(Error::config(format!(
                "scene has {} channels but the network expects {}",
                raw.channels, cfg.in_channels
            )));
        }
        normalize_channels(&raw, self.normalization)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join("manifest.csv")
    }
    pub fn classes_path(&self) -> PathBuf {
        self.output_dir.join("classes.csv")
    }
    pub fn best_checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("best.ckpt")
    }
    pub fn last_checkpoint_path(&self) -> PathBuf {
        self.output_dir.join("last.ckpt")
    }
    pub fn history_path(&self) -> PathBuf {
        self.output_dir.join("history.csv")
    }
    pub fn log_path(&self) -> PathBuf {
        self.output_dir.join("log.jsonl")
    }
    pub fn report_path(&self, stem: &str, ext: &str) -> PathBuf {
        self.output_dir.join(format!("{}.{}", stem, ext))
    }

    fn ensure_output_dir(&self) -> Result<()> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| {
            Error::data(format!(
                "cannot create output dir {}: {}",
                self.output_dir.display(),
                e
            ))
        })
    }
}

/// Append one JSON event line; the only place timestamps appear.
struct EventLog {
    file: std::fs::File,
}

impl EventLog {
    fn open(path: &Path, append: bool) -> Result<EventLog> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::data(format!("cannot open log {}: {}", path.display(), e)))?;
        Ok(EventLog { file })
    }

    fn emit(&mut self, mut event: serde_json::Value) {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        if let Some(obj) = event.as_object_mut() {
            obj.insert("ts".to_string(), ts.into());
        }
        // log writes are best-effort; losing a line must not kill a run
        let _ = writeln!(self.file, "{}", event);
    }
}

/// Draw the split and write `manifest.csv` plus the per-class table.
pub fn cmd_split(config: &RunConfig) -> Result<SplitOutcome> {
    let cube = config.load_raw_cube()?;
    let outcome = crate::data::make_splits(&cube, &config.split_spec())?;
    config.ensure_output_dir()?;
    write_manifest(&config.manifest_path(), &outcome)?;
    atomic_write(
        &config.classes_path(),
        class_table_csv(&outcome.class_map, &outcome).as_bytes(),
    )?;
    Ok(outcome)
}

fn history_csv(rows: &[EpochStats]) -> String {
    let mut csv = String::from("epoch,train_loss,train_acc,val_acc\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.train_acc, r.val_acc
        ));
    }
    csv
}

fn read_history(path: &Path) -> Result<Vec<EpochStats>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read {}: {}", path.display(), e)))?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 {
            if line != "epoch,train_loss,train_acc,val_acc" {
                return Err(Error::data(format!(
                    "{}: unexpected history header",
                    path.display()
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = || Error::data(format!("{} line {}: bad history row", path.display(), idx + 1));
        if fields.len() != 4 {
            return Err(bad());
        }
        rows.push(EpochStats {
            epoch: fields[0].parse().map_err(|_| bad())?,
            train_loss: fields[1].parse().map_err(|_| bad())?,
            train_acc: fields[2].parse().map_err(|_| bad())?,
            val_acc: fields[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Class names carrying the original raster codes when known.
fn class_names(outcome: &SplitOutcome) -> Vec<String> {
    outcome
        .class_map
        .classes
        .iter()
        .map(|c| format!("class {} (code {})", c.index, c.original_code))
        .collect()
}

fn eval_confusion(
    cube: &HyperCube,
    cfg: &NetworkConfig,
    params: &ParamStore,
    refs: &[SampleRef],
    names: Option<Vec<String>>,
) -> Result<ConfusionMatrix> {
    if refs.is_empty() {
        return Err(Error::data("no samples to evaluate"));
    }
    let mut cm = ConfusionMatrix::new(cfg.num_classes)?;
    if let Some(names) = names {
        cm.set_names(names)?;
    }
    for r in refs {
        if r.label >= cfg.num_classes {
            return Err(Error::data(format!(
                "sample ({}, {}) has label {} outside [0, {})",
                r.x, r.y, r.label, cfg.num_classes
            )));
        }
        let patch = extract_patch(cube, r.x, r.y, cfg.patch_size)?;
        let pred = argmax(&predict_logits(cfg, params, &patch)?);
        cm.record(r.label, pred)?;
    }
    Ok(cm)
}

fn write_report(config: &RunConfig, stem: &str, report: &MetricsReport) -> Result<()> {
    atomic_write(&config.report_path(stem, "json"), report.to_json()?.as_bytes())?;
    atomic_write(&config.report_path(stem, "txt"), report.to_table().as_bytes())
}

#[derive(Debug)]
pub struct TrainSummary {
    pub param_count: usize,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Test-split metrics; absent when the split left no test samples.
    pub report: Option<MetricsReport>,
    pub warnings: Vec<String>,
}

/// Train per the schedule, checkpointing every epoch, then score the
/// best parameters on the test split.
pub fn cmd_train(
    config: &RunConfig,
    resume_from: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<TrainSummary> {
    let cfg = config.network_config()?;
    let param_count = cfg.param_count()?;
    let cube = config.load_normalized_cube(&cfg)?;
    let outcome = crate::data::make_splits(&cube, &config.split_spec())?;
    if outcome.class_map.num_classes() != cfg.num_classes {
        return Err(Error::config(format!(
            "split yields {} classes but the network has {} outputs",
            outcome.class_map.num_classes(),
            cfg.num_classes
        )));
    }

    config.ensure_output_dir()?;
    write_manifest(&config.manifest_path(), &outcome)?;
    atomic_write(
        &config.classes_path(),
        class_table_csv(&outcome.class_map, &outcome).as_bytes(),
    )?;

    let resuming = resume_from.is_some();
    let (mut params, mut adam, resume, mut history) = match resume_from {
        None => {
            let params = arch::build_network(
                &cfg,
                &mut Rng::new(Rng::derive(config.seed, streams::INIT)),
            )?;
            let adam = AdamState::with_hyperparams(
                &params,
                config.schedule.learning_rate,
                config.schedule.beta1,
                config.schedule.beta2,
                config.schedule.epsilon,
            )?;
            (params, adam, ResumePoint::default(), Vec::new())
        }
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.config != cfg {
                return Err(Error::config(format!(
                    "checkpoint {} was trained with a different network configuration",
                    path.display()
                )));
            }
            let mut adam = ckpt.adam;
            // scalars follow the current schedule; moments carry over
            adam.learning_rate = config.schedule.learning_rate;
            adam.beta1 = config.schedule.beta1;
            adam.beta2 = config.schedule.beta2;
            adam.epsilon = config.schedule.epsilon;
            let resume = ResumePoint {
                epoch: ckpt.epoch,
                best_epoch: ckpt.best_epoch,
                best_val_acc: ckpt.best_val_acc,
            };
            let mut history = Vec::new();
            if config.history_path().exists() {
                history = read_history(&config.history_path())?;
                history.truncate(ckpt.epoch);
            }
            (ckpt.params, adam, resume, history)
        }
    };

    let mut log = EventLog::open(&config.log_path(), resuming)?;
    log.emit(serde_json::json!({
        "event": "run_start",
        "seed": config.seed,
        "epochs": config.schedule.epochs,
        "resumed_from_epoch": resume.epoch,
        "param_count": param_count,
    }));
    for w in &outcome.warnings {
        log.emit(serde_json::json!({"event": "warning", "message": w}));
        progress(&format!("warning: {}", w));
    }
    progress(&format!("parameters: {}", param_count));

    let train_set = materialize(&cube, &outcome.train, cfg.patch_size)?;
    let val_set = materialize(&cube, &outcome.val, cfg.patch_size)?;

    let mut best_epoch = resume.best_epoch;
    let mut best_val = resume.best_val_acc;

    let result = train(
        &cfg,
        &mut params,
        &mut adam,
        &train_set,
        &val_set,
        &config.schedule,
        config.seed,
        resume,
        |stats, improved, params_now, adam_now| {
            history.push(*stats);
            if improved {
                best_epoch = stats.epoch;
                best_val = stats.val_acc;
            }
            let snapshot = Checkpoint {
                config: cfg.clone(),
                epoch: stats.epoch,
                best_epoch,
                best_val_acc: best_val,
                params: params_now.clone(),
                adam: adam_now.clone(),
            };
            save_checkpoint(&config.last_checkpoint_path(), &snapshot)?;
            if improved {
                save_checkpoint(&config.best_checkpoint_path(), &snapshot)?;
            }
            atomic_write(&config.history_path(), history_csv(&history).as_bytes())?;
            log.emit(serde_json::json!({
                "event": "epoch",
                "epoch": stats.epoch,
                "train_loss": stats.train_loss,
                "train_acc": stats.train_acc,
                "val_acc": stats.val_acc,
                "improved": improved,
            }));
            progress(&format!(
                "epoch {:>4}/{} loss {:.4} train_acc {:.4} val_acc {:.4}{}",
                stats.epoch,
                config.schedule.epochs,
                stats.train_loss,
                stats.train_acc,
                stats.val_acc,
                if improved { " *" } else { "" }
            ));
            Ok(())
        },
    );
    let train_outcome = match result {
        Ok(o) => o,
        Err(e) => {
            log.emit(serde_json::json!({"event": "aborted", "error": e.to_string()}));
            return Err(e);
        }
    };

    // the best checkpoint on disk covers earlier runs too when resuming
    let best = load_checkpoint(&config.best_checkpoint_path())?;
    let mut warnings = outcome.warnings.clone();
    let report = if outcome.test.is_empty() {
        let w = "test split is empty; skipping the final report".to_string();
        progress(&format!("warning: {}", w));
        log.emit(serde_json::json!({"event": "warning", "message": w}));
        warnings.push(w);
        None
    } else {
        let cm = eval_confusion(
            &cube,
            &cfg,
            &best.params,
            &outcome.test,
            Some(class_names(&outcome)),
        )?;
        let report = metrics_report(&cm)?;
        write_report(config, "report", &report)?;
        Some(report)
    };
    log.emit(serde_json::json!({
        "event": "run_end",
        "best_epoch": best.best_epoch,
        "best_val_acc": best.best_val_acc,
        "stopped_early": train_outcome.stopped_early,
    }));

    Ok(TrainSummary {
        param_count,
        best_epoch: best.best_epoch,
        best_val_acc: best.best_val_acc,
        epochs_run: train_outcome.history.len(),
        stopped_early: train_outcome.stopped_early,
        report,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<SplitChoice> {
        match s {
            "train" => Ok(SplitChoice::Train),
            "val" => Ok(SplitChoice::Val),
            "test" => Ok(SplitChoice::Test),
            _ => Err(Error::config(format!(
                "unknown split {:?}, expected train, val or test",
                s
            ))),
        }
    }
}

impl std::fmt::Display for SplitChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitChoice::Train => "train",
            SplitChoice::Val => "val",
            SplitChoice::Test => "test",
        })
    }
}

/// Score a checkpoint on one split of a manifest and write the report.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint: &Path,
    manifest: Option<&Path>,
    which: SplitChoice,
) -> Result<MetricsReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cube = config.load_normalized_cube(&ckpt.config)?;
    let manifest_path = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.manifest_path());
    let (train, val, test) = read_manifest(&manifest_path)?;
    let refs = match which {
        SplitChoice::Train => train,
        SplitChoice::Val => val,
        SplitChoice::Test => test,
    };
    if refs.is_empty() {
        return Err(Error::data(format!(
            "split {} of {} is empty",
            which,
            manifest_path.display()
        )));
    }
    let cm = eval_confusion(&cube, &ckpt.config, &ckpt.params, &refs, None)?;
    let report = metrics_report(&cm)?;
    config.ensure_output_dir()?;
    write_report(config, &format!("eval_{}", which), &report)?;
    Ok(report)
}

/// Render a thematic map (predicted, or the ground-truth raster).
pub fn cmd_map(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    out: Option<&Path>,
    ground_truth: bool,
) -> Result<PathBuf> {
    let (rgb, width, height, default_name) = if ground_truth {
        let cube = config.load_raw_cube()?;
        let max_code = cube.labels.iter().copied().max().unwrap_or(0) as usize;
        let field = ground_truth_field(&cube);
        let rgb = render_class_map(&field, max_code, &PALETTE)?;
        (rgb, cube.width, cube.height, "ground_truth.ppm")
    } else {
        let checkpoint = checkpoint.ok_or_else(|| {
            Error::config("map needs --checkpoint unless --ground-truth is set")
        })?;
        let ckpt = load_checkpoint(checkpoint)?;
        let cube = config.load_normalized_cube(&ckpt.config)?;
        let rgb = render_thematic_map(
            &cube,
            &ckpt.config,
            &ckpt.params,
            &PALETTE,
            config.map_coverage,
        )?;
        (rgb, cube.width, cube.height, "map.ppm")
    };
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join(default_name));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                Error::data(format!("cannot create {}: {}", parent.display(), e))
            })?;
        }
    }
    write_ppm(&path, width, height, &rgb)?;
    Ok(path)
}

pub struct GradcheckOptions {
    /// Restrict to one configuration (1..=4); `None` runs all four.
    pub configuration: Option<u8>,
    /// Restrict to one sharing setting; `None` runs both.
    pub parameter_sharing: Option<bool>,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

/// Finite-difference checks over the reduced configurations.
pub fn cmd_gradcheck(opts: &GradcheckOptions) -> Result<Vec<GradCheckReport>> {
    let configurations: Vec<u8> = match opts.configuration {
        Some(c) => vec![c],
        None => (1..=4).collect(),
    };
    let sharings: Vec<bool> = match opts.parameter_sharing {
        Some(ps) => vec![ps],
        None => vec![false, true],
    };
    let mut reports = Vec::new();
    for &configuration in &configurations {
        for &ps in &sharings {
            let cfg = gradcheck::reduced_config(configuration, ps)?;
            reports.push(gradcheck::run_gradcheck(
                &cfg,
                opts.seed,
                opts.step,
                opts.tolerance,
            )?);
        }
    }
    Ok(reports)
}
