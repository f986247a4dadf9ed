//! Supervised training: SGD with warmup and cosine decay, per-epoch
//! checkpoints and metrics, resume, and ablation sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datamodel::DatasetFile;
use crate::error::{Error, Result};
use crate::eval::{evaluate_images, EvalOptions, EvalReport, GtHead, RangeMode, DEFAULT_MATCH_IOU};
use crate::geometry::EulerPose;
use crate::infer::{letterbox_image, load_rgb, predict_prepared, Postprocess, Prepared};
use crate::losses::{compute_loss, LossComponents, LossWeights};
use crate::net::{
    build_targets, AnchorConfig, Checkpoint, GroundTruth, ModelConfig, NeighborMode, Network, Normalization, Tensor,
    STRIDES,
};
use crate::net::layers::ParamKind;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_NAME: &str = "last.ckpt";
pub const METRICS_NAME: &str = "metrics.jsonl";
pub const REPORT_NAME: &str = "val_report.json";

/// An annotation file and the directory its image file names are relative
/// to (the annotation file's own directory when omitted).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub annotations: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_root: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn new(annotations: impl Into<PathBuf>) -> Self {
        Self {
            annotations: annotations.into(),
            image_root: None,
        }
    }

    pub fn root(&self) -> PathBuf {
        self.image_root
            .clone()
            .unwrap_or_else(|| self.annotations.parent().map(Path::to_path_buf).unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr0: f64,
    /// Final learning rate as a fraction of `lr0`.
    pub final_lr_ratio: f64,
    pub momentum: f64,
    pub nesterov: bool,
    /// Applied to convolution kernels only.
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub warmup_momentum: f64,
    /// Starting learning rate of biases during warmup.
    pub warmup_bias_lr: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            final_lr_ratio: 0.01,
            momentum: 0.937,
            nesterov: true,
            weight_decay: 5e-4,
            warmup_epochs: 3.0,
            warmup_momentum: 0.8,
            warmup_bias_lr: 0.1,
        }
    }
}

/// Photometric jitter, plus an optional horizontal flip that mirrors the
/// pose labels. There are deliberately no geometric options: rotating or
/// shearing an image has no exact Euler-label counterpart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Brightness factor drawn from `1 ± brightness`.
    pub brightness: f64,
    /// Saturation factor drawn from `1 ± saturation`.
    pub saturation: f64,
    /// Mirror half of the images; yaw and roll labels are negated.
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.3,
            saturation: 0.5,
            flip: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub match_iou: f64,
    pub range: RangeMode,
    /// Evaluate on the validation set every this many epochs (and always
    /// after the last one).
    pub every: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_threshold: crate::eval::DEFAULT_CONF_THRESHOLD,
            nms_iou: crate::eval::DEFAULT_NMS_IOU,
            match_iou: DEFAULT_MATCH_IOU,
            range: RangeMode::Full,
            every: 1,
        }
    }
}

impl EvalSettings {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            range: self.range,
            conf_threshold: self.conf_threshold,
            match_iou: self.match_iou,
            ..EvalOptions::default()
        }
    }

    pub fn postprocess(&self) -> Postprocess {
        Postprocess {
            nms_iou: self.nms_iou,
            ..Postprocess::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub train: DatasetPaths,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<DatasetPaths>,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub model: ModelConfig,
    /// Fitted to the training boxes when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchors: Option<AnchorConfig>,
    /// A ground truth may use an anchor when no side ratio exceeds this.
    pub anchor_ratio: f64,
    pub neighbor_mode: NeighborMode,
    pub optim: OptimConfig,
    pub loss: LossWeights,
    /// Use the wrapped pose loss instead of plain squared error.
    pub wrapped: bool,
    pub augment: AugmentConfig,
    pub eval: EvalSettings,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            train: DatasetPaths::default(),
            val: None,
            input_size: 320,
            epochs: 60,
            batch_size: 8,
            model: ModelConfig::default(),
            anchors: None,
            anchor_ratio: 4.0,
            neighbor_mode: NeighborMode::TwoNearest,
            optim: OptimConfig::default(),
            loss: LossWeights::default(),
            wrapped: false,
            augment: AugmentConfig::default(),
            eval: EvalSettings::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Parses a config, applying `key=value` overrides (dotted keys) first.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut v: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        let cfg: TrainConfig = serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text, overrides)?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Makes relative dataset paths relative to `base`.
    pub fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in std::iter::once(&mut self.train).chain(self.val.as_mut()) {
            fix(&mut d.annotations);
            if let Some(r) = d.image_root.as_mut() {
                fix(r);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.train.annotations.as_os_str().is_empty() {
            return bad("train.annotations is required".into());
        }
        if self.input_size == 0 || self.input_size % 64 != 0 {
            return bad(format!("input_size {} must be a positive multiple of 64", self.input_size));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.model.widths.contains(&0) || self.model.depth == 0 || self.model.neck_width == 0 || self.model.num_anchors == 0 {
            return bad("model widths, depth, neck_width and num_anchors must be positive".into());
        }
        if let Some(a) = &self.anchors {
            a.validate()?;
            if a.num_anchors() != self.model.num_anchors {
                return bad(format!(
                    "{} anchors per stride but model has {}",
                    a.num_anchors(),
                    self.model.num_anchors
                ));
            }
        }
        if !(self.anchor_ratio > 1.0) {
            return bad("anchor_ratio must exceed 1".into());
        }
        let o = &self.optim;
        if !(o.lr0 > 0.0 && o.lr0.is_finite()) || !(o.final_lr_ratio > 0.0 && o.final_lr_ratio <= 1.0) {
            return bad("optim.lr0 must be positive and final_lr_ratio in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&o.momentum) || !(0.0..1.0).contains(&o.warmup_momentum) {
            return bad("momentum values must lie in [0, 1)".into());
        }
        if !(o.weight_decay >= 0.0) || !(o.warmup_epochs >= 0.0) || !(o.warmup_bias_lr >= 0.0) {
            return bad("weight_decay, warmup_epochs and warmup_bias_lr must be non-negative".into());
        }
        self.loss.validate(STRIDES.len())?;
        let a = &self.augment;
        if !(0.0..1.0).contains(&a.brightness) || !(0.0..1.0).contains(&a.saturation) {
            return bad("augment.brightness and augment.saturation must lie in [0, 1)".into());
        }
        let e = &self.eval;
        if !(e.conf_threshold > 0.0 && e.conf_threshold < 1.0)
            || !(e.nms_iou > 0.0 && e.nms_iou < 1.0)
            || !(e.match_iou > 0.0 && e.match_iou < 1.0)
        {
            return bad("eval thresholds must lie in (0, 1)".into());
        }
        if e.every == 0 {
            return bad("eval.every must be positive".into());
        }
        Ok(())
    }
}

/// Sets a dotted key in a JSON object, e.g. `optim.lr0=0.02`. The value is
/// parsed as JSON, falling back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {} is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// A prepared image with its ground truths in original pixels.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image_id: u64,
    pub prepared: Prepared,
    pub gts: Vec<GtHead>,
}

/// Loads and letterboxes every image of a validated dataset.
pub fn load_samples(paths: &DatasetPaths, input_size: usize, pad_value: u8) -> Result<Vec<Sample>> {
    let file = DatasetFile::load(&paths.annotations)?;
    file.validate()?;
    let root = paths.root();
    let by_image = file.annotations_by_image();
    file.images
        .iter()
        .map(|rec| {
            let img = load_rgb(&root.join(&rec.file_name))?;
            if img.dimensions() != (rec.width, rec.height) {
                return Err(Error::Validation(format!(
                    "image {}: file is {}x{}, record says {}x{}",
                    rec.id,
                    img.width(),
                    img.height(),
                    rec.width,
                    rec.height
                )));
            }
            Ok(Sample {
                image_id: rec.id,
                prepared: letterbox_image(&img, input_size, pad_value),
                gts: by_image
                    .get(&rec.id)
                    .map(|v| v.iter().map(|a| GtHead::from(*a)).collect())
                    .unwrap_or_default(),
            })
        })
        .collect()
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_box: f64,
    pub l_obj: f64,
    pub l_pose: f64,
    /// Mean weighted per-image loss over the epoch.
    pub loss: f64,
    /// Mean weighted loss over the first and last ten steps of the epoch.
    pub loss_head: f64,
    pub loss_tail: f64,
    pub lr: f64,
    pub val_mae_pitch: Option<f64>,
    pub val_mae_yaw: Option<f64>,
    pub val_mae_roll: Option<f64>,
    pub val_mae_avg: Option<f64>,
    pub val_ap: Option<f64>,
    pub val_ap50: Option<f64>,
    pub p_m: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: PathBuf,
    /// Validation report after the last epoch.
    pub report: Option<EvalReport>,
}

/// Momentum buffers, one per trainable parameter in module order.
struct Sgd {
    buffers: Vec<Vec<f32>>,
}

impl Sgd {
    fn new(net: &mut Network) -> Self {
        Self {
            buffers: net
                .params_mut()
                .iter()
                .filter(|p| p.kind != ParamKind::Buffer)
                .map(|p| vec![0.0; p.value.len()])
                .collect(),
        }
    }

    fn step(&mut self, net: &mut Network, lr: f64, bias_lr: f64, momentum: f64, cfg: &OptimConfig) {
        let m = momentum as f32;
        let wd = cfg.weight_decay as f32;
        let trainable = net.params_mut().into_iter().filter(|p| p.kind != ParamKind::Buffer);
        for (p, buf) in trainable.zip(&mut self.buffers) {
            let (rate, decay) = match p.kind {
                ParamKind::Weight => (lr as f32, wd),
                _ => (bias_lr as f32, 0.0),
            };
            for ((v, g), b) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let g = g + decay * *v;
                *b = m * *b + g;
                let d = if cfg.nesterov { g + m * *b } else { *b };
                *v -= rate * d;
            }
        }
    }
}

/// Learning rate at the start of `epoch` (0-based) before warmup.
pub fn scheduled_lr(cfg: &OptimConfig, epoch: usize, epochs: usize) -> f64 {
    let t = epoch as f64 / epochs as f64;
    let f = ((1.0 - (t * std::f64::consts::PI).cos()) / 2.0) * (cfg.final_lr_ratio - 1.0) + 1.0;
    cfg.lr0 * f
}

/// `(weight lr, bias lr, momentum)` at a global iteration.
fn rates(cfg: &OptimConfig, epoch: usize, epochs: usize, iteration: usize, warmup_iters: usize) -> (f64, f64, f64) {
    let lr = scheduled_lr(cfg, epoch, epochs);
    if iteration >= warmup_iters {
        return (lr, lr, cfg.momentum);
    }
    let x = iteration as f64 / warmup_iters as f64;
    let lerp = |a: f64, b: f64| a + (b - a) * x;
    (lerp(0.0, lr), lerp(cfg.warmup_bias_lr, lr), lerp(cfg.warmup_momentum, cfg.momentum))
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Builds an augmented input batch and its ground truths in input pixels.
fn make_batch<R: Rng>(
    samples: &[Sample],
    indices: &[usize],
    size: usize,
    norm: &Normalization,
    aug: &AugmentConfig,
    rng: &mut R,
) -> (Tensor, Vec<GroundTruth>) {
    let plane = size * size;
    let mut data = vec![0.0f32; indices.len() * 3 * plane];
    let mut gts = Vec::new();
    for (bi, &si) in indices.iter().enumerate() {
        let s = &samples[si];
        let bright = 1.0 + rng.random_range(-1.0..=1.0) * aug.brightness;
        let sat = 1.0 + rng.random_range(-1.0..=1.0) * aug.saturation;
        let flip = aug.flip && rng.random_bool(0.5);
        let out = &mut data[bi * 3 * plane..(bi + 1) * 3 * plane];
        let scale = norm.pixel_scale as f32;
        let (bright, sat) = (bright as f32, sat as f32);
        for y in 0..size {
            for x in 0..size {
                let sx = if flip { size - 1 - x } else { x };
                let px = &s.prepared.pixels[(y * size + sx) * 3..(y * size + sx) * 3 + 3];
                let (r, g, b) = (px[0] as f32, px[1] as f32, px[2] as f32);
                let gray = 0.299 * r + 0.587 * g + 0.114 * b;
                let p = y * size + x;
                for (c, v) in [r, g, b].into_iter().enumerate() {
                    let adj = ((gray + (v - gray) * sat) * bright).clamp(0.0, 255.0);
                    out[c * plane + p] = adj * scale;
                }
            }
        }
        for g in &s.gts {
            let mut c = s.prepared.letterbox.to_input(g.bbox);
            let mut pose = g.pose;
            if flip {
                c[0] = size as f64 - c[0];
                pose = mirror_pose(pose);
            }
            gts.push(GroundTruth {
                image: bi,
                bbox: c,
                pose,
            });
        }
    }
    (Tensor::from_vec([indices.len(), 3, size, size], data), gts)
}

/// Label of the horizontally mirrored head: yaw and roll change sign.
pub fn mirror_pose(p: EulerPose) -> EulerPose {
    let neg = |a: f64| if a == 180.0 || a == -180.0 { 180.0 } else if a == 0.0 { 0.0 } else { -a };
    EulerPose::new(p.pitch, neg(p.yaw), neg(p.roll))
}

fn fit_anchors(samples: &[Sample], cfg: &TrainConfig) -> AnchorConfig {
    let boxes: Vec<(f64, f64)> = samples
        .iter()
        .flat_map(|s| {
            s.gts.iter().map(|g| {
                let c = s.prepared.letterbox.to_input(g.bbox);
                (c[2], c[3])
            })
        })
        .collect();
    AnchorConfig::fit(&boxes, cfg.model.num_anchors, cfg.input_size)
}

/// Predicts and evaluates a network on prepared samples.
pub fn evaluate_samples(
    net: &mut Network,
    anchors: &AnchorConfig,
    samples: &[Sample],
    norm: &Normalization,
    settings: &EvalSettings,
    batch_size: usize,
) -> Result<EvalReport> {
    let prepared: Vec<Prepared> = samples.iter().map(|s| s.prepared.clone()).collect();
    let dets = predict_prepared(net, anchors, &prepared, norm, batch_size, &settings.postprocess())?;
    let images: Vec<_> = dets.into_iter().zip(samples).map(|(d, s)| (d, s.gts.clone())).collect();
    Ok(evaluate_images(&images, &settings.options()))
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Reads a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                index: i,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Trains from scratch or resumes from `resume`, writing `last.ckpt` and
/// `metrics.jsonl` under `out` after every epoch. `on_epoch` sees each
/// metrics row as it is logged.
pub fn train(
    cfg: &TrainConfig,
    out: &Path,
    resume: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let norm = Normalization::default();
    let train_set = load_samples(&cfg.train, cfg.input_size, norm.pad_value)?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set has no images".into()));
    }
    let val_set = match &cfg.val {
        Some(p) => Some(load_samples(p, cfg.input_size, norm.pad_value)?),
        None => None,
    };
    let config_json = serde_json::to_value(cfg).map_err(|e| Error::Config(e.to_string()))?;

    let mut net = Network::new(&cfg.model, cfg.input_size, cfg.seed);
    let mut sgd = Sgd::new(&mut net);
    let mut anchors = cfg.anchors.clone().unwrap_or_else(|| fit_anchors(&train_set, cfg));
    let mut start_epoch = 0;
    let metrics_path = out.join(METRICS_NAME);
    let ckpt_path = out.join(CHECKPOINT_NAME);
    let mut history = Vec::new();

    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        if ck.header.model != cfg.model || ck.header.input_size != cfg.input_size {
            return Err(Error::Config("checkpoint model does not match the configuration".into()));
        }
        net.load_weights(&ck.weights)?;
        sgd.buffers = ck
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
        anchors = ck.header.anchors.clone();
        start_epoch = ck.header.epoch;
        if start_epoch > cfg.epochs {
            return Err(Error::Config(format!(
                "checkpoint is at epoch {start_epoch}, beyond the configured {}",
                cfg.epochs
            )));
        }
        if metrics_path.exists() {
            history = read_metrics(&metrics_path)?;
        }
        history.truncate(start_epoch);
    }
    // Rewrite the log so it matches the starting state exactly.
    let mut text = String::new();
    for m in &history {
        text.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        text.push('\n');
    }
    fs::write(&metrics_path, text).map_err(|e| Error::io(&metrics_path, e))?;

    let save = |net: &mut Network, sgd: &Sgd, epoch: usize| -> Result<()> {
        let ck = Checkpoint::from_network(
            net,
            &anchors,
            cfg.input_size,
            norm,
            epoch,
            config_json.clone(),
            Some(sgd.buffers.clone()),
        );
        write_atomic(&ckpt_path, |p| ck.save(p))
    };
    if resume.is_none() {
        save(&mut net, &sgd, 0)?;
    }

    let nb = train_set.len().div_ceil(cfg.batch_size);
    let warmup_iters = if cfg.optim.warmup_epochs > 0.0 {
        ((cfg.optim.warmup_epochs * nb as f64).round() as usize).max(1)
    } else {
        0
    };
    let mut report = None;
    for epoch in start_epoch..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = LossComponents::default();
        let mut step_losses = Vec::with_capacity(nb);
        let mut last_lr = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let iteration = epoch * nb + step;
            let (lr, bias_lr, momentum) = rates(&cfg.optim, epoch, cfg.epochs, iteration, warmup_iters);
            last_lr = lr;
            let (x, gts) = make_batch(&train_set, idx, cfg.input_size, &norm, &cfg.augment, &mut rng);
            let pred = net.forward(&x, true)?;
            let targets = build_targets(&gts, &anchors, &pred.shapes(), cfg.anchor_ratio, cfg.neighbor_mode);
            let diverged = |message: String| Error::Divergence {
                epoch: epoch + 1,
                message,
            };
            let loss = compute_loss(&pred, &targets, &anchors, &cfg.loss, cfg.wrapped).map_err(|e| match e {
                Error::Divergence { message, .. } => diverged(message),
                other => other,
            })?;
            if !loss.total.is_finite() {
                return Err(diverged(format!("loss is {} at step {}", loss.total, step + 1)));
            }
            for p in net.params_mut() {
                p.zero_grad();
            }
            net.backward(&loss.grad);
            if net.params_mut().iter().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
                return Err(diverged(format!("non-finite gradient at step {}", step + 1)));
            }
            sgd.step(&mut net, lr, bias_lr, momentum, &cfg.optim);
            let c = loss.components;
            sums.box_loss += c.box_loss;
            sums.obj_loss += c.obj_loss;
            sums.pose_loss += c.pose_loss;
            step_losses.push(loss.total / idx.len() as f64);
        }
        let steps = step_losses.len() as f64;
        let window = step_losses.len().min(10);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;

        let last = epoch + 1 == cfg.epochs;
        let evaluated = match &val_set {
            Some(v) if last || (epoch + 1) % cfg.eval.every == 0 => {
                Some(evaluate_samples(&mut net, &anchors, v, &norm, &cfg.eval, cfg.batch_size)?)
            }
            _ => None,
        };
        let mae = evaluated.as_ref().and_then(|r| r.mae);
        let row = EpochMetrics {
            epoch: epoch + 1,
            l_box: sums.box_loss / steps,
            l_obj: sums.obj_loss / steps,
            l_pose: sums.pose_loss / steps,
            loss: mean(&step_losses),
            loss_head: mean(&step_losses[..window]),
            loss_tail: mean(&step_losses[step_losses.len() - window..]),
            lr: last_lr,
            val_mae_pitch: mae.map(|m| m.pitch),
            val_mae_yaw: mae.map(|m| m.yaw),
            val_mae_roll: mae.map(|m| m.roll),
            val_mae_avg: mae.map(|m| m.mean),
            val_ap: evaluated.as_ref().map(|r| r.ap),
            val_ap50: evaluated.as_ref().map(|r| r.ap50),
            p_m: evaluated.as_ref().map(|r| r.p_m),
        };
        save(&mut net, &sgd, epoch + 1)?;
        append_line(&metrics_path, &serde_json::to_string(&row).expect("metrics serialize"))?;
        on_epoch(&row);
        history.push(row);
        if last {
            report = evaluated;
        }
    }
    if report.is_none() && start_epoch == cfg.epochs {
        if let Some(v) = &val_set {
            report = Some(evaluate_samples(&mut net, &anchors, v, &norm, &cfg.eval, cfg.batch_size)?);
        }
    }
    if let Some(r) = &report {
        let json = serde_json::to_string_pretty(r).expect("report serializes");
        fs::write(out.join(REPORT_NAME), json).map_err(|e| Error::io(out.join(REPORT_NAME), e))?;
    }
    Ok(TrainOutcome {
        metrics: history,
        checkpoint: ckpt_path,
        report,
    })
}

/// Ablation grid; every listed axis is swept, omitted ones keep the base
/// configuration's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub tau: Vec<f64>,
    pub gamma: Vec<f64>,
    pub wrapped: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSetting {
    pub tau: f64,
    pub gamma: f64,
    pub wrapped: bool,
}

impl SweepGrid {
    /// Cartesian product in `tau`, `gamma`, `wrapped` order.
    pub fn settings(&self, base: &TrainConfig) -> Result<Vec<SweepSetting>> {
        if self.tau.is_empty() && self.gamma.is_empty() && self.wrapped.is_empty() {
            return Err(Error::Validation("sweep grid is empty".into()));
        }
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let taus = or(&self.tau, base.loss.tau);
        let gammas = or(&self.gamma, base.loss.gamma);
        let wraps = if self.wrapped.is_empty() { vec![base.wrapped] } else { self.wrapped.clone() };
        let mut out = Vec::new();
        for &tau in &taus {
            for &gamma in &gammas {
                for &wrapped in &wraps {
                    out.push(SweepSetting { tau, gamma, wrapped });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: SweepSetting,
    pub run_dir: PathBuf,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub mae_pitch: Option<f64>,
    pub mae_yaw: Option<f64>,
    pub mae_roll: Option<f64>,
    pub mae_avg: Option<f64>,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub p_m: Option<f64>,
}

/// One training run per grid setting, all from the same seed. A failed run
/// is recorded and the sweep moves on. Writes `sweep.json` under `out`.
pub fn ablation_sweep(
    base: &TrainConfig,
    grid: &SweepGrid,
    out: &Path,
    on_epoch: &mut dyn FnMut(usize, &EpochMetrics),
) -> Result<Vec<SweepRow>> {
    let settings = grid.settings(base)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for (i, s) in settings.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.loss.tau = s.tau;
        cfg.loss.gamma = s.gamma;
        cfg.wrapped = s.wrapped;
        let run_dir = out.join(format!("run_{i:03}"));
        let result = train(&cfg, &run_dir, None, &mut |m| on_epoch(i, m));
        let row = match result {
            Ok(o) => {
                let mae = o.report.as_ref().and_then(|r| r.mae);
                SweepRow {
                    setting: *s,
                    run_dir,
                    ok: true,
                    error: None,
                    mae_pitch: mae.map(|m| m.pitch),
                    mae_yaw: mae.map(|m| m.yaw),
                    mae_roll: mae.map(|m| m.roll),
                    mae_avg: mae.map(|m| m.mean),
                    ap: o.report.as_ref().map(|r| r.ap),
                    ap50: o.report.as_ref().map(|r| r.ap50),
                    p_m: o.report.as_ref().map(|r| r.p_m),
                }
            }
            Err(e) => SweepRow {
                setting: *s,
                run_dir,
                ok: false,
                error: Some(e.to_string()),
                mae_pitch: None,
                mae_yaw: None,
                mae_roll: None,
                mae_avg: None,
                ap: None,
                ap50: None,
                p_m: None,
            },
        };
        rows.push(row);
        let json = serde_json::to_string_pretty(&rows).expect("rows serialize");
        let path = out.join("sweep.json");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}
