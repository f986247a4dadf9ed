//! `headpose`: synthetic data generation, label building, training, sweeps,
//! prediction, evaluation and plotting.

mod manifest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use headpose_core::datamodel::{DatasetFile, Meta, SCHEMA_VERSION};
use headpose_core::eval::{evaluate_files, EvalOptions, EvalReport, RangeMode};
use headpose_core::infer::{scan_images, Postprocess, Predictor};
use headpose_core::labelgen::{build_labels, load_scene_file, HemisphereConfig, LabelOptions, ReferenceHead};
use headpose_core::synthgen::{generate_benchmark, SceneSpec};
use headpose_core::trainer::{
    ablation_sweep, apply_override, read_metrics, train, SweepGrid, SweepRow, TrainConfig, CHECKPOINT_NAME,
    METRICS_NAME, REPORT_NAME,
};
use headpose_core::{plot, Error};

use manifest::{sidecar, Manifest};

/// Environment variable naming the default output root.
const OUT_ENV: &str = "HEADPOSE_OUT";

#[derive(Parser)]
#[command(name = "headpose", version, about = "Multi-person head detection and full-range head pose estimation")]
struct Cli {
    /// Suppress progress output.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Random seed; overrides the configuration's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location (defaults to $HEADPOSE_OUT/<command>, else runs/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, `key=value` with dotted keys; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic benchmark with train and val splits.
    BuildSynth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        train: usize,
        #[arg(long, default_value_t = 100)]
        val: usize,
    },
    /// Derive box and pose labels from a landmark-scene file.
    Labelgen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: PathBuf,
        /// Corner landmarks for alignment: 9, 11, 13, 15 or 17.
        #[arg(long)]
        corners: Option<usize>,
        /// Hemisphere radius as a multiple of the head extent.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train once per setting of a tau / gamma / wrapped-loss grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Detect heads and estimate poses.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        /// Image directory (file names in --gt are relative to it).
        #[arg(long)]
        images: PathBuf,
        /// Dataset whose image list and ids the predictions should follow.
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = Postprocess::default().conf_floor)]
        conf_floor: f64,
        #[arg(long, default_value_t = Postprocess::default().nms_iou)]
        nms_iou: f64,
    },
    /// Evaluate predictions against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "full")]
        range: String,
        /// Report path (defaults to report.json in the output location).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = EvalOptions::default().conf_threshold)]
        conf: f64,
        #[arg(long, default_value_t = EvalOptions::default().match_iou)]
        match_iou: f64,
    },
    /// Render SVG charts from a report, sweep table or metrics log.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
    },
}

/// Bad input detected by the command line itself.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn out_root(common: &Common, command: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command)
    })
}

/// Reads `--config` (or `{}`) and applies `--set` overrides.
fn config_value(common: &Common) -> Result<Value> {
    let mut v = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    for o in &common.overrides {
        apply_override(&mut v, o)?;
    }
    Ok(v)
}

fn parse_config<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| invalid(format!("{what} configuration: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    let say = |msg: String| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match cli.command {
        Command::BuildSynth { common, train, val } => {
            let mut spec: SceneSpec = parse_config(config_value(&common)?, "scene")?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            let out = out_root(&common, "build-synth");
            let b = generate_benchmark(&spec, train, val, &out)?;
            let mut m = Manifest::new(
                "build-synth",
                Some(spec.seed),
                serde_json::json!({"scene": spec, "train": train, "val": val}),
            );
            m.artifacts_under(&out)?;
            m.write(&out.join("manifest.json"))?;
            say(format!(
                "wrote {} train / {} val images ({} / {} heads) to {}",
                b.train.images.len(),
                b.val.images.len(),
                b.train.annotations.len(),
                b.val.annotations.len(),
                out.display()
            ));
        }
        Command::Labelgen {
            common,
            scenes,
            corners,
            kappa,
        } => {
            #[derive(serde::Deserialize, serde::Serialize, Default)]
            #[serde(default, deny_unknown_fields)]
            struct LabelConfig {
                corner_count: Option<usize>,
                hemisphere: HemisphereConfig,
            }
            let mut lc: LabelConfig = parse_config(config_value(&common)?, "label")?;
            if corners.is_some() {
                lc.corner_count = corners;
            }
            if let Some(k) = kappa {
                lc.hemisphere.kappa = k;
            }
            let opts = LabelOptions {
                corner_count: lc.corner_count.unwrap_or(LabelOptions::default().corner_count),
                hemisphere: lc.hemisphere,
                meta: Meta {
                    schema_version: SCHEMA_VERSION,
                    generator: "labelgen".into(),
                    seed: common.seed,
                },
            };
            let images = load_scene_file(&scenes)?;
            let ds = build_labels(&images, &ReferenceHead::default(), &opts)?;
            let out = match &common.out {
                Some(p) => p.clone(),
                None => out_root(&common, "labelgen").join("labels.json"),
            };
            create_parent(&out)?;
            ds.save(&out)?;
            let mut m = Manifest::new(
                "labelgen",
                common.seed,
                serde_json::json!({"corner_count": opts.corner_count, "hemisphere": opts.hemisphere}),
            );
            m.input(&scenes)?;
            m.artifact(out.parent().unwrap_or(Path::new("")), &out)?;
            m.write(&sidecar(&out))?;
            say(format!(
                "labelled {} heads in {} images -> {}",
                ds.annotations.len(),
                ds.images.len(),
                out.display()
            ));
        }
        Command::Train { common, resume } => {
            let cfg = load_train_config(&common)?;
            let out = out_root(&common, "train");
            let outcome = train(&cfg, &out, resume.as_deref(), &mut |m| {
                say(format!(
                    "epoch {:>3}  box {:.4}  obj {:.4}  pose {:.4}  yaw MAE {}  AP50 {}  P_M {}",
                    m.epoch,
                    m.l_box,
                    m.l_obj,
                    m.l_pose,
                    fmt_opt(m.val_mae_yaw, 2),
                    fmt_opt(m.val_ap50, 3),
                    fmt_opt(m.p_m, 3)
                ))
            })?;
            let mut m = Manifest::new("train", Some(cfg.seed), serde_json::to_value(&cfg)?);
            m.input(&cfg.train.annotations)?;
            if let Some(v) = &cfg.val {
                m.input(&v.annotations)?;
            }
            if let Some(r) = &resume {
                m.input(r)?;
            }
            for name in [CHECKPOINT_NAME, METRICS_NAME, REPORT_NAME] {
                let p = out.join(name);
                if p.exists() {
                    m.artifact(&out, &p)?;
                }
            }
            m.write(&out.join("manifest.json"))?;
            say(format!("checkpoint: {}", outcome.checkpoint.display()));
        }
        Command::Sweep { common, grid } => {
            let cfg = load_train_config(&common)?;
            let text = fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let g: SweepGrid = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", grid.display())))?;
            let out = out_root(&common, "sweep");
            let rows = ablation_sweep(&cfg, &g, &out, &mut |run, m| {
                say(format!(
                    "run {run} epoch {:>3}  yaw MAE {}  AP50 {}",
                    m.epoch,
                    fmt_opt(m.val_mae_yaw, 2),
                    fmt_opt(m.val_ap50, 3)
                ))
            })?;
            for (name, svg) in plot::sweep_charts(&rows) {
                write_text(&out.join(name), &svg)?;
            }
            let mut m = Manifest::new(
                "sweep",
                Some(cfg.seed),
                serde_json::json!({"train": cfg, "grid": g}),
            );
            m.input(&grid)?;
            m.artifacts_under(&out)?;
            m.write(&out.join("manifest.json"))?;
            for r in &rows {
                say(format!(
                    "tau {:.2} gamma {:.3} wrapped {:5}  MAE {}  AP {}{}",
                    r.setting.tau,
                    r.setting.gamma,
                    r.setting.wrapped,
                    fmt_opt(r.mae_avg, 2),
                    fmt_opt(r.ap, 3),
                    r.error.as_ref().map(|e| format!("  failed: {e}")).unwrap_or_default()
                ));
            }
        }
        Command::Predict {
            common,
            weights,
            images,
            gt,
            conf_floor,
            nms_iou,
        } => {
            if !(conf_floor > 0.0 && conf_floor < 1.0 && nms_iou > 0.0 && nms_iou < 1.0) {
                return Err(invalid("--conf-floor and --nms-iou must lie in (0, 1)"));
            }
            let mut predictor = Predictor::load(&weights)?;
            let records = match &gt {
                Some(p) => DatasetFile::load(p)?.images,
                None => scan_images(&images)?,
            };
            let post = Postprocess {
                conf_floor,
                nms_iou,
                ..Postprocess::default()
            };
            let preds = predictor.predict_records(&records, &images, &post)?;
            let out = match &common.out {
                Some(p) => p.clone(),
                None => out_root(&common, "predict").join("preds.json"),
            };
            create_parent(&out)?;
            preds.save(&out)?;
            let mut m = Manifest::new(
                "predict",
                None,
                serde_json::json!({"images": images, "postprocess": post}),
            );
            m.input(&weights)?;
            if let Some(p) = &gt {
                m.input(p)?;
            }
            m.artifact(out.parent().unwrap_or(Path::new("")), &out)?;
            m.write(&sidecar(&out))?;
            say(format!(
                "{} detections over {} images -> {}",
                preds.annotations.len(),
                preds.images.len(),
                out.display()
            ));
        }
        Command::Eval {
            common,
            pred,
            gt,
            range,
            report,
            conf,
            match_iou,
        } => {
            let range: RangeMode = range.parse()?;
            if !(conf > 0.0 && conf < 1.0 && match_iou > 0.0 && match_iou < 1.0) {
                return Err(invalid("--conf and --match-iou must lie in (0, 1)"));
            }
            let opts = EvalOptions {
                range,
                conf_threshold: conf,
                match_iou,
                ..EvalOptions::default()
            };
            let preds = DatasetFile::load(&pred)?;
            preds.validate()?;
            let gts = DatasetFile::load(&gt)?;
            gts.validate()?;
            let r = evaluate_files(&preds, &gts, &opts)?;
            let out = report.unwrap_or_else(|| out_root(&common, "eval").join("report.json"));
            create_parent(&out)?;
            write_text(&out, &(serde_json::to_string_pretty(&r)? + "\n"))?;
            let mut m = Manifest::new("eval", None, serde_json::to_value(opts)?);
            m.input(&pred)?;
            m.input(&gt)?;
            m.artifact(out.parent().unwrap_or(Path::new("")), &out)?;
            m.write(&sidecar(&out))?;
            say(summary(&r));
        }
        Command::Plot { common, report } => {
            let out = out_root(&common, "plot");
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let charts = charts_for(&report)?;
            let mut m = Manifest::new("plot", None, Value::Null);
            m.input(&report)?;
            for (name, svg) in charts {
                let p = out.join(&name);
                write_text(&p, &svg)?;
                m.artifact(&out, &p)?;
                say(format!("wrote {}", p.display()));
            }
            m.write(&out.join("plot.manifest.json"))?;
        }
    }
    Ok(())
}

fn load_train_config(common: &Common) -> Result<TrainConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| invalid("--config is required"))?;
    let mut cfg = TrainConfig::load(path, &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn charts_for(path: &Path) -> Result<Vec<(String, String)>> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return Ok(plot::training_curves(&read_metrics(path)?));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if v.is_array() {
        let rows: Vec<SweepRow> =
            serde_json::from_value(v).map_err(|e| invalid(format!("{}: not a sweep table: {e}", path.display())))?;
        return Ok(plot::sweep_charts(&rows));
    }
    let r: EvalReport =
        serde_json::from_value(v).map_err(|e| invalid(format!("{}: not an evaluation report: {e}", path.display())))?;
    Ok(vec![("mae_by_yaw.svg".into(), plot::yaw_bin_histogram(&r))])
}

fn summary(r: &EvalReport) -> String {
    let mae = match r.mae {
        Some(m) => format!(
            "MAE pitch {:.2} yaw {:.2} roll {:.2} mean {:.2}",
            m.pitch, m.yaw, m.roll, m.mean
        ),
        None => "MAE n/a (no matches)".into(),
    };
    format!(
        "{:?}: n {} matched {} P_M {:.3} AP {:.3} AP50 {:.3}  {mae}",
        r.range, r.n, r.n_hat, r.p_m, r.ap, r.ap50
    )
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
