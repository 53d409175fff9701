use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aerialign_core::compositor::{BlendConfig, BlendRegion};
use aerialign_core::data::{
    clear_dataset_dir, load_annotations, save_annotations, AnnotationFormat,
};
use aerialign_core::filter::{FilterConfig, RetentionMode, DEFAULT_ANCHOR_TEXT};
use aerialign_core::metrics::{
    default_thresholds, ground_truth, image_fid, load_predictions, map_eval, patch_fid, FidMode,
};
use aerialign_core::pipeline::{
    assemble_train_set, run_blend, run_gst, run_hr, run_lr, run_pipeline, write_stage,
    write_train_set, PipelineConfig, StageOutput,
};
use aerialign_core::refine::RefineConfig;
use aerialign_core::registry::Registry;
use aerialign_core::style::{StylePick, StyleTransferConfig};
use aerialign_core::toy::toy_dataset;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

/// Exit status when the command finished but quarantined images.
const EXIT_QUARANTINED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "aerialign",
    version,
    about = "Sim-to-real translation of annotated aerial imagery"
)]
struct Cli {
    /// Log progress (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Annotation format of input and output sets.
    #[arg(long, default_value = "yolo-txt")]
    format: AnnotationFormat,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Global style transfer of synthetic images toward real ones.
    Gst {
        #[arg(long)]
        content_dir: PathBuf,
        #[arg(long)]
        style_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 600)]
        invert_t: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `random` or the id of one style image.
        #[arg(long, default_value = "random")]
        style: String,
        #[arg(long, default_value = "toy")]
        backbone: String,
        #[command(flatten)]
        common: Common,
    },
    /// One-step local refinement of every person instance.
    Lr {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        scale: usize,
        #[arg(long, default_value_t = 200)]
        refine_t: usize,
        #[arg(long, default_value_t = 0.2)]
        pad: f64,
        #[arg(long, default_value = "toy")]
        captioner: String,
        #[arg(long, default_value = "toy")]
        backbone: String,
        #[command(flatten)]
        common: Common,
    },
    /// Remove person instances that do not resemble real ones.
    Hr {
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long)]
        real_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, default_value_t = 10.0)]
        alpha: f64,
        /// `bernoulli`, `budget:<fraction>` or `budget:<count>`.
        #[arg(long, default_value = "budget:0.5")]
        mode: RetentionMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_ANCHOR_TEXT)]
        anchor: String,
        #[arg(long, default_value_t = 0.2)]
        pad: f64,
        #[arg(long, default_value = "toy")]
        embedder: String,
        #[arg(long, default_value = "toy")]
        eraser: String,
        #[command(flatten)]
        common: Common,
    },
    /// Interpolate original and styled images.
    Blend {
        #[arg(long)]
        orig_dir: PathBuf,
        #[arg(long)]
        styled_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        /// `auto`, `full` or `background`.
        #[arg(long, default_value = "auto")]
        region: BlendRegion,
        #[command(flatten)]
        common: Common,
    },
    /// Fréchet distance between two sets, over whole frames or person crops.
    EvalFid {
        #[arg(long)]
        set_a: PathBuf,
        #[arg(long)]
        set_b: PathBuf,
        #[arg(long, default_value = "image")]
        mode: FidMode,
        #[arg(long, default_value = "toy")]
        extractor: String,
        #[arg(long, default_value_t = 0.2)]
        pad: f64,
        #[arg(long, default_value = "yolo-txt")]
        format: AnnotationFormat,
    },
    /// mAP@50 and mAP@50-95 of a prediction file against a labeled set.
    EvalMap {
        /// Lines of `image_id class score cx cy w h`.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long, default_value = "yolo-txt")]
        format: AnnotationFormat,
    },
    /// Full pipeline from a key=value config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge translated and real sets with per-domain loss weights.
    MakeTrainSet {
        #[arg(long)]
        translated_dir: PathBuf,
        #[arg(long)]
        real_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda_orig: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_tran: f64,
        #[arg(long, default_value = "yolo-txt")]
        format: AnnotationFormat,
    },
    /// Write a small synthetic/real toy dataset pair.
    ToyData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5)]
        synthetic: usize,
        #[arg(long, default_value_t = 3)]
        real: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "yolo-txt")]
        format: AnnotationFormat,
    },
}

fn load(dir: &Path, format: AnnotationFormat) -> Result<aerialign_core::DatasetManifest> {
    load_annotations(dir, format).with_context(|| format!("loading {}", dir.display()))
}

fn finish_stage(out: StageOutput, dir: &Path, format: AnnotationFormat) -> Result<u8> {
    write_stage(&out, dir, format).with_context(|| format!("writing {}", dir.display()))?;
    let q = out.report.quarantined.len();
    println!(
        "{}: {} images written to {} ({} quarantined)",
        out.report.stage,
        out.manifest.records.len(),
        dir.display(),
        q
    );
    Ok(if q == 0 { 0 } else { EXIT_QUARANTINED })
}

fn execute(cmd: Command) -> Result<u8> {
    let registry = Registry::new();
    match cmd {
        Command::Gst {
            content_dir,
            style_dir,
            out_dir,
            steps,
            invert_t,
            seed,
            style,
            backbone,
            common,
        } => {
            let content = load(&content_dir, common.format)?;
            let styles = load(&style_dir, common.format)?;
            let cfg = StyleTransferConfig {
                inversion_t: invert_t,
                num_steps: steps,
                style_pick: if style == "random" {
                    StylePick::Random
                } else {
                    StylePick::Fixed(style)
                },
                seed,
                ..Default::default()
            };
            let bb = registry.backbone(&backbone)?;
            finish_stage(
                run_gst(&content, &styles, &cfg, bb.as_ref(), common.workers)?,
                &out_dir,
                common.format,
            )
        }
        Command::Lr {
            in_dir,
            out_dir,
            scale,
            refine_t,
            pad,
            captioner,
            backbone,
            common,
        } => {
            let input = load(&in_dir, common.format)?;
            let cfg = RefineConfig {
                scale,
                refine_t,
                context_pad: pad,
                captioner: captioner.clone(),
            };
            let bb = registry.backbone(&backbone)?;
            let cap = registry.captioner(&captioner)?;
            finish_stage(
                run_lr(&input, &cfg, bb.as_ref(), cap.as_ref(), common.workers)?,
                &out_dir,
                common.format,
            )
        }
        Command::Hr {
            in_dir,
            real_dir,
            out_dir,
            lambda,
            alpha,
            mode,
            seed,
            anchor,
            pad,
            embedder,
            eraser,
            common,
        } => {
            let input = load(&in_dir, common.format)?;
            let real = load(&real_dir, common.format)?;
            let cfg = FilterConfig {
                lambda,
                alpha,
                mode,
                seed,
                anchor_text: anchor,
                crop_pad: pad,
                embedder: embedder.clone(),
                eraser: eraser.clone(),
            };
            let emb = registry.embedder(&embedder)?;
            let era = registry.eraser(&eraser)?;
            let out = run_hr(
                &input,
                &real,
                &cfg,
                emb.as_ref(),
                era.as_ref(),
                common.workers,
            )?;
            finish_stage(out, &out_dir, common.format)
        }
        Command::Blend {
            orig_dir,
            styled_dir,
            out_dir,
            alpha,
            region,
            common,
        } => {
            let orig = load(&orig_dir, common.format)?;
            let styled = load(&styled_dir, common.format)?;
            let out = run_blend(
                &orig,
                &styled,
                &BlendConfig { alpha, region },
                common.workers,
            )?;
            finish_stage(out, &out_dir, common.format)
        }
        Command::EvalFid {
            set_a,
            set_b,
            mode,
            extractor,
            pad,
            format,
        } => {
            let (a, b) = (load(&set_a, format)?, load(&set_b, format)?);
            let ex = registry.extractor(&extractor)?;
            let report = match mode {
                FidMode::Image => image_fid(&a, &b, ex.as_ref())?,
                FidMode::Patch => patch_fid(&a, &b, ex.as_ref(), pad)?,
            };
            println!("{}", serde_json_line(&report)?);
            Ok(0)
        }
        Command::EvalMap {
            pred,
            gt_dir,
            format,
        } => {
            let dets = load_predictions(&pred)?;
            let gt = ground_truth(&load(&gt_dir, format)?);
            let report = map_eval(&dets, &gt, &default_thresholds());
            println!("{}", serde_json_line(&report)?);
            Ok(0)
        }
        Command::Run { config } => {
            let cfg = PipelineConfig::from_file(&config)?;
            let outcome = run_pipeline(&cfg, &registry)?;
            let q = outcome.quarantined();
            println!(
                "run: {} stages, {} images, {} quarantined, output in {}",
                outcome.reports.len(),
                outcome.final_manifest.records.len(),
                q,
                outcome.output_dir.display()
            );
            Ok(if q == 0 { 0 } else { EXIT_QUARANTINED })
        }
        Command::MakeTrainSet {
            translated_dir,
            real_dir,
            out_dir,
            lambda_orig,
            lambda_tran,
            format,
        } => {
            let set = assemble_train_set(
                &load(&translated_dir, format)?,
                &load(&real_dir, format)?,
                lambda_orig,
                lambda_tran,
            )?;
            write_train_set(&set, &out_dir, format)?;
            for w in &set.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "train set: {} records written to {}",
                set.records.len(),
                out_dir.display()
            );
            Ok(0)
        }
        Command::ToyData {
            out_dir,
            synthetic,
            real,
            seed,
            format,
        } => {
            let (syn, rl) = toy_dataset(synthetic, real, seed);
            for (m, sub) in [(&syn, "synthetic"), (&rl, "real")] {
                let dir = out_dir.join(sub);
                std::fs::create_dir_all(&dir)?;
                clear_dataset_dir(&dir)?;
                save_annotations(m, &dir, format)?;
            }
            println!(
                "toy data: {synthetic} synthetic + {real} real images in {}",
                out_dir.display()
            );
            Ok(0)
        }
    }
}

fn serde_json_line<T: serde::Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
