//! Stage orchestration: per-image parallel stage runners with
//! quarantine-and-continue, the full run, and training-set assembly.

mod config;
mod train;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_key_values, validate_stage_order, PipelineConfig, Stage};
pub use train::{assemble_train_set, write_train_set, TrainRecord, TrainSet, TRAIN_CONFIG_FILE};

use crate::backbone::{AdapterCapabilities, BackboneAdapter};
use crate::compositor::{blend, BlendConfig, BlendRegion};
use crate::data::{
    clear_dataset_dir, load_annotations, save_annotations, AnnotatedImage, DatasetManifest,
};
use crate::error::{Error, Result};
use crate::filter::{
    build_prototype, hallucination_filter, EmbeddingModel, Eraser, FilterConfig, HrRecord,
    Prototype,
};
use crate::refine::{local_refine, Captioner, LrRecord, RefineConfig};
use crate::registry::Registry;
use crate::style::{gst_transfer, pick_style, GstRecord, StyleLatentCache, StyleTransferConfig};

pub const STAGE_REPORT_FILE: &str = "report.json";
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const FINAL_DIR: &str = "final";
pub const RETENTION_PLAN_FILE: &str = "retention_plan.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageDetail {
    Gst(GstRecord),
    Lr(LrRecord),
    Hr(HrRecord),
    Blend { alpha: f64, region: BlendRegion },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub quarantined: bool,
    pub error: Option<String>,
    pub detail: Option<StageDetail>,
}

/// What one stage did to every image. Contains no timing so reruns are
/// byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub config: serde_json::Value,
    pub backbone: Option<AdapterCapabilities>,
    pub prototype: Option<Prototype>,
    pub records: Vec<ImageRecord>,
    pub quarantined: Vec<String>,
}

impl StageReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(STAGE_REPORT_FILE);
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub manifest: DatasetManifest,
    pub report: StageReport,
}

fn stage_config<T: Serialize>(cfg: &T) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Map `f` over the records on a pool of `threads` workers (0 = all cores).
/// Failed images are copied through unchanged and listed as quarantined.
/// Outputs are re-validated; with `keep_annotations` their boxes and masks
/// must also equal the input's.
fn map_images<F>(
    stage: Stage,
    input: &DatasetManifest,
    threads: usize,
    keep_annotations: bool,
    f: F,
) -> Result<(DatasetManifest, Vec<ImageRecord>)>
where
    F: Fn(&AnnotatedImage) -> Result<(AnnotatedImage, StageDetail)> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<(AnnotatedImage, StageDetail)>> = pool.install(|| {
        input
            .records
            .par_iter()
            .map(|img| {
                let (out, detail) = f(img)?;
                out.validate()?;
                if keep_annotations && !out.same_annotations(img) {
                    return Err(Error::Consistency(format!(
                        "{stage} changed the annotations"
                    )));
                }
                Ok((out, detail))
            })
            .collect()
    });
    let mut manifest = DatasetManifest::new(input.name.clone(), input.domain);
    let mut records = Vec::with_capacity(results.len());
    for (img, res) in input.records.iter().zip(results) {
        match res {
            Ok((out, detail)) => {
                manifest.records.push(out);
                records.push(ImageRecord {
                    image_id: img.image_id.clone(),
                    quarantined: false,
                    error: None,
                    detail: Some(detail),
                });
            }
            Err(e) => {
                log::error!("{stage}: image '{}' quarantined: {e}", img.image_id);
                manifest.records.push(img.clone());
                records.push(ImageRecord {
                    image_id: img.image_id.clone(),
                    quarantined: true,
                    error: Some(e.to_string()),
                    detail: None,
                });
            }
        }
    }
    Ok((manifest, records))
}

fn finish(
    stage: Stage,
    config: serde_json::Value,
    backbone: Option<AdapterCapabilities>,
    prototype: Option<Prototype>,
    manifest: DatasetManifest,
    mut records: Vec<ImageRecord>,
) -> StageOutput {
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let quarantined = records
        .iter()
        .filter(|r| r.quarantined)
        .map(|r| r.image_id.clone())
        .collect();
    StageOutput {
        manifest,
        report: StageReport {
            stage,
            config,
            backbone,
            prototype,
            records,
            quarantined,
        },
    }
}

fn backbone_threads(backbone: &dyn BackboneAdapter, workers: usize) -> usize {
    if backbone.capabilities().serial {
        1
    } else {
        workers
    }
}

/// Global style transfer of every synthetic record toward a real style.
pub fn run_gst(
    content: &DatasetManifest,
    styles: &DatasetManifest,
    cfg: &StyleTransferConfig,
    backbone: &dyn BackboneAdapter,
    workers: usize,
) -> Result<StageOutput> {
    cfg.validate(backbone.schedule().t_max())?;
    if styles.records.is_empty() {
        return Err(Error::Config(format!(
            "style set '{}' is empty",
            styles.name
        )));
    }
    let cache = StyleLatentCache::new();
    let (manifest, records) = map_images(
        Stage::Gst,
        content,
        backbone_threads(backbone, workers),
        true,
        |img| {
            let style = pick_style(&img.image_id, &styles.records, cfg)?;
            let (out, rec) = gst_transfer(img, style, cfg, backbone, Some(&cache))?;
            Ok((out, StageDetail::Gst(rec)))
        },
    )?;
    Ok(finish(
        Stage::Gst,
        stage_config(cfg),
        Some(backbone.capabilities()),
        None,
        manifest,
        records,
    ))
}

/// Local refinement of every instance.
pub fn run_lr(
    input: &DatasetManifest,
    cfg: &RefineConfig,
    backbone: &dyn BackboneAdapter,
    captioner: &dyn Captioner,
    workers: usize,
) -> Result<StageOutput> {
    cfg.validate(backbone.schedule().t_max())?;
    let (manifest, records) = map_images(
        Stage::Lr,
        input,
        backbone_threads(backbone, workers),
        true,
        |img| {
            let (out, rec) = local_refine(img, cfg, backbone, captioner)?;
            Ok((out, StageDetail::Lr(rec)))
        },
    )?;
    Ok(finish(
        Stage::Lr,
        stage_config(cfg),
        Some(backbone.capabilities()),
        None,
        manifest,
        records,
    ))
}

/// Hallucination removal against a prototype built from `real`.
pub fn run_hr(
    input: &DatasetManifest,
    real: &DatasetManifest,
    cfg: &FilterConfig,
    embedder: &dyn EmbeddingModel,
    eraser: &dyn Eraser,
    workers: usize,
) -> Result<StageOutput> {
    cfg.validate()?;
    let proto = build_prototype(real, embedder, cfg.lambda, &cfg.anchor_text, cfg.crop_pad)?;
    let (manifest, records) = map_images(Stage::Hr, input, workers, false, |img| {
        let (out, rec) = hallucination_filter(img, &proto, cfg, embedder, eraser)?;
        Ok((out, StageDetail::Hr(rec)))
    })?;
    Ok(finish(
        Stage::Hr,
        stage_config(cfg),
        None,
        Some(proto),
        manifest,
        records,
    ))
}

/// Blend each styled record with the original of the same id.
pub fn run_blend(
    original: &DatasetManifest,
    styled: &DatasetManifest,
    cfg: &BlendConfig,
    workers: usize,
) -> Result<StageOutput> {
    cfg.validate()?;
    let (manifest, records) = map_images(Stage::Blend, styled, workers, true, |img| {
        let orig = original
            .get(&img.image_id)
            .ok_or_else(|| Error::Consistency(format!("no original for '{}'", img.image_id)))?;
        let out = blend(orig, img, cfg)?;
        Ok((
            out,
            StageDetail::Blend {
                alpha: cfg.alpha,
                region: cfg.region,
            },
        ))
    })?;
    Ok(finish(
        Stage::Blend,
        stage_config(cfg),
        None,
        None,
        manifest,
        records,
    ))
}

/// Save a stage's dataset and report into `dir`, replacing previous output.
pub fn write_stage(
    out: &StageOutput,
    dir: &Path,
    format: crate::data::AnnotationFormat,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    clear_dataset_dir(dir)?;
    save_annotations(&out.manifest, dir, format)?;
    out.report.write(dir)?;
    if out.report.stage == Stage::Hr {
        let plans: Vec<_> = out
            .report
            .records
            .iter()
            .filter_map(|r| match &r.detail {
                Some(StageDetail::Hr(h)) => Some(&h.plan),
                _ => None,
            })
            .collect();
        let path = dir.join(RETENTION_PLAN_FILE);
        let text = serde_json::to_string_pretty(&plans).expect("plan serializes") + "\n";
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub dir: String,
    pub images: usize,
    pub quarantined: Vec<String>,
}

/// Top-level report of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub stages: Vec<StageSummary>,
    pub backbone: Option<AdapterCapabilities>,
    pub models: Vec<(String, String)>,
    pub input_images: usize,
    pub real_images: usize,
    pub final_dir: String,
    pub total_quarantined: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_manifest: DatasetManifest,
    pub reports: Vec<StageReport>,
    pub run_report: RunReport,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn quarantined(&self) -> usize {
        self.run_report.total_quarantined
    }
}

/// Run every enabled stage in order. Each stage's output is written to
/// `<root>/<NN>_<stage>/` and read back as the next stage's input, so a run
/// equals chaining the single-stage commands.
pub fn run_pipeline(cfg: &PipelineConfig, registry: &Registry) -> Result<RunOutcome> {
    cfg.validate()?;
    let synthetic = load_annotations(&cfg.synthetic_dir, cfg.format)?;
    let real = match &cfg.real_dir {
        Some(dir) => Some(load_annotations(dir, cfg.format)?),
        None => None,
    };
    let uses_backbone = cfg.stages.iter().any(|s| s.uses_backbone());
    let backbone: Option<Arc<dyn BackboneAdapter>> = if uses_backbone {
        let b = registry.backbone(&cfg.backbone)?;
        cfg.validate_for_backbone(b.schedule().t_max())?;
        Some(b)
    } else {
        None
    };
    let mut models = Vec::new();
    if let Some(b) = &backbone {
        models.push(("backbone".to_string(), b.capabilities().name));
    }
    let captioner = if cfg.stages.contains(&Stage::Lr) {
        models.push(("captioner".into(), cfg.lr.captioner.clone()));
        Some(registry.captioner(&cfg.lr.captioner)?)
    } else {
        None
    };
    let (embedder, eraser) = if cfg.stages.contains(&Stage::Hr) {
        models.push(("embedder".into(), cfg.hr.embedder.clone()));
        models.push(("eraser".into(), cfg.hr.eraser.clone()));
        (
            Some(registry.embedder(&cfg.hr.embedder)?),
            Some(registry.eraser(&cfg.hr.eraser)?),
        )
    } else {
        (None, None)
    };

    let root = &cfg.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut current = synthetic.clone();
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    for (i, stage) in cfg.stages.iter().enumerate() {
        log::info!("stage {stage}: {} images", current.records.len());
        let real_set = || {
            real.as_ref()
                .ok_or_else(|| Error::Config("input.real is required".into()))
        };
        let out = match stage {
            Stage::Gst => run_gst(
                &current,
                real_set()?,
                &cfg.gst,
                backbone.as_deref().expect("backbone"),
                cfg.workers,
            )?,
            Stage::Lr => run_lr(
                &current,
                &cfg.lr,
                backbone.as_deref().expect("backbone"),
                captioner.as_deref().expect("captioner"),
                cfg.workers,
            )?,
            Stage::Hr => run_hr(
                &current,
                real_set()?,
                &cfg.hr,
                embedder.as_deref().expect("embedder"),
                eraser.as_deref().expect("eraser"),
                cfg.workers,
            )?,
            Stage::Blend => run_blend(&synthetic, &current, &cfg.blend, cfg.workers)?,
        };
        let name = format!("{:02}_{stage}", i + 1);
        let dir = root.join(&name);
        write_stage(&out, &dir, cfg.format)?;
        current = load_annotations(&dir, cfg.format)?;
        summaries.push(StageSummary {
            stage: *stage,
            dir: name,
            images: out.manifest.records.len(),
            quarantined: out.report.quarantined.clone(),
        });
        reports.push(out.report);
    }
    let final_dir = root.join(FINAL_DIR);
    fs::create_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
    clear_dataset_dir(&final_dir)?;
    save_annotations(&current, &final_dir, cfg.format)?;

    let run_report = RunReport {
        seed: cfg.seed,
        stages: summaries,
        backbone: backbone.as_ref().map(|b| b.capabilities()),
        models,
        input_images: synthetic.records.len(),
        real_images: real.as_ref().map_or(0, |r| r.records.len()),
        final_dir: FINAL_DIR.to_string(),
        total_quarantined: reports.iter().map(|r| r.quarantined.len()).sum(),
    };
    let path = root.join(RUN_REPORT_FILE);
    let text = serde_json::to_string_pretty(&run_report).expect("report serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(RunOutcome {
        final_manifest: current,
        reports,
        run_report,
        output_dir: root.clone(),
    })
}
