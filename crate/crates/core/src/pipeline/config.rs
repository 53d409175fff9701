//! Flat `key=value` run configuration with dotted section prefixes.
//!
//! ```text
//! # comment
//! input.synthetic = data/synthetic
//! input.real = data/real
//! output.root = out
//! run.seed = 7
//! gst.steps = 50
//! blend.enabled = true
//! ```
//!
//! Keys may appear in any order; unknown or repeated keys are errors.
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compositor::BlendConfig;
use crate::data::AnnotationFormat;
use crate::error::{Error, Result};
use crate::filter::FilterConfig;
use crate::refine::RefineConfig;
use crate::style::{StylePick, StyleTransferConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Gst,
    Lr,
    Hr,
    Blend,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Gst => "gst",
            Stage::Lr => "lr",
            Stage::Hr => "hr",
            Stage::Blend => "blend",
        }
    }

    /// Stages that call the diffusion backbone.
    pub fn uses_backbone(self) -> bool {
        matches!(self, Stage::Gst | Stage::Lr)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gst" => Ok(Stage::Gst),
            "lr" => Ok(Stage::Lr),
            "hr" => Ok(Stage::Hr),
            "blend" => Ok(Stage::Blend),
            _ => Err(Error::Config(format!("unknown stage '{s}'"))),
        }
    }
}

/// Accept orders that keep GST → LR → HR, with blend placed right after GST
/// or right after LR (and never after HR).
pub fn validate_stage_order(stages: &[Stage]) -> Result<()> {
    let listed = stages
        .iter()
        .map(|s| s.name())
        .collect::<Vec<_>>()
        .join(",");
    let bad = |why: &str| {
        Err(Error::Config(format!(
            "invalid stage order '{listed}': {why}"
        )))
    };
    for (i, s) in stages.iter().enumerate() {
        if stages[..i].contains(s) {
            return bad("stage listed twice");
        }
    }
    let core: Vec<Stage> = stages
        .iter()
        .copied()
        .filter(|s| *s != Stage::Blend)
        .collect();
    if core.windows(2).any(|w| w[0] >= w[1]) {
        return bad("stages must follow gst, lr, hr");
    }
    if let Some(b) = stages.iter().position(|s| *s == Stage::Blend) {
        if !stages.contains(&Stage::Gst) {
            return bad("blend needs gst output");
        }
        if b == 0 || !matches!(stages[b - 1], Stage::Gst | Stage::Lr) {
            return bad("blend must directly follow gst or lr");
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub stages: Vec<Stage>,
    pub synthetic_dir: PathBuf,
    pub real_dir: Option<PathBuf>,
    pub format: AnnotationFormat,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    pub backbone: String,
    pub gst: StyleTransferConfig,
    pub lr: RefineConfig,
    pub hr: FilterConfig,
    pub blend: BlendConfig,
    pub lambda_orig: f64,
    pub lambda_tran: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stages: vec![Stage::Gst, Stage::Lr, Stage::Hr],
            synthetic_dir: PathBuf::from("synthetic"),
            real_dir: None,
            format: AnnotationFormat::YoloTxt,
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 0,
            backbone: "toy".into(),
            gst: StyleTransferConfig::default(),
            lr: RefineConfig::default(),
            hr: FilterConfig::default(),
            blend: BlendConfig::default(),
            lambda_orig: 1.0,
            lambda_tran: 1.0,
        }
    }
}

/// Parse `key=value` lines; `#` starts a comment line.
pub fn parse_key_values(text: &str, path: &Path) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected key=value".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(err("empty key".into()));
        }
        if out.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
            return Err(err(format!("key '{k}' given twice")));
        }
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, line: usize, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value '{v}' for {key}")))
}

fn flag(key: &str, line: usize, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "line {line}: {key} expects true/false, got '{v}'"
        ))),
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn parse(text: &str, path: &Path, base: &Path) -> Result<Self> {
        let kv = parse_key_values(text, path)?;
        let mut cfg = PipelineConfig::default();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut toggles: BTreeMap<Stage, bool> = BTreeMap::new();
        let mut explicit: Option<Vec<Stage>> = None;
        let mut blend_after_lr = false;
        let mut seed_set = false;
        for (key, (line, v)) in &kv {
            let (line, v) = (*line, v.as_str());
            match key.as_str() {
                "pipeline.stages" => {
                    let list = if v.is_empty() || v == "none" {
                        Vec::new()
                    } else {
                        v.split(',')
                            .map(|s| s.trim().parse())
                            .collect::<Result<Vec<Stage>>>()?
                    };
                    explicit = Some(list);
                }
                "gst.enabled" => {
                    toggles.insert(Stage::Gst, flag(key, line, v)?);
                }
                "lr.enabled" => {
                    toggles.insert(Stage::Lr, flag(key, line, v)?);
                }
                "hr.enabled" => {
                    toggles.insert(Stage::Hr, flag(key, line, v)?);
                }
                "blend.enabled" => {
                    toggles.insert(Stage::Blend, flag(key, line, v)?);
                }
                "blend.position" => {
                    blend_after_lr = match v {
                        "after-gst" => false,
                        "after-lr" => true,
                        _ => {
                            return Err(Error::Config(format!(
                                "line {line}: blend.position is after-gst or after-lr"
                            )))
                        }
                    }
                }
                "input.synthetic" => cfg.synthetic_dir = resolve(v),
                "input.real" => cfg.real_dir = Some(resolve(v)),
                "input.format" => cfg.format = value(key, line, v)?,
                "output.root" => cfg.output_dir = resolve(v),
                "run.seed" => {
                    cfg.seed = value(key, line, v)?;
                    seed_set = true;
                }
                "run.workers" => cfg.workers = value(key, line, v)?,
                "models.backbone" => cfg.backbone = v.to_string(),
                "gst.steps" => cfg.gst.num_steps = value(key, line, v)?,
                "gst.invert_t" => cfg.gst.inversion_t = value(key, line, v)?,
                "gst.adain_eps" => cfg.gst.adain_eps = value(key, line, v)?,
                "gst.style" => {
                    cfg.gst.style_pick = if v == "random" {
                        StylePick::Random
                    } else {
                        StylePick::Fixed(v.to_string())
                    }
                }
                "lr.scale" => cfg.lr.scale = value(key, line, v)?,
                "lr.refine_t" => cfg.lr.refine_t = value(key, line, v)?,
                "lr.pad" => cfg.lr.context_pad = value(key, line, v)?,
                "lr.captioner" => cfg.lr.captioner = v.to_string(),
                "hr.lambda" => cfg.hr.lambda = value(key, line, v)?,
                "hr.alpha" => cfg.hr.alpha = value(key, line, v)?,
                "hr.mode" => cfg.hr.mode = v.parse()?,
                "hr.anchor" => cfg.hr.anchor_text = v.to_string(),
                "hr.pad" => cfg.hr.crop_pad = value(key, line, v)?,
                "hr.embedder" => cfg.hr.embedder = v.to_string(),
                "hr.eraser" => cfg.hr.eraser = v.to_string(),
                "blend.alpha" => cfg.blend.alpha = value(key, line, v)?,
                "blend.region" => cfg.blend.region = v.parse()?,
                "train.lambda_orig" => cfg.lambda_orig = value(key, line, v)?,
                "train.lambda_tran" => cfg.lambda_tran = value(key, line, v)?,
                other => return Err(Error::Config(format!("line {line}: unknown key '{other}'"))),
            }
        }
        cfg.stages = match explicit {
            Some(list) => {
                if !toggles.is_empty() || kv.contains_key("blend.position") {
                    return Err(Error::Config(
                        "pipeline.stages cannot be combined with *.enabled or blend.position"
                            .into(),
                    ));
                }
                list
            }
            None => {
                let on = |s: Stage, default: bool| toggles.get(&s).copied().unwrap_or(default);
                let mut list = Vec::new();
                if on(Stage::Gst, true) {
                    list.push(Stage::Gst);
                }
                let blend = on(Stage::Blend, false);
                if blend && !blend_after_lr {
                    list.push(Stage::Blend);
                }
                if on(Stage::Lr, true) {
                    list.push(Stage::Lr);
                }
                if blend && blend_after_lr {
                    list.push(Stage::Blend);
                }
                if on(Stage::Hr, true) {
                    list.push(Stage::Hr);
                }
                list
            }
        };
        if seed_set {
            cfg.gst.seed = cfg.seed;
            cfg.hr.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        validate_stage_order(&self.stages)?;
        if !(self.lambda_orig > 0.0 && self.lambda_tran > 0.0) {
            return Err(Error::Config(
                "train.lambda_orig and train.lambda_tran must be > 0".into(),
            ));
        }
        if self.gst.num_steps == 0 {
            return Err(Error::Config("gst.steps must be >= 1".into()));
        }
        self.hr.validate()?;
        self.blend.validate()?;
        if self.real_dir.is_none()
            && self
                .stages
                .iter()
                .any(|s| matches!(s, Stage::Gst | Stage::Hr))
        {
            return Err(Error::Config(
                "input.real is required for gst and hr".into(),
            ));
        }
        Ok(())
    }

    /// Stage configs checked against the backbone's schedule length.
    pub fn validate_for_backbone(&self, t_max: usize) -> Result<()> {
        if self.stages.contains(&Stage::Gst) {
            self.gst.validate(t_max)?;
        }
        if self.stages.contains(&Stage::Lr) {
            self.lr.validate(t_max)?;
        }
        Ok(())
    }
}
