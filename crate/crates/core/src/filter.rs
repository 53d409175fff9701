//! Hallucination removal: score synthetic person crops against a prototype
//! of real-person embeddings anchored to a text description, retain
//! instances stochastically by a softmax over the scores and erase the rest
//! from pixels and annotations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{crop_instance, AnnotatedImage, DatasetManifest};
use crate::error::{Error, Result};
use crate::raster::{Image, Mask};
use crate::seed::{derive_seed, rng_for};

pub const DEFAULT_ANCHOR_TEXT: &str = "a photo of a person taken from a drone.";

/// Joint image-text embedding model.
pub trait EmbeddingModel: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, patch: &Image) -> Result<Vec<f64>>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Mask-guided object remover: returns a full image whose pixels inside
/// `mask` replace the instance.
pub trait Eraser: Send + Sync {
    fn name(&self) -> &str;
    fn erase(&self, image: &Image, mask: &Mask) -> Result<Image>;
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    v.iter().map(|x| x / n).collect()
}

/// Cosine similarity with explicit norm division; 0 when either side is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// `normalize((1/M) Σ u_m)`; summation order is canonicalized so the
/// result does not depend on input order.
pub fn mean_real_embedding(real: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = real
        .first()
        .ok_or(Error::SampleSize { needed: 1, got: 0 })?;
    let dim = first.len();
    if real.iter().any(|u| u.len() != dim) {
        return Err(Error::Dimension(
            "real embeddings differ in dimension".into(),
        ));
    }
    let mut sorted: Vec<&Vec<f64>> = real.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .map(|v| v.to_bits())
            .cmp(b.iter().map(|v| v.to_bits()))
    });
    let mut mean = vec![0.0; dim];
    for u in sorted {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v;
        }
    }
    let m = real.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    let scale: f64 = real.iter().map(|u| norm(u)).sum::<f64>() / m;
    let n = norm(&mean);
    if !(n > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateMean);
    }
    Ok(mean.iter().map(|v| v / n).collect())
}

/// `L(v) = vᵀū + λ·vᵀt_anchor`.
pub fn objective_value(v: &[f64], mean: &[f64], anchor: &[f64], lambda: f64) -> f64 {
    dot(v, mean) + lambda * dot(v, anchor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub t_star: Vec<f64>,
    pub lambda: f64,
    pub anchor_text: String,
    pub source_count: usize,
}

/// Closed-form maximizer of [`objective_value`] on the unit sphere:
/// `(ū + λ t)/‖ū + λ t‖`.
pub fn prototype(mean: &[f64], anchor: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if mean.len() != anchor.len() {
        return Err(Error::Dimension(format!(
            "mean embedding has dim {}, anchor has dim {}",
            mean.len(),
            anchor.len()
        )));
    }
    let w: Vec<f64> = mean
        .iter()
        .zip(anchor)
        .map(|(u, t)| u + lambda * t)
        .collect();
    let n = norm(&w);
    let scale = norm(mean) + lambda.abs() * norm(anchor);
    if !(n > 1e-12 * scale) {
        return Err(Error::DegeneratePrototype);
    }
    Ok(w.iter().map(|v| v / n).collect())
}

/// Build the prototype from every instance crop of the real set.
pub fn build_prototype(
    real: &DatasetManifest,
    embedder: &dyn EmbeddingModel,
    lambda: f64,
    anchor_text: &str,
    crop_pad: f64,
) -> Result<Prototype> {
    let mut embeddings = Vec::new();
    for rec in &real.records {
        for i in 0..rec.boxes.len() {
            match crop_instance(rec, i, crop_pad) {
                Ok(p) => embeddings.push(
                    embedder
                        .embed(&p.pixels)
                        .map_err(|e| e.with_image(&rec.image_id))?,
                ),
                Err(Error::DegenerateBox { .. }) => {
                    log::warn!("{}: real instance {i} too small to embed", rec.image_id)
                }
                Err(e) => return Err(e.with_image(&rec.image_id)),
            }
        }
    }
    if embeddings.is_empty() {
        return Err(Error::EmptyPatchSet(real.name.clone()));
    }
    let mean = mean_real_embedding(&embeddings)?;
    let anchor = embedder.embed_text(anchor_text)?;
    if norm(&anchor) == 0.0 {
        return Err(Error::DegeneratePrototype);
    }
    let t_star = prototype(&mean, &normalized(&anchor), lambda)?;
    Ok(Prototype {
        t_star,
        lambda,
        anchor_text: anchor_text.to_string(),
        source_count: embeddings.len(),
    })
}

/// `p_k = exp(α s_k)/Σ_j exp(α s_j)`, max-subtracted.
pub fn retention_probs(scores: &[f64], alpha: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let logits: Vec<f64> = scores.iter().map(|s| alpha * s).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    /// Keep `round(fraction·K)` instances.
    Fraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetentionMode {
    /// Independent coin per instance with probability `p_k`.
    Bernoulli,
    /// Draw instances without replacement proportionally to `p_k`.
    Budget(Budget),
}

impl Default for RetentionMode {
    fn default() -> Self {
        RetentionMode::Budget(Budget::Fraction(0.5))
    }
}

impl FromStr for RetentionMode {
    type Err = Error;

    /// `bernoulli`, `budget:<fraction>` (contains a '.') or `budget:<count>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid retention mode '{s}'"));
        if s == "bernoulli" {
            return Ok(RetentionMode::Bernoulli);
        }
        let arg = s.strip_prefix("budget:").ok_or_else(bad)?;
        if arg.contains('.') {
            let f: f64 = arg.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&f) {
                return Err(bad());
            }
            Ok(RetentionMode::Budget(Budget::Fraction(f)))
        } else {
            Ok(RetentionMode::Budget(Budget::Count(
                arg.parse().map_err(|_| bad())?,
            )))
        }
    }
}

impl fmt::Display for RetentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetentionMode::Bernoulli => f.write_str("bernoulli"),
            RetentionMode::Budget(Budget::Fraction(x)) => write!(f, "budget:{x:?}"),
            RetentionMode::Budget(Budget::Count(n)) => write!(f, "budget:{n}"),
        }
    }
}

/// Number of instances a budget keeps out of `k`, with a warning when a
/// count exceeds `k`.
pub fn budget_size(budget: Budget, k: usize) -> (usize, Option<String>) {
    match budget {
        Budget::Fraction(f) => ((((f * k as f64) + 0.5).floor() as usize).min(k), None),
        Budget::Count(n) if n > k => (
            k,
            Some(format!("budget {n} exceeds {k} instances; clamped")),
        ),
        Budget::Count(n) => (n, None),
    }
}

/// Keep decisions for one image; `rng` must be seeded per image.
pub fn select_retained<R: Rng>(
    probs: &[f64],
    mode: RetentionMode,
    rng: &mut R,
) -> (Vec<bool>, Option<String>) {
    let k = probs.len();
    match mode {
        RetentionMode::Bernoulli => (
            probs.iter().map(|&p| rng.random::<f64>() < p).collect(),
            None,
        ),
        RetentionMode::Budget(b) => {
            let (n, warning) = budget_size(b, k);
            let mut keep = vec![false; k];
            for _ in 0..n {
                let total: f64 = (0..k).filter(|&i| !keep[i]).map(|i| probs[i]).sum();
                let pick = if total > 0.0 {
                    let mut u = rng.random::<f64>() * total;
                    let mut chosen = None;
                    for i in (0..k).filter(|&i| !keep[i]) {
                        chosen = Some(i);
                        if u < probs[i] {
                            break;
                        }
                        u -= probs[i];
                    }
                    chosen
                } else {
                    // remaining mass underflowed to zero: take the first left
                    (0..k).find(|&i| !keep[i])
                };
                if let Some(i) = pick {
                    keep[i] = true;
                }
            }
            (keep, warning)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionEntry {
    pub image_id: String,
    pub instance_id: u32,
    pub score: f64,
    pub probability: f64,
    pub keep: bool,
}

/// Retention decisions for one image, serialized for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionPlan {
    pub image_id: String,
    pub alpha: f64,
    pub mode: RetentionMode,
    pub seed: u64,
    pub entries: Vec<RetentionEntry>,
    pub warnings: Vec<String>,
}

impl RetentionPlan {
    pub fn dropped(&self) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|e| !e.keep)
            .map(|e| e.instance_id)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub mode: RetentionMode,
    pub seed: u64,
    pub anchor_text: String,
    pub crop_pad: f64,
    pub embedder: String,
    pub eraser: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            alpha: 10.0,
            mode: RetentionMode::default(),
            seed: 0,
            anchor_text: DEFAULT_ANCHOR_TEXT.to_string(),
            crop_pad: 0.2,
            embedder: "toy".into(),
            eraser: "toy".into(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("hr lambda must be >= 0".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("hr alpha must be finite".into()));
        }
        if !(self.crop_pad >= 0.0) {
            return Err(Error::Config("hr crop_pad must be >= 0".into()));
        }
        Ok(())
    }
}

/// Score, sample and build the plan for one image (no pixel changes).
pub fn plan_retention(
    image: &AnnotatedImage,
    proto: &Prototype,
    cfg: &FilterConfig,
    embedder: &dyn EmbeddingModel,
) -> Result<RetentionPlan> {
    let ids = image.instance_ids();
    let mut scored = Vec::new();
    let mut warnings = Vec::new();
    for (i, id) in ids.iter().enumerate() {
        match crop_instance(image, i, cfg.crop_pad) {
            Ok(p) => {
                let v = embedder.embed(&p.pixels)?;
                scored.push((*id, cosine(&v, &proto.t_star)));
            }
            Err(e @ Error::DegenerateBox { .. }) => {
                warnings.push(format!("instance {id} not scored and kept: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
    let probs = retention_probs(&scores, cfg.alpha);
    let mut rng = rng_for(cfg.seed, &image.image_id);
    let (keep, warning) = select_retained(&probs, cfg.mode, &mut rng);
    warnings.extend(warning);
    let entries = scored
        .iter()
        .zip(&probs)
        .zip(&keep)
        .map(|(((id, s), p), k)| RetentionEntry {
            image_id: image.image_id.clone(),
            instance_id: *id,
            score: *s,
            probability: *p,
            keep: *k,
        })
        .collect();
    Ok(RetentionPlan {
        image_id: image.image_id.clone(),
        alpha: cfg.alpha,
        mode: cfg.mode,
        seed: derive_seed(cfg.seed, &image.image_id),
        entries,
        warnings,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EraseOutcome {
    pub removed: Vec<u32>,
    /// Instances the eraser failed on; they are kept.
    pub failed: Vec<(u32, String)>,
    pub pixels_changed: usize,
}

/// Remove `drop_ids` from boxes/masks and inpaint their mask pixels. Pixels
/// inside retained instances' masks are never written.
pub fn erase_instances(
    image: &AnnotatedImage,
    drop_ids: &[u32],
    eraser: &dyn Eraser,
) -> Result<(AnnotatedImage, EraseOutcome)> {
    let ids = image.instance_ids();
    let drop: BTreeSet<u32> = drop_ids.iter().copied().collect();
    if let Some(bad) = drop.iter().find(|d| !ids.contains(d)) {
        return Err(Error::Consistency(format!(
            "{}: instance {bad} is not present",
            image.image_id
        )));
    }
    let mut outcome = EraseOutcome::default();
    if drop.is_empty() {
        return Ok((image.clone(), outcome));
    }
    let masks = image.masks_or_rasterized();
    let mut protected = Mask::empty(image.height(), image.width());
    for m in masks.iter().filter(|m| !drop.contains(&m.instance_id)) {
        for (p, &v) in protected.data.iter_mut().zip(&m.raster.data) {
            *p |= v;
        }
    }
    let mut pixels = image.pixels.clone();
    let mut removed = BTreeSet::new();
    for m in masks.iter().filter(|m| drop.contains(&m.instance_id)) {
        match eraser.erase(&pixels, &m.raster) {
            Ok(filled) if filled.height == pixels.height && filled.width == pixels.width => {
                for y in 0..pixels.height {
                    for x in 0..pixels.width {
                        if m.raster.get(y, x) && !protected.get(y, x) {
                            pixels.set_pixel(y, x, filled.pixel(y, x));
                            outcome.pixels_changed += 1;
                        }
                    }
                }
                removed.insert(m.instance_id);
            }
            Ok(_) => {
                log::warn!(
                    "{}: eraser returned a resized image for instance {}",
                    image.image_id,
                    m.instance_id
                );
                outcome
                    .failed
                    .push((m.instance_id, "eraser changed image size".into()));
                protected_add(&mut protected, &m.raster);
            }
            Err(e) => {
                log::warn!(
                    "{}: eraser failed on instance {}: {e}",
                    image.image_id,
                    m.instance_id
                );
                outcome.failed.push((m.instance_id, e.to_string()));
                protected_add(&mut protected, &m.raster);
            }
        }
    }
    let keep_idx: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !removed.contains(id))
        .map(|(i, _)| i)
        .collect();
    let out = AnnotatedImage {
        image_id: image.image_id.clone(),
        pixels,
        boxes: keep_idx.iter().map(|&i| image.boxes[i]).collect(),
        masks: image
            .masks
            .as_ref()
            .map(|ms| keep_idx.iter().map(|&i| ms[i].clone()).collect()),
        domain: image.domain,
    };
    outcome.removed = removed.into_iter().collect();
    Ok((out, outcome))
}

fn protected_add(protected: &mut Mask, m: &Mask) {
    for (p, &v) in protected.data.iter_mut().zip(&m.data) {
        *p |= v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrRecord {
    pub plan: RetentionPlan,
    pub erase: EraseOutcome,
}

/// Full per-image filter: plan, then erase the instances not kept.
pub fn hallucination_filter(
    image: &AnnotatedImage,
    proto: &Prototype,
    cfg: &FilterConfig,
    embedder: &dyn EmbeddingModel,
    eraser: &dyn Eraser,
) -> Result<(AnnotatedImage, HrRecord)> {
    let plan =
        plan_retention(image, proto, cfg, embedder).map_err(|e| e.with_image(&image.image_id))?;
    let (out, erase) = erase_instances(image, &plan.dropped(), eraser)
        .map_err(|e| e.with_image(&image.image_id))?;
    Ok((out, HrRecord { plan, erase }))
}
