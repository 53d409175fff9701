//! Global style transfer: DDIM-invert content and style latents, then at each
//! reverse step align the content latent to the style latent with
//! cross-attention, re-normalize it with image-wise AdaIN and denoise.
//! Annotations pass through untouched.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{
    ddim_invert, ddim_step, BackboneAdapter, Latent, PromptCondition, Trajectory,
};
use crate::data::{AnnotatedImage, DomainTag};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, hash_f64s, rng_for};

/// Query/key/value projections of one attention layer, `d × d` with
/// `d = C′`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProjections {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

impl AttentionProjections {
    pub fn identity(d: usize) -> Self {
        Self {
            w_q: DMatrix::identity(d, d),
            w_k: DMatrix::identity(d, d),
            w_v: DMatrix::identity(d, d),
        }
    }

    pub fn new(w_q: DMatrix<f64>, w_k: DMatrix<f64>, w_v: DMatrix<f64>) -> Result<Self> {
        let d = w_q.nrows();
        for (name, m) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dimension(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { w_q, w_k, w_v })
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.dim() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StylePick {
    Random,
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTransferConfig {
    pub inversion_t: usize,
    pub num_steps: usize,
    pub adain_eps: f64,
    pub style_pick: StylePick,
    pub seed: u64,
}

impl Default for StyleTransferConfig {
    fn default() -> Self {
        Self {
            inversion_t: 600,
            num_steps: 50,
            adain_eps: 1e-5,
            style_pick: StylePick::Random,
            seed: 0,
        }
    }
}

impl StyleTransferConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.inversion_t == 0 || self.inversion_t > t_max {
            return Err(Error::Config(format!(
                "gst inversion_t must be in (0, {t_max}], got {}",
                self.inversion_t
            )));
        }
        if !(self.adain_eps > 0.0) {
            return Err(Error::Config(format!(
                "gst adain_eps must be > 0, got {}",
                self.adain_eps
            )));
        }
        Ok(())
    }
}

fn tokens(z: &Latent) -> Vec<Vec<f64>> {
    let n = z.spatial();
    (0..n)
        .map(|p| (0..z.channels).map(|c| z.data[c * n + p]).collect())
        .collect()
}

fn project(w: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows())
        .map(|r| (0..w.ncols()).map(|c| w[(r, c)] * x[c]).sum())
        .collect()
}

/// Cross-attention output together with the attention matrix
/// (`content tokens × style tokens`, row-major).
pub fn cross_attention_with_weights(
    content: &Latent,
    style: &Latent,
    proj: &AttentionProjections,
) -> Result<(Latent, Vec<f64>)> {
    let d = content.channels;
    if style.channels != d || proj.dim() != d {
        return Err(Error::Dimension(format!(
            "channel mismatch: content {d}, style {}, projections {}",
            style.channels,
            proj.dim()
        )));
    }
    let scale = proj.scale();
    let q: Vec<Vec<f64>> = tokens(content)
        .iter()
        .map(|x| project(&proj.w_q, x))
        .collect();
    let style_tokens = tokens(style);
    let k: Vec<Vec<f64>> = style_tokens.iter().map(|x| project(&proj.w_k, x)).collect();
    let v: Vec<Vec<f64>> = style_tokens.iter().map(|x| project(&proj.w_v, x)).collect();

    let (n_s, n_t) = (q.len(), k.len());
    let mut weights = vec![0.0; n_s * n_t];
    let mut out = Latent::zeros(d, content.height, content.width);
    out.timestep = content.timestep;
    for (p, qp) in q.iter().enumerate() {
        let row = &mut weights[p * n_t..(p + 1) * n_t];
        for (j, kj) in k.iter().enumerate() {
            row[j] = qp.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for w in row.iter_mut() {
            *w = (*w - max).exp();
            sum += *w;
        }
        for w in row.iter_mut() {
            *w /= sum;
        }
        for c in 0..d {
            let val: f64 = row.iter().zip(&v).map(|(a, vj)| a * vj[c]).sum();
            out.data[c * n_s + p] = val;
        }
    }
    Ok((out, weights))
}

/// `softmax(Q Kᵀ/√d)·V` with spatial positions as tokens: queries from the
/// content latent, keys and values from the style latent. The result has the
/// content's spatial grid.
pub fn cross_attention_align(
    content: &Latent,
    style: &Latent,
    proj: &AttentionProjections,
) -> Result<Latent> {
    cross_attention_with_weights(content, style, proj).map(|(z, _)| z)
}

/// Per-channel mean and population standard deviation over spatial positions.
pub fn channel_stats(z: &Latent) -> Vec<(f64, f64)> {
    (0..z.channels)
        .map(|c| {
            let xs = z.channel(c);
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Image-wise AdaIN: `σ_s·(x − μ_x)/(σ_x + eps) + μ_s` per channel.
pub fn adain(content: &Latent, style: &Latent, eps: f64) -> Result<Latent> {
    if content.channels != style.channels {
        return Err(Error::Dimension(format!(
            "adain channel mismatch: {} vs {}",
            content.channels, style.channels
        )));
    }
    let cs = channel_stats(content);
    let ss = channel_stats(style);
    let n = content.spatial();
    let mut out = content.clone();
    for c in 0..content.channels {
        let (mu_c, sd_c) = cs[c];
        let (mu_s, sd_s) = ss[c];
        let denom = sd_c + eps;
        for v in &mut out.data[c * n..(c + 1) * n] {
            let centered = *v - mu_c;
            *v = if denom > 0.0 {
                sd_s * centered / denom + mu_s
            } else {
                mu_s
            };
        }
    }
    Ok(out)
}

/// One fused reverse step: align to the style latent at `t`, AdaIN, then an
/// unconditional DDIM step to `t_prev`.
pub fn gst_reverse_step(
    content_t: &Latent,
    style_trajectory: &Trajectory,
    t: usize,
    t_prev: usize,
    proj: &AttentionProjections,
    eps: f64,
    backbone: &dyn BackboneAdapter,
) -> Result<Latent> {
    let style_t = style_trajectory.at(t).ok_or(Error::StepAlignment(t))?;
    let aligned = cross_attention_align(content_t, style_t, proj)?;
    let fused = adain(&aligned, style_t, eps)?.with_timestep(t);
    ddim_step(
        backbone,
        &fused,
        t,
        t_prev,
        &PromptCondition::unconditional(),
    )
}

/// Style trajectories keyed by style-image content hash and schedule.
#[derive(Debug, Default)]
pub struct StyleLatentCache {
    entries: RwLock<HashMap<(u64, usize, usize), Arc<Trajectory>>>,
}

impl StyleLatentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(
        &self,
        style: &AnnotatedImage,
        cfg: &StyleTransferConfig,
        backbone: &dyn BackboneAdapter,
    ) -> Result<Arc<Trajectory>> {
        let key = (
            hash_f64s(&style.pixels.data),
            cfg.inversion_t,
            cfg.num_steps,
        );
        if let Some(t) = self.entries.read().expect("cache lock").get(&key) {
            return Ok(t.clone());
        }
        let z0 = backbone
            .encode(&style.pixels)
            .map_err(|e| e.with_image(&style.image_id))?;
        let traj = ddim_invert(
            backbone,
            &z0,
            cfg.inversion_t,
            cfg.num_steps,
            &PromptCondition::unconditional(),
        )
        .map_err(|e| e.with_image(&style.image_id))?;
        let mut w = self.entries.write().expect("cache lock");
        Ok(w.entry(key).or_insert_with(|| Arc::new(traj)).clone())
    }
}

/// Per-image record of a style transfer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GstRecord {
    pub image_id: String,
    pub style_id: String,
    pub seed: u64,
    pub inversion_t: usize,
    pub num_steps: usize,
}

/// Choose the style reference for one content image.
pub fn pick_style<'a>(
    content_id: &str,
    styles: &'a [AnnotatedImage],
    cfg: &StyleTransferConfig,
) -> Result<&'a AnnotatedImage> {
    if styles.is_empty() {
        return Err(Error::Config("style set is empty".into()));
    }
    match &cfg.style_pick {
        StylePick::Fixed(id) => styles
            .iter()
            .find(|s| &s.image_id == id)
            .ok_or_else(|| Error::Config(format!("fixed style image '{id}' not found"))),
        StylePick::Random => {
            let mut rng = rng_for(cfg.seed, content_id);
            Ok(&styles[rng.random_range(0..styles.len())])
        }
    }
}

/// Translate `content` toward the appearance of `style`. Boxes and masks of
/// the output are the content's.
pub fn gst_transfer(
    content: &AnnotatedImage,
    style: &AnnotatedImage,
    cfg: &StyleTransferConfig,
    backbone: &dyn BackboneAdapter,
    cache: Option<&StyleLatentCache>,
) -> Result<(AnnotatedImage, GstRecord)> {
    let run = || -> Result<AnnotatedImage> {
        if content.domain != DomainTag::Synthetic || style.domain != DomainTag::Real {
            return Err(Error::Consistency(format!(
                "style transfer maps synthetic content to a real style, got {} -> {}",
                content.domain, style.domain
            )));
        }
        let proj = backbone.attention_projections();
        let uncond = PromptCondition::unconditional();
        let z0 = backbone.encode(&content.pixels)?;
        let traj = ddim_invert(backbone, &z0, cfg.inversion_t, cfg.num_steps, &uncond)?;
        let style_traj = match cache {
            Some(c) => c.get_or_compute(style, cfg, backbone)?,
            None => {
                let zs = backbone.encode(&style.pixels)?;
                Arc::new(ddim_invert(
                    backbone,
                    &zs,
                    cfg.inversion_t,
                    cfg.num_steps,
                    &uncond,
                )?)
            }
        };
        if style_traj.timesteps != traj.timesteps {
            return Err(Error::StepAlignment(*traj.timesteps.last().unwrap_or(&0)));
        }
        let mut z = traj.last().clone();
        for w in traj.timesteps.windows(2).rev() {
            z = gst_reverse_step(&z, &style_traj, w[1], w[0], &proj, cfg.adain_eps, backbone)?;
        }
        let pixels = backbone.decode(&z)?;
        if (pixels.height, pixels.width) != (content.height(), content.width()) {
            return Err(Error::Dimension("decoder changed the image size".into()));
        }
        Ok(AnnotatedImage {
            image_id: content.image_id.clone(),
            pixels,
            boxes: content.boxes.clone(),
            masks: content.masks.clone(),
            domain: content.domain,
        })
    };
    let out = run().map_err(|e| e.with_image(&content.image_id))?;
    Ok((
        out,
        GstRecord {
            image_id: content.image_id.clone(),
            style_id: style.image_id.clone(),
            seed: derive_seed(cfg.seed, &content.image_id),
            inversion_t: cfg.inversion_t,
            num_steps: cfg.num_steps,
        },
    ))
}
