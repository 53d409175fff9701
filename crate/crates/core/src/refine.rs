//! Local refinement: per instance, crop, up-sample, take one reverse
//! diffusion step conditioned on a tag prompt, keep the refined latent only
//! inside the instance mask, decode and paste back at the original scale.

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneAdapter, Latent, PromptCondition};
use crate::data::{crop_instance, AnnotatedImage};
use crate::error::{Error, Result};
use crate::raster::{area_resize, bicubic_resize, Image, Mask};

pub use crate::raster::bicubic_upsample;

/// Patches with a side below this are worked on at [`SMALL_PATCH_WORKING_SIDE`].
pub const MIN_PATCH_SIDE: usize = 16;
pub const SMALL_PATCH_WORKING_SIDE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub scale: usize,
    pub refine_t: usize,
    pub context_pad: f64,
    pub captioner: String,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            scale: 2,
            refine_t: 200,
            context_pad: 0.2,
            captioner: "toy".into(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self, t_max: usize) -> Result<()> {
        if self.scale < 1 {
            return Err(Error::Config("lr scale must be >= 1".into()));
        }
        if self.refine_t == 0 || self.refine_t > t_max {
            return Err(Error::Config(format!(
                "lr refine_t must be in (0, {t_max}], got {}",
                self.refine_t
            )));
        }
        if !(self.context_pad >= 0.0) {
            return Err(Error::Config("lr context_pad must be >= 0".into()));
        }
        Ok(())
    }
}

/// Extracts a tag-style prompt from an image patch.
pub trait Captioner: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, patch: &Image) -> Result<PromptCondition>;
}

/// `z_H = (z_L − β_T·ε(z_L; T, c))/α_T`.
pub fn one_step_refine(
    z_low: &Latent,
    refine_t: usize,
    prompt: &PromptCondition,
    backbone: &dyn BackboneAdapter,
) -> Result<Latent> {
    let sched = backbone.schedule();
    let (alpha, beta) = (sched.alpha(refine_t)?, sched.beta(refine_t)?);
    if alpha < 1e-6 {
        return Err(Error::IllConditioned { t: refine_t, alpha });
    }
    let eps = backbone.predict_noise(z_low, refine_t, prompt)?;
    if !eps.same_shape(z_low) {
        return Err(Error::Dimension(
            "predictor changed the latent shape".into(),
        ));
    }
    let data: Vec<f64> = z_low
        .data
        .iter()
        .zip(&eps.data)
        .map(|(z, e)| (z - beta * e) / alpha)
        .collect();
    let out = Latent::new(z_low.channels, z_low.height, z_low.width, data, 0)?;
    if !out.is_finite() {
        return Err(Error::NonFinite { t: 0 });
    }
    Ok(out)
}

/// Refined values on latent cells touched by the mask (`f`×`f` max-pool),
/// original values everywhere else.
pub fn masked_latent_merge(
    refined: &Latent,
    original: &Latent,
    mask: &Mask,
    f: usize,
) -> Result<Latent> {
    if !refined.same_shape(original) {
        return Err(Error::Dimension(
            "refined and original latents differ in shape".into(),
        ));
    }
    let cells = mask.max_pool(f)?;
    if cells.height != original.height || cells.width != original.width {
        return Err(Error::Dimension(format!(
            "mask pools to {}x{}, latent is {}x{}",
            cells.height, cells.width, original.height, original.width
        )));
    }
    let n = original.spatial();
    let mut out = original.clone();
    for c in 0..original.channels {
        for (p, &inside) in cells.data.iter().enumerate() {
            if inside {
                out.data[c * n + p] = refined.data[c * n + p];
            }
        }
    }
    out.timestep = 0;
    Ok(out)
}

fn round_up(v: usize, f: usize) -> usize {
    v.div_ceil(f) * f
}

/// Working resolution for a patch of `h × w`.
pub fn working_dims(h: usize, w: usize, scale: usize, f: usize) -> (usize, usize) {
    if h.min(w) < MIN_PATCH_SIDE {
        let side = round_up(SMALL_PATCH_WORKING_SIDE, f);
        (side, side)
    } else {
        (round_up(h * scale, f), round_up(w * scale, f))
    }
}

/// Intermediate products of refining one patch.
#[derive(Debug, Clone)]
pub struct RefinedPatch {
    pub working: Image,
    pub latent_low: Latent,
    pub latent_merged: Latent,
    /// Decoded and restored to the input patch size.
    pub restored: Image,
}

/// Refine one patch with `mask` at patch resolution.
pub fn refine_patch(
    patch: &Image,
    mask: &Mask,
    refine_t: usize,
    scale: usize,
    prompt: &PromptCondition,
    backbone: &dyn BackboneAdapter,
) -> Result<RefinedPatch> {
    let f = backbone.downsample_factor();
    let (wh, ww) = working_dims(patch.height, patch.width, scale, f);
    let working = if (wh, ww) == (patch.height * scale, patch.width * scale) {
        bicubic_upsample(patch, scale)
    } else {
        bicubic_resize(patch, wh, ww)
    };
    let latent_low = backbone.encode(&working)?;
    let refined = one_step_refine(&latent_low, refine_t, prompt, backbone)?;
    let mask_up = mask.resize_nearest(wh, ww);
    let latent_merged = masked_latent_merge(&refined, &latent_low, &mask_up, f)?;
    let decoded = backbone.decode(&latent_merged)?;
    let restored = area_resize(&decoded, patch.height, patch.width);
    Ok(RefinedPatch {
        working,
        latent_low,
        latent_merged,
        restored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrInstance {
    pub instance_id: u32,
    pub prompt: Vec<String>,
    pub mask_pixels: usize,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRecord {
    pub image_id: String,
    pub refine_t: usize,
    pub scale: usize,
    pub instances: Vec<LrInstance>,
    pub notes: Vec<String>,
}

/// Refine every instance of `image` in index order. Pixels outside the
/// instance masks and all annotations are left untouched.
pub fn local_refine(
    image: &AnnotatedImage,
    cfg: &RefineConfig,
    backbone: &dyn BackboneAdapter,
    captioner: &dyn Captioner,
) -> Result<(AnnotatedImage, LrRecord)> {
    let masks = image.masks_or_rasterized();
    let mut out = image.clone();
    let mut record = LrRecord {
        image_id: image.image_id.clone(),
        refine_t: cfg.refine_t,
        scale: cfg.scale,
        instances: Vec::with_capacity(masks.len()),
        notes: Vec::new(),
    };
    for (i, mask) in masks.iter().enumerate() {
        let mut inst = LrInstance {
            instance_id: mask.instance_id,
            prompt: Vec::new(),
            mask_pixels: 0,
            skipped: None,
        };
        // crop from the current output so overlapping instances compose in order
        let patch = match crop_instance(&out, i, cfg.context_pad) {
            Ok(p) => p,
            Err(e @ Error::DegenerateBox { .. }) => {
                log::warn!(
                    "{}: instance {} skipped: {e}",
                    image.image_id,
                    mask.instance_id
                );
                inst.skipped = Some(e.to_string());
                record.instances.push(inst);
                continue;
            }
            Err(e) => return Err(e.with_image(&image.image_id)),
        };
        let patch_mask = mask.raster.crop(patch.rect);
        let prompt = match captioner.extract(&patch.pixels) {
            Ok(p) => p,
            Err(e) => {
                record.notes.push(format!(
                    "captioner '{}' failed on instance {}: {e}; using empty prompt",
                    captioner.name(),
                    mask.instance_id
                ));
                PromptCondition::unconditional()
            }
        };
        let refined = refine_patch(
            &patch.pixels,
            &patch_mask,
            cfg.refine_t,
            cfg.scale,
            &prompt,
            backbone,
        )
        .map_err(|e| e.with_image(&image.image_id))?;
        out.pixels
            .paste_masked(&refined.restored, &patch_mask, patch.rect.y0, patch.rect.x0);
        inst.prompt = prompt.tags;
        inst.mask_pixels = patch_mask.count();
        record.instances.push(inst);
    }
    Ok((out, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::toy::{ToyBackbone, ToyPredictor};
    use crate::backbone::NoiseSchedule;

    fn ramp_latent(c: usize, h: usize, w: usize) -> Latent {
        let data = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        Latent::new(c, h, w, data, 0).unwrap()
    }

    #[test]
    fn null_predictor_divides_by_alpha() {
        let bb = ToyBackbone::new(ToyPredictor::Null);
        let z = ramp_latent(4, 3, 3);
        let out = one_step_refine(&z, 300, &PromptCondition::unconditional(), &bb).unwrap();
        let a = bb.schedule().alpha(300).unwrap();
        for (o, v) in out.data.iter().zip(&z.data) {
            assert_eq!(*o, v / a);
        }
    }

    #[test]
    fn noiseless_timestep_is_identity() {
        let bb = ToyBackbone::new(ToyPredictor::Linear);
        let z = ramp_latent(4, 2, 2);
        let out = one_step_refine(&z, 0, &PromptCondition::from_tags(["x"]), &bb).unwrap();
        assert_eq!(out.data, z.data);
    }

    #[test]
    fn ill_conditioned_timestep() {
        let ab = vec![1.0, 0.5, 1e-13];
        let bb = ToyBackbone::new(ToyPredictor::Null)
            .with_schedule(NoiseSchedule::from_alpha_bar(ab).unwrap());
        let z = ramp_latent(4, 1, 1);
        assert!(matches!(
            one_step_refine(&z, 2, &PromptCondition::unconditional(), &bb),
            Err(Error::IllConditioned { t: 2, .. })
        ));
    }

    #[test]
    fn merge_extremes() {
        let a = ramp_latent(4, 2, 2);
        let b = Latent::zeros(4, 2, 2);
        assert_eq!(
            masked_latent_merge(&a, &b, &Mask::full(8, 8), 4)
                .unwrap()
                .data,
            a.data
        );
        assert_eq!(
            masked_latent_merge(&a, &b, &Mask::empty(8, 8), 4)
                .unwrap()
                .data,
            b.data
        );
        assert!(masked_latent_merge(&a, &b, &Mask::full(12, 8), 4).is_err());
        assert!(masked_latent_merge(&a, &Latent::zeros(4, 2, 3), &Mask::full(8, 8), 4).is_err());
    }

    #[test]
    fn merge_half_plane_enumerated() {
        // 32x32 pixel mask, f = 4 -> 8x8 latent; positive columns [0, 18)
        let mut m = Mask::empty(32, 32);
        for y in 0..32 {
            for x in 0..18 {
                m.set(y, x, true);
            }
        }
        let refined = Latent::new(1, 8, 8, vec![1.0; 64], 0).unwrap();
        let original = Latent::new(1, 8, 8, vec![-1.0; 64], 0).unwrap();
        let out = masked_latent_merge(&refined, &original, &m, 4).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                // cell x covers pixel columns [4x, 4x+4); any overlap with [0,18) refines
                let expect = if x <= 4 { 1.0 } else { -1.0 };
                assert_eq!(out.get(0, y, x), expect, "cell ({y},{x})");
            }
        }
    }

    #[test]
    fn working_dims_rules() {
        assert_eq!(working_dims(12, 12, 2, 4), (64, 64));
        assert_eq!(working_dims(20, 18, 2, 4), (40, 36));
        assert_eq!(working_dims(17, 21, 2, 4), (36, 44));
    }

    #[test]
    fn config_validation() {
        assert!(RefineConfig::default().validate(1000).is_ok());
        let cfg = RefineConfig {
            refine_t: 0,
            ..Default::default()
        };
        assert!(cfg.validate(1000).is_err());
    }
}
