//! Small deterministic stand-ins for the pretrained models, plus a generator
//! for tiny aerial-style scenes with person instances.

use rand::Rng;

use crate::backbone::toy::fnv1a;
use crate::backbone::PromptCondition;
use crate::data::{AnnotatedImage, BBox, DatasetManifest, DomainTag, InstanceMask};
use crate::error::{Error, Result};
use crate::filter::{EmbeddingModel, Eraser};
use crate::metrics::FeatureExtractor;
use crate::raster::{area_resize, Image, Mask};
use crate::refine::Captioner;
use crate::seed::rng_for;

const EMBED_GRID: usize = 4;
/// Pooled RGB cells plus one constant component.
pub const TOY_EMBED_DIM: usize = EMBED_GRID * EMBED_GRID * 3 + 1;

/// Embeds a patch as its 4×4 area-pooled colors, centered at mid-gray, with
/// a constant component so no patch maps to the zero vector.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyEmbedder;

impl EmbeddingModel for ToyEmbedder {
    fn name(&self) -> &str {
        "toy"
    }

    fn dim(&self) -> usize {
        TOY_EMBED_DIM
    }

    fn embed(&self, patch: &Image) -> Result<Vec<f64>> {
        if patch.height == 0 || patch.width == 0 {
            return Err(Error::Dimension("cannot embed an empty patch".into()));
        }
        let pooled = area_resize(patch, EMBED_GRID, EMBED_GRID);
        let mut v: Vec<f64> = pooled.data.iter().map(|p| p - 0.5).collect();
        v.push(0.25);
        Ok(v)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let mut rng = rng_for(fnv1a(text.as_bytes()), "toy-text");
        Ok((0..TOY_EMBED_DIM)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect())
    }
}

/// Tags from a fixed vocabulary plus a brightness word.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyCaptioner;

impl Captioner for ToyCaptioner {
    fn name(&self) -> &str {
        "toy"
    }

    fn extract(&self, patch: &Image) -> Result<PromptCondition> {
        let m = patch.channel_means();
        let lum = (m[0] + m[1] + m[2]) / 3.0;
        let tone = if lum >= 0.5 { "bright" } else { "dark" };
        Ok(PromptCondition::from_tags(["person", "aerial view", tone]))
    }
}

pub const ERASER_RING: usize = 4;

/// Fills the mask with the mean color of a ring around it.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyEraser;

impl Eraser for ToyEraser {
    fn name(&self) -> &str {
        "toy"
    }

    fn erase(&self, image: &Image, mask: &Mask) -> Result<Image> {
        if (mask.height, mask.width) != (image.height, image.width) {
            return Err(Error::Eraser("mask and image differ in size".into()));
        }
        let grown = mask.dilate(ERASER_RING);
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for y in 0..image.height {
            for x in 0..image.width {
                if grown.get(y, x) && !mask.get(y, x) {
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        sum[c] += p[c];
                    }
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::Eraser("no background ring around the mask".into()));
        }
        let fill = sum.map(|s| s / n as f64);
        let mut out = image.clone();
        for y in 0..image.height {
            for x in 0..image.width {
                if mask.get(y, x) {
                    out.set_pixel(y, x, fill);
                }
            }
        }
        Ok(out)
    }
}

/// Flattened 8×8 RGB thumbnail (192 features).
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyExtractor;

pub const TOY_FEATURE_SIDE: usize = 8;

impl FeatureExtractor for ToyExtractor {
    fn name(&self) -> &str {
        "toy"
    }

    fn input_size(&self) -> (usize, usize) {
        (TOY_FEATURE_SIDE, TOY_FEATURE_SIDE)
    }

    fn dim(&self) -> usize {
        TOY_FEATURE_SIDE * TOY_FEATURE_SIDE * 3
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(area_resize(image, TOY_FEATURE_SIDE, TOY_FEATURE_SIDE).data)
    }
}

pub const TOY_SCENE_SIDE: usize = 64;

/// One scene: textured ground with 1–4 non-overlapping people, each a
/// rounded body with a lighter head. Masks are the exact person pixels.
pub fn toy_scene(image_id: &str, domain: DomainTag, seed: u64) -> AnnotatedImage {
    let mut rng = rng_for(seed, image_id);
    let n = TOY_SCENE_SIDE;
    let (base, tint): ([f64; 3], [f64; 3]) = match domain {
        // saturated render vs. hazy, warmer photograph
        DomainTag::Synthetic => ([0.25, 0.55, 0.25], [0.10, 0.05, 0.00]),
        DomainTag::Real => ([0.50, 0.50, 0.42], [0.05, 0.04, 0.06]),
    };
    let mut pixels = Image::filled(n, n, [0.0; 3]);
    let (gx, gy) = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    for y in 0..n {
        for x in 0..n {
            let ramp = gx * x as f64 / n as f64 + gy * y as f64 / n as f64;
            let mut p = [0.0; 3];
            for c in 0..3 {
                let noise = rng.random_range(-1.0..1.0) * tint[c] + rng.random_range(-0.03..0.03);
                p[c] = (base[c] + ramp + noise).clamp(0.0, 1.0);
            }
            pixels.set_pixel(y, x, p);
        }
    }
    let count = rng.random_range(1..=4);
    let mut occupied = Mask::empty(n, n);
    let mut boxes = Vec::new();
    let mut masks = Vec::new();
    for _ in 0..count * 8 {
        if boxes.len() == count {
            break;
        }
        let (w, h) = (rng.random_range(5..=9), rng.random_range(8..=14));
        let (x0, y0) = (
            rng.random_range(2..n - w - 2),
            rng.random_range(2..n - h - 2),
        );
        let mut raster = Mask::empty(n, n);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let corner = (y == y0 || y == y0 + h - 1) && (x == x0 || x == x0 + w - 1);
                if !corner {
                    raster.set(y, x, true);
                }
            }
        }
        // keep a background gap around every person
        if raster.dilate(2).intersects(&occupied) {
            continue;
        }
        let body = [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ];
        let head_rows = h / 3;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                if raster.get(y, x) {
                    let p = if y < y0 + head_rows {
                        [0.85, 0.7, 0.6]
                    } else {
                        body
                    };
                    pixels.set_pixel(y, x, p);
                }
            }
        }
        for (o, &v) in occupied.data.iter_mut().zip(&raster.data) {
            *o |= v;
        }
        let nf = n as f64;
        boxes.push(BBox::new(
            0,
            (x0 as f64 + w as f64 / 2.0) / nf,
            (y0 as f64 + h as f64 / 2.0) / nf,
            w as f64 / nf,
            h as f64 / nf,
        ));
        masks.push(InstanceMask {
            instance_id: masks.len() as u32,
            raster,
        });
    }
    let mut img = AnnotatedImage::new(image_id, pixels.quantized(), boxes, domain);
    img.masks = Some(masks);
    img
}

/// `n_syn` synthetic and `n_real` real scenes (ids `syn_000`, `real_000`, …).
pub fn toy_dataset(n_syn: usize, n_real: usize, seed: u64) -> (DatasetManifest, DatasetManifest) {
    let mut syn = DatasetManifest::new("toy-synthetic", DomainTag::Synthetic);
    syn.records = (0..n_syn)
        .map(|i| toy_scene(&format!("syn_{i:03}"), DomainTag::Synthetic, seed))
        .collect();
    let mut real = DatasetManifest::new("toy-real", DomainTag::Real);
    real.records = (0..n_real)
        .map(|i| toy_scene(&format!("real_{i:03}"), DomainTag::Real, seed))
        .collect();
    (syn, real)
}
