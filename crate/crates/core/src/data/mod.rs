//! Annotated images, dataset manifests and the two interchange formats
//! (YOLO text labels, COCO JSON).

mod coco;
mod store;
mod yolo;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, Mask, Rect};

pub use store::{clear_dataset_dir, decode_rle_column_major, decode_rle_row_major};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 32;

/// Round half up, the box-to-pixel convention used everywhere.
#[inline]
pub fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Synthetic,
    Real,
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DomainTag::Synthetic => "synthetic",
            DomainTag::Real => "real",
        })
    }
}

impl FromStr for DomainTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DomainTag::Synthetic),
            "real" => Ok(DomainTag::Real),
            other => Err(Error::Config(format!("unknown domain tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationFormat {
    #[serde(rename = "yolo-txt")]
    YoloTxt,
    #[serde(rename = "coco-json")]
    CocoJson,
}

impl FromStr for AnnotationFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yolo" | "yolo-txt" => Ok(AnnotationFormat::YoloTxt),
            "coco" | "coco-json" => Ok(AnnotationFormat::CocoJson),
            other => Err(Error::Config(format!(
                "unknown annotation format '{other}'"
            ))),
        }
    }
}

impl fmt::Display for AnnotationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationFormat::YoloTxt => "yolo-txt",
            AnnotationFormat::CocoJson => "coco-json",
        })
    }
}

/// Normalized center-format box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            class_id,
            cx,
            cy,
            w,
            h,
        }
    }

    /// From absolute `[x, y, w, h]` (COCO convention).
    pub fn from_xywh_px(class_id: u32, xywh: [f64; 4], img_w: usize, img_h: usize) -> Self {
        let (iw, ih) = (img_w as f64, img_h as f64);
        Self {
            class_id,
            cx: (xywh[0] + xywh[2] / 2.0) / iw,
            cy: (xywh[1] + xywh[3] / 2.0) / ih,
            w: xywh[2] / iw,
            h: xywh[3] / ih,
        }
    }

    pub fn to_xywh_px(&self, img_w: usize, img_h: usize) -> [f64; 4] {
        let (iw, ih) = (img_w as f64, img_h as f64);
        [
            (self.cx - self.w / 2.0) * iw,
            (self.cy - self.h / 2.0) * ih,
            self.w * iw,
            self.h * ih,
        ]
    }

    /// `(x0, y0, x1, y1)` in normalized coordinates.
    pub fn xyxy(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.xyxy();
        let (bx0, by0, bx1, by1) = other.xyxy();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.w * self.h + other.w * other.h - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let (x0, y0, x1, y1) = self.xyxy();
        [self.cx, self.cy, self.w, self.h]
            .iter()
            .all(|v| v.is_finite())
            && (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
            && x0 >= -tol
            && y0 >= -tol
            && x1 <= 1.0 + tol
            && y1 <= 1.0 + tol
    }

    /// Clamp the box into the unit square (allowing `tol` overflow).
    ///
    /// Returns `None` when nothing of the box is left, otherwise the box and
    /// whether it was modified. Boxes already inside are returned untouched.
    pub fn clamped(&self, tol: f64) -> Option<(BBox, bool)> {
        if self.is_valid(tol) {
            return Some((*self, false));
        }
        let (x0, y0, x1, y1) = self.xyxy();
        let (x0, x1) = (x0.max(0.0), x1.min(1.0));
        let (y0, y1) = (y0.max(0.0), y1.min(1.0));
        let (w, h) = (x1 - x0, y1 - y0);
        if !(w > 0.0 && h > 0.0) || !w.is_finite() || !h.is_finite() {
            return None;
        }
        let b = BBox {
            class_id: self.class_id,
            cx: ((x0 + x1) / 2.0).clamp(0.0, 1.0),
            cy: ((y0 + y1) / 2.0).clamp(0.0, 1.0),
            w: w.min(1.0),
            h: h.min(1.0),
        };
        Some((b, true))
    }

    /// Pixel extents `(w_px, h_px)` with round-half-up.
    pub fn size_px(&self, img_w: usize, img_h: usize) -> (usize, usize) {
        (
            round_half_up(self.w * img_w as f64).max(0) as usize,
            round_half_up(self.h * img_h as f64).max(0) as usize,
        )
    }

    /// Filled pixel rectangle of the box, clipped to the image.
    pub fn pixel_rect(&self, img_w: usize, img_h: usize) -> Rect {
        let (w_px, h_px) = self.size_px(img_w, img_h);
        let x0 = round_half_up(self.cx * img_w as f64 - w_px as f64 / 2.0);
        let y0 = round_half_up(self.cy * img_h as f64 - h_px as f64 / 2.0);
        clip_rect(x0, y0, w_px as i64, h_px as i64, img_w, img_h)
    }
}

fn clip_rect(x0: i64, y0: i64, w: i64, h: i64, img_w: usize, img_h: usize) -> Rect {
    let cx0 = x0.clamp(0, img_w as i64) as usize;
    let cy0 = y0.clamp(0, img_h as i64) as usize;
    let cx1 = (x0 + w).clamp(0, img_w as i64) as usize;
    let cy1 = (y0 + h).clamp(0, img_h as i64) as usize;
    Rect {
        x0: cx0,
        y0: cy0,
        x1: cx1.max(cx0),
        y1: cy1.max(cy0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMask {
    pub instance_id: u32,
    pub raster: Mask,
}

/// One image with its annotations; the unit every stage consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub pixels: Image,
    pub boxes: Vec<BBox>,
    pub masks: Option<Vec<InstanceMask>>,
    pub domain: DomainTag,
}

impl AnnotatedImage {
    pub fn new(
        image_id: impl Into<String>,
        pixels: Image,
        boxes: Vec<BBox>,
        domain: DomainTag,
    ) -> Self {
        Self {
            image_id: image_id.into(),
            pixels,
            boxes,
            masks: None,
            domain,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.height
    }

    pub fn width(&self) -> usize {
        self.pixels.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidRecord {
            image_id: self.image_id.clone(),
            message,
        };
        if self.height() < MIN_IMAGE_SIDE || self.width() < MIN_IMAGE_SIDE {
            return Err(bad(format!(
                "image is {}x{}, minimum side is {MIN_IMAGE_SIDE}",
                self.height(),
                self.width()
            )));
        }
        if self.pixels.data.len() != self.height() * self.width() * 3 {
            return Err(bad("pixel buffer size mismatch".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.is_valid(1e-9) {
                return Err(bad(format!("box {i} violates bounds: {b:?}")));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.boxes.len() {
                return Err(bad(format!(
                    "{} masks for {} boxes",
                    masks.len(),
                    self.boxes.len()
                )));
            }
            let mut seen = HashSet::new();
            for m in masks {
                if m.raster.height != self.height() || m.raster.width != self.width() {
                    return Err(bad(format!(
                        "mask {} is {}x{}, image is {}x{}",
                        m.instance_id,
                        m.raster.height,
                        m.raster.width,
                        self.height(),
                        self.width()
                    )));
                }
                if m.raster.count() == 0 {
                    return Err(bad(format!(
                        "mask {} has no positive pixels",
                        m.instance_id
                    )));
                }
                if !seen.insert(m.instance_id) {
                    return Err(bad(format!("duplicate instance id {}", m.instance_id)));
                }
            }
        }
        Ok(())
    }

    /// Instance ids aligned with `boxes`: mask ids when masks exist, box
    /// indices otherwise.
    pub fn instance_ids(&self) -> Vec<u32> {
        match &self.masks {
            Some(m) => m.iter().map(|m| m.instance_id).collect(),
            None => (0..self.boxes.len() as u32).collect(),
        }
    }

    /// True masks when present, else rectangles rasterized from the boxes.
    pub fn masks_or_rasterized(&self) -> Vec<InstanceMask> {
        match &self.masks {
            Some(m) => m.clone(),
            None => (0..self.boxes.len())
                .map(|i| rasterize_box_mask(self, i).expect("index in range"))
                .collect(),
        }
    }

    /// Annotations only (boxes, masks), for preservation checks.
    pub fn same_annotations(&self, other: &AnnotatedImage) -> bool {
        self.boxes == other.boxes && self.masks == other.masks
    }
}

/// A square crop around one instance, with the offsets needed to put it back.
#[derive(Debug, Clone, PartialEq)]
pub struct InstancePatch {
    pub index: usize,
    pub rect: Rect,
    /// Side before clipping to the image.
    pub nominal_side: usize,
    pub pixels: Image,
}

impl InstancePatch {
    pub fn paste_back(&self, target: &mut Image) {
        target.paste(&self.pixels, self.rect.y0, self.rect.x0);
    }
}

/// Square patch centered on box `index`, with side
/// `max(w_px, h_px)·(1 + context_pad)` clipped to the image.
pub fn crop_instance(
    image: &AnnotatedImage,
    index: usize,
    context_pad: f64,
) -> Result<InstancePatch> {
    let b = image.boxes.get(index).ok_or(Error::IndexOutOfBounds {
        index,
        len: image.boxes.len(),
    })?;
    if !(context_pad >= 0.0) {
        return Err(Error::Config(format!(
            "context_pad must be >= 0, got {context_pad}"
        )));
    }
    let (w, h) = (image.width(), image.height());
    let (w_px, h_px) = b.size_px(w, h);
    if w_px == 0 || h_px == 0 {
        return Err(Error::DegenerateBox {
            index,
            width_px: w_px,
            height_px: h_px,
        });
    }
    let side = round_half_up(w_px.max(h_px) as f64 * (1.0 + context_pad)).max(1);
    let x0 = round_half_up(b.cx * w as f64 - side as f64 / 2.0);
    let y0 = round_half_up(b.cy * h as f64 - side as f64 / 2.0);
    let rect = clip_rect(x0, y0, side, side, w, h);
    if rect.width() == 0 || rect.height() == 0 {
        return Err(Error::DegenerateBox {
            index,
            width_px: rect.width(),
            height_px: rect.height(),
        });
    }
    Ok(InstancePatch {
        index,
        rect,
        nominal_side: side as usize,
        pixels: image.pixels.crop(rect),
    })
}

/// Filled axis-aligned rectangle of box `index` at image resolution.
pub fn rasterize_box_mask(image: &AnnotatedImage, index: usize) -> Result<InstanceMask> {
    let b = image.boxes.get(index).ok_or(Error::IndexOutOfBounds {
        index,
        len: image.boxes.len(),
    })?;
    let rect = b.pixel_rect(image.width(), image.height());
    let mut raster = Mask::empty(image.height(), image.width());
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            raster.set(y, x, true);
        }
    }
    let instance_id = match &image.masks {
        Some(m) => m[index].instance_id,
        None => index as u32,
    };
    Ok(InstanceMask {
        instance_id,
        raster,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub domain: DomainTag,
    pub records: Vec<AnnotatedImage>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, domain: DomainTag) -> Self {
        Self {
            name: name.into(),
            domain,
            records: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
            r.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, image_id: &str) -> Option<&AnnotatedImage> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    /// Re-tag every record.
    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        for r in &mut self.records {
            r.domain = domain;
        }
        self
    }

    /// Apply 8-bit quantization to every image, as a save/load cycle would.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.pixels = r.pixels.quantized();
        }
        out
    }
}

/// Load a dataset directory.
///
/// Images are read from `images/` when it exists, else from the directory
/// itself. The domain tag and name come from `manifest.json` when present.
pub fn load_annotations(dir: &Path, format: AnnotationFormat) -> Result<DatasetManifest> {
    store::load(dir, format)
}

/// Persist a manifest as a dataset directory; see [`load_annotations`].
pub fn save_annotations(
    manifest: &DatasetManifest,
    dir: &Path,
    format: AnnotationFormat,
) -> Result<()> {
    store::save(manifest, dir, format)
}
