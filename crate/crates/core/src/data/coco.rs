//! COCO JSON: a single `annotations.json` with `images`, `annotations`
//! (absolute `[x, y, w, h]` boxes) and `categories`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{decode_rle_column_major, RecordAnnotations};
use super::{BBox, DatasetManifest, InstanceMask};
use crate::error::{Error, Result};

pub(super) const COCO_FILE: &str = "annotations.json";

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: usize,
    height: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segmentation: Option<serde_json::Value>,
    #[serde(default)]
    area: f64,
    #[serde(default)]
    iscrowd: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
}

#[derive(Debug, Deserialize)]
struct UncompressedRle {
    size: [usize; 2],
    counts: Vec<usize>,
}

pub(super) struct CocoIndex {
    path: std::path::PathBuf,
    by_stem: HashMap<String, (CocoImageMeta, Vec<CocoAnnotation>)>,
}

struct CocoImageMeta {
    width: usize,
    height: usize,
}

pub(super) fn read_index(dir: &Path) -> Result<CocoIndex> {
    let path = dir.join(COCO_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: CocoFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut id_to_stem = HashMap::new();
    let mut by_stem = HashMap::new();
    for img in file.images {
        let stem = Path::new(&img.file_name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&img.file_name)
            .to_string();
        id_to_stem.insert(img.id, stem.clone());
        by_stem.insert(
            stem,
            (
                CocoImageMeta {
                    width: img.width,
                    height: img.height,
                },
                Vec::new(),
            ),
        );
    }
    for ann in file.annotations {
        let stem = id_to_stem.get(&ann.image_id).ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!(
                "annotation {} references unknown image {}",
                ann.id, ann.image_id
            ),
        })?;
        by_stem.get_mut(stem).expect("indexed").1.push(ann);
    }
    Ok(CocoIndex { path, by_stem })
}

impl CocoIndex {
    pub(super) fn annotations_for(
        &self,
        image_id: &str,
        image_path: &Path,
        width: usize,
        height: usize,
    ) -> Result<RecordAnnotations> {
        let (meta, anns) = self
            .by_stem
            .get(image_id)
            .ok_or_else(|| Error::MissingAnnotation {
                image_id: image_id.to_string(),
            })?;
        if meta.width != width || meta.height != height {
            return Err(Error::InvalidRecord {
                image_id: image_id.to_string(),
                message: format!(
                    "{} is {}x{} but {} declares {}x{}",
                    image_path.display(),
                    width,
                    height,
                    self.path.display(),
                    meta.width,
                    meta.height
                ),
            });
        }
        let mut boxes = Vec::with_capacity(anns.len());
        let mut masks = Vec::new();
        for (k, a) in anns.iter().enumerate() {
            boxes.push(BBox::from_xywh_px(a.category_id, a.bbox, width, height));
            if let Some(seg) = &a.segmentation {
                if let Ok(rle) = serde_json::from_value::<UncompressedRle>(seg.clone()) {
                    let raster = decode_rle_column_major(rle.size[0], rle.size[1], &rle.counts)
                        .map_err(|m| Error::Parse {
                            path: self.path.clone(),
                            line: 0,
                            message: format!("annotation {}: {m}", a.id),
                        })?;
                    masks.push(InstanceMask {
                        instance_id: k as u32,
                        raster,
                    });
                }
            }
        }
        if !masks.is_empty() && masks.len() != boxes.len() {
            log::warn!(
                "{image_id}: only {} of {} annotations carry RLE masks; masks ignored",
                masks.len(),
                boxes.len()
            );
            masks.clear();
        }
        Ok(RecordAnnotations { boxes, masks })
    }
}

pub(super) fn write(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut classes = BTreeSet::new();
    let mut next_ann = 1u64;
    for (i, r) in manifest.records.iter().enumerate() {
        let image_id = i as u64 + 1;
        images.push(CocoImage {
            id: image_id,
            file_name: format!("{}.png", r.image_id),
            width: r.width(),
            height: r.height(),
        });
        for b in &r.boxes {
            classes.insert(b.class_id);
            let bbox = b.to_xywh_px(r.width(), r.height());
            annotations.push(CocoAnnotation {
                id: next_ann,
                image_id,
                category_id: b.class_id,
                bbox,
                segmentation: None,
                area: bbox[2] * bbox[3],
                iscrowd: 0,
            });
            next_ann += 1;
        }
    }
    let names: BTreeMap<u32, &str> = [(0u32, "person")].into_iter().collect();
    let categories = classes
        .into_iter()
        .map(|id| CocoCategory {
            id,
            name: names
                .get(&id)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("class_{id}")),
        })
        .collect();
    let file = CocoFile {
        images,
        annotations,
        categories,
    };
    let path = dir.join(COCO_FILE);
    let text = serde_json::to_string_pretty(&file).expect("coco serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
