//! Dataset directory layout shared by both annotation formats.
//!
//! ```text
//! <dir>/manifest.json          name, domain tag, format, record ids
//! <dir>/images/<id>.png
//! <dir>/labels/<id>.txt        yolo-txt
//! <dir>/annotations.json       coco-json
//! <dir>/masks/<id>_<inst>.png  one binary raster per instance (0/255)
//! <dir>/masks/<id>_<inst>.rle  accepted on input: "H W" then row-major run lengths
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    coco, yolo, AnnotatedImage, AnnotationFormat, BBox, DatasetManifest, DomainTag, InstanceMask,
};
use crate::error::{Error, Result};
use crate::raster::{Image, Mask};

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];
pub(super) const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    domain_tag: DomainTag,
    format: AnnotationFormat,
    records: Vec<String>,
    /// Records whose tag differs from `domain_tag` (mixed training sets).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    record_domains: BTreeMap<String, DomainTag>,
}

/// Boxes plus any masks carried inside the annotation file itself.
pub(super) struct RecordAnnotations {
    pub boxes: Vec<BBox>,
    pub masks: Vec<InstanceMask>,
}

fn images_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("images");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) && path.is_file() {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            out.push((stem.to_string(), path));
        }
    }
    out.sort();
    Ok(out)
}

pub(super) fn load(dir: &Path, format: AnnotationFormat) -> Result<DatasetManifest> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let meta: Option<ManifestFile> = {
        let p = dir.join(MANIFEST_FILE);
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })?)
        } else {
            None
        }
    };
    let name = meta.as_ref().map(|m| m.name.clone()).unwrap_or_else(|| {
        dir.file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("dataset")
            .to_string()
    });
    let domain = meta
        .as_ref()
        .map(|m| m.domain_tag)
        .unwrap_or(DomainTag::Synthetic);
    let record_domains = meta.map(|m| m.record_domains).unwrap_or_default();

    let coco_index = match format {
        AnnotationFormat::CocoJson => Some(coco::read_index(dir)?),
        AnnotationFormat::YoloTxt => None,
    };
    let mut file_masks = read_mask_dir(&dir.join("masks"))?;

    let mut records = Vec::new();
    for (image_id, path) in list_images(&images_dir(dir))? {
        let pixels = Image::load_png(&path)?;
        let ann = match &coco_index {
            Some(index) => index.annotations_for(&image_id, &path, pixels.width, pixels.height)?,
            None => yolo::read_labels(dir, &image_id)?,
        };
        let mut boxes = Vec::with_capacity(ann.boxes.len());
        let mut keep = Vec::with_capacity(ann.boxes.len());
        for (i, b) in ann.boxes.iter().enumerate() {
            match b.clamped(0.0) {
                Some((c, changed)) => {
                    if changed {
                        log::warn!(
                            "{image_id}: box {i} clamped to the unit square ({b:?} -> {c:?})"
                        );
                    }
                    boxes.push(c);
                    keep.push(i);
                }
                None => log::warn!("{image_id}: box {i} lies outside the image and was dropped"),
            }
        }
        let masks = match file_masks.remove(&image_id) {
            Some(m) => Some(m),
            None if !ann.masks.is_empty() => Some(ann.masks),
            None => None,
        };
        let masks = masks.map(|m| {
            if m.len() == ann.boxes.len() && keep.len() != ann.boxes.len() {
                keep.iter().map(|&i| m[i].clone()).collect()
            } else {
                m
            }
        });
        let record = AnnotatedImage {
            domain: record_domains.get(&image_id).copied().unwrap_or(domain),
            image_id,
            pixels,
            boxes,
            masks,
        };
        record.validate()?;
        records.push(record);
    }
    for id in file_masks.keys() {
        log::warn!("masks found for unknown image '{id}', ignored");
    }
    let manifest = DatasetManifest {
        name,
        domain,
        records,
    };
    manifest.validate()?;
    Ok(manifest)
}

fn read_mask_dir(dir: &Path) -> Result<BTreeMap<String, Vec<InstanceMask>>> {
    let mut out: BTreeMap<String, Vec<InstanceMask>> = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    for path in paths {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default();
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let Some((image_id, inst)) = stem.rsplit_once('_') else {
            continue;
        };
        let Ok(instance_id) = inst.parse::<u32>() else {
            continue;
        };
        let raster = match ext {
            "png" => Mask::load_png(&path)?,
            "rle" => read_rle_file(&path)?,
            _ => continue,
        };
        out.entry(image_id.to_string())
            .or_default()
            .push(InstanceMask {
                instance_id,
                raster,
            });
    }
    for masks in out.values_mut() {
        masks.sort_by_key(|m| m.instance_id);
    }
    Ok(out)
}

fn read_rle_file(path: &Path) -> Result<Mask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header: Vec<usize> = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| parse_err(1, format!("bad size token '{t}'")))
        })
        .collect::<Result<_>>()?;
    if header.len() != 2 {
        return Err(parse_err(1, "expected 'H W'".into()));
    }
    let counts: Vec<usize> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|t| {
            t.parse()
                .map_err(|_| parse_err(2, format!("bad run length '{t}'")))
        })
        .collect::<Result<_>>()?;
    decode_rle_row_major(header[0], header[1], &counts).map_err(|m| parse_err(2, m))
}

fn decode_runs(total: usize, counts: &[usize]) -> std::result::Result<Vec<bool>, String> {
    let mut bits = Vec::with_capacity(total);
    let mut value = false;
    for &c in counts {
        bits.extend(std::iter::repeat_n(value, c));
        value = !value;
    }
    if bits.len() != total {
        return Err(format!(
            "run lengths cover {} pixels, expected {total}",
            bits.len()
        ));
    }
    Ok(bits)
}

/// Uncompressed run-length mask, runs alternate starting with zeros, row-major.
pub fn decode_rle_row_major(
    h: usize,
    w: usize,
    counts: &[usize],
) -> std::result::Result<Mask, String> {
    Ok(Mask {
        height: h,
        width: w,
        data: decode_runs(h * w, counts)?,
    })
}

/// COCO uncompressed RLE (column-major).
pub fn decode_rle_column_major(
    h: usize,
    w: usize,
    counts: &[usize],
) -> std::result::Result<Mask, String> {
    let col = decode_runs(h * w, counts)?;
    let mut m = Mask::empty(h, w);
    for x in 0..w {
        for y in 0..h {
            m.set(y, x, col[x * h + y]);
        }
    }
    Ok(m)
}

/// Remove dataset artifacts a previous save may have left in `dir`.
pub fn clear_dataset_dir(dir: &Path) -> Result<()> {
    for sub in ["images", "labels", "masks"] {
        let p = dir.join(sub);
        if p.is_dir() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    for file in [MANIFEST_FILE, coco::COCO_FILE] {
        let p = dir.join(file);
        if p.is_file() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

pub(super) fn save(manifest: &DatasetManifest, dir: &Path, format: AnnotationFormat) -> Result<()> {
    manifest.validate()?;
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(dir)?;
    let img_dir = dir.join("images");
    mkdir(&img_dir)?;
    let has_masks = manifest.records.iter().any(|r| r.masks.is_some());
    let mask_dir = dir.join("masks");
    if has_masks {
        mkdir(&mask_dir)?;
    }
    for r in &manifest.records {
        r.pixels
            .save_png(&img_dir.join(format!("{}.png", r.image_id)))?;
        if let Some(masks) = &r.masks {
            for m in masks {
                m.raster
                    .save_png(&mask_dir.join(format!("{}_{}.png", r.image_id, m.instance_id)))?;
            }
        }
    }
    match format {
        AnnotationFormat::YoloTxt => yolo::write_labels(dir, manifest)?,
        AnnotationFormat::CocoJson => coco::write(dir, manifest)?,
    }
    let meta = ManifestFile {
        name: manifest.name.clone(),
        domain_tag: manifest.domain,
        format,
        records: manifest
            .records
            .iter()
            .map(|r| r.image_id.clone())
            .collect(),
        record_domains: manifest
            .records
            .iter()
            .filter(|r| r.domain != manifest.domain)
            .map(|r| (r.image_id.clone(), r.domain))
            .collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
