//! YOLO text labels: one `<image_id>.txt` per image, lines `class cx cy w h`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::store::RecordAnnotations;
use super::{BBox, DatasetManifest};
use crate::error::{Error, Result};

fn labels_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("labels");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

pub(super) fn read_labels(dir: &Path, image_id: &str) -> Result<RecordAnnotations> {
    let path = labels_dir(dir).join(format!("{image_id}.txt"));
    if !path.is_file() {
        return Err(Error::MissingAnnotation {
            image_id: image_id.to_string(),
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let boxes = parse_labels(&text, &path)?;
    Ok(RecordAnnotations {
        boxes,
        masks: Vec::new(),
    })
}

pub(crate) fn parse_labels(text: &str, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", tokens.len())));
        }
        let class_id: u32 = tokens[0]
            .parse()
            .map_err(|_| err(format!("invalid class id '{}'", tokens[0])))?;
        let mut v = [0.0; 4];
        for (slot, tok) in v.iter_mut().zip(&tokens[1..]) {
            *slot = tok
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("invalid coordinate '{tok}'")))?;
        }
        boxes.push(BBox::new(class_id, v[0], v[1], v[2], v[3]));
    }
    Ok(boxes)
}

/// Shortest round-trip float formatting keeps load/save exact.
pub(crate) fn format_box(b: &BBox) -> String {
    format!("{} {} {} {} {}", b.class_id, b.cx, b.cy, b.w, b.h)
}

pub(super) fn write_labels(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let out = dir.join("labels");
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for r in &manifest.records {
        let mut text = String::new();
        for b in &r.boxes {
            let _ = writeln!(text, "{}", format_box(b));
        }
        let path = out.join(format!("{}.txt", r.image_id));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
