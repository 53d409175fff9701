use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{BBox, DatasetManifest};
use crate::error::{Error, Result};

/// Slack on IoU comparisons so boxes built to hit a threshold exactly count.
const IOU_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub score: f64,
}

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Parse `image_id class score cx cy w h` lines; blank and `#` lines are
/// skipped.
pub fn parse_predictions(text: &str, path: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad class '{}'", fields[1])))?;
        let mut nums = [0.0; 5];
        for (k, f) in fields[2..].iter().enumerate() {
            nums[k] = f.parse().map_err(|_| err(format!("bad number '{f}'")))?;
        }
        let score = nums[0];
        if !(0.0..=1.0).contains(&score) {
            return Err(err(format!("score {score} outside [0, 1]")));
        }
        out.push(Detection {
            image_id: fields[0].to_string(),
            bbox: BBox::new(class_id, nums[1], nums[2], nums[3], nums[4]),
            score,
        });
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path)
}

/// Ground-truth boxes keyed by image id.
pub fn ground_truth(manifest: &DatasetManifest) -> BTreeMap<String, Vec<BBox>> {
    manifest
        .records
        .iter()
        .map(|r| (r.image_id.clone(), r.boxes.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub map50: f64,
    pub map50_95: f64,
    /// `(threshold, AP)` for every requested threshold.
    pub per_threshold: Vec<(f64, f64)>,
    pub images_evaluated: usize,
    /// Images without ground truth; their detections are ignored.
    pub images_excluded: Vec<String>,
    pub gt_boxes: usize,
    pub detections_used: usize,
}

/// Single-class AP at one IoU threshold with greedy highest-score-first
/// matching and all-point interpolation.
pub fn ap_at(dets: &[&Detection], gt: &BTreeMap<String, Vec<BBox>>, threshold: f64) -> f64 {
    let npos: usize = gt.values().map(Vec::len).sum();
    if npos == 0 {
        return 0.0;
    }
    let mut matched: BTreeMap<&str, Vec<bool>> = gt
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();
    let mut tp = Vec::with_capacity(dets.len());
    for d in dets {
        let boxes = &gt[&d.image_id];
        let used = matched.get_mut(d.image_id.as_str()).expect("image present");
        let best = boxes
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, g)| (j, d.bbox.iou(g)))
            .fold(None, |acc: Option<(usize, f64)>, (j, iou)| match acc {
                Some((_, b)) if b >= iou => acc,
                _ => Some((j, iou)),
            });
        match best {
            Some((j, iou)) if iou + IOU_EPS >= threshold => {
                used[j] = true;
                tp.push(true);
            }
            _ => tp.push(false),
        }
    }
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let (mut ctp, mut cfp) = (0usize, 0usize);
    for &t in &tp {
        if t {
            ctp += 1;
        } else {
            cfp += 1;
        }
        recall.push(ctp as f64 / npos as f64);
        precision.push(ctp as f64 / (ctp + cfp) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

/// mAP@50 and the mean AP over `thresholds`.
pub fn map_eval(
    detections: &[Detection],
    gt: &BTreeMap<String, Vec<BBox>>,
    thresholds: &[f64],
) -> MapReport {
    let images_excluded: Vec<String> = gt
        .iter()
        .filter(|(_, v)| v.is_empty())
        .map(|(k, _)| k.clone())
        .collect();
    if !images_excluded.is_empty() {
        log::info!(
            "{} images without ground truth excluded from AP",
            images_excluded.len()
        );
    }
    let kept: BTreeMap<String, Vec<BBox>> = gt
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let mut order: Vec<(usize, &Detection)> = detections
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let known = kept.contains_key(&d.image_id);
            if !known && !gt.contains_key(&d.image_id) {
                log::warn!("detection for unknown image '{}' ignored", d.image_id);
            }
            known
        })
        .collect();
    // ranking only: ties broken by image id then input position
    order.sort_by(|(ia, a), (ib, b)| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.image_id.cmp(&b.image_id))
            .then(ia.cmp(ib))
    });
    let dets: Vec<&Detection> = order.into_iter().map(|(_, d)| d).collect();
    let per_threshold: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| (t, ap_at(&dets, &kept, t)))
        .collect();
    let map50 = per_threshold
        .iter()
        .find(|(t, _)| (*t - 0.5).abs() < 1e-12)
        .map(|p| p.1)
        .unwrap_or_else(|| ap_at(&dets, &kept, 0.5));
    let map50_95 = if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().map(|p| p.1).sum::<f64>() / per_threshold.len() as f64
    };
    MapReport {
        map50,
        map50_95,
        per_threshold,
        images_evaluated: kept.len(),
        images_excluded,
        gt_boxes: kept.values().map(Vec::len).sum(),
        detections_used: dets.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: &str, b: BBox, score: f64) -> Detection {
        Detection {
            image_id: id.into(),
            bbox: b,
            score,
        }
    }

    fn one_gt() -> BTreeMap<String, Vec<BBox>> {
        BTreeMap::from([("a".to_string(), vec![BBox::new(0, 0.5, 0.5, 0.2, 0.2)])])
    }

    #[test]
    fn hand_built_pr_curve() {
        // horizontal shift d gives IoU (w − d)/(w + d)
        let w = 0.2;
        let d60 = w / 4.0;
        let d30 = w * 0.7 / 1.3;
        let dets = vec![
            det("a", BBox::new(0, 0.5 + d60, 0.5, w, w), 0.9),
            det("a", BBox::new(0, 0.5 - d30, 0.5, w, w), 0.8),
        ];
        let r = map_eval(&dets, &one_gt(), &default_thresholds());
        assert_eq!(r.map50, 1.0);
        assert_eq!(r.map50_95, 0.3);
        let aps: Vec<f64> = r.per_threshold.iter().map(|p| p.1).collect();
        assert_eq!(aps, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn perfect_and_empty() {
        let gt = one_gt();
        let perfect = vec![det("a", gt["a"][0], 1.0)];
        let r = map_eval(&perfect, &gt, &default_thresholds());
        assert_eq!((r.map50, r.map50_95), (1.0, 1.0));
        let r = map_eval(&[], &gt, &default_thresholds());
        assert_eq!((r.map50, r.map50_95), (0.0, 0.0));
    }

    #[test]
    fn empty_gt_images_excluded() {
        let mut gt = one_gt();
        gt.insert("b".into(), Vec::new());
        let dets = vec![
            det("a", gt["a"][0], 0.5),
            det("b", BBox::new(0, 0.3, 0.3, 0.1, 0.1), 0.99),
        ];
        let r = map_eval(&dets, &gt, &default_thresholds());
        assert_eq!(r.map50, 1.0);
        assert_eq!(r.images_excluded, vec!["b".to_string()]);
        assert_eq!(r.detections_used, 1);
    }

    #[test]
    fn interpolation_uses_max_precision_to_the_right() {
        // FP, TP over 1 GT: precision 1/2 at recall 1
        let gt = one_gt();
        let dets = vec![
            det("a", BBox::new(0, 0.1, 0.1, 0.1, 0.1), 0.9),
            det("a", gt["a"][0], 0.5),
        ];
        assert_eq!(map_eval(&dets, &gt, &[0.5]).map50, 0.5);
    }

    #[test]
    fn prediction_parsing() {
        let p = Path::new("pred.txt");
        let d = parse_predictions("# header\nimg1 0 0.75 0.5 0.5 0.1 0.2\n\n", p).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].bbox, BBox::new(0, 0.5, 0.5, 0.1, 0.2));
        assert!(matches!(
            parse_predictions("img1 0 0.7 0.5 0.5 0.1", p),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_predictions("img1 0 1.5 0.5 0.5 0.1 0.1", p).is_err());
    }
}
