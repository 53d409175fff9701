use std::fs;

use aerialign_core::data::{load_annotations, save_annotations};
use aerialign_core::toy::toy_dataset;
use aerialign_core::{AnnotatedImage, AnnotationFormat, BBox, DatasetManifest, DomainTag, Image};

fn assert_boxes_close(a: &[BBox], b: &[BBox], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.class_id, y.class_id);
        for (p, q) in [(x.cx, y.cx), (x.cy, y.cy), (x.w, y.w), (x.h, y.h)] {
            assert!((p - q).abs() <= tol, "{x:?} vs {y:?}");
        }
    }
}

fn check_round_trip(format: AnnotationFormat, tol: f64) {
    let (syn, _) = toy_dataset(4, 0, 21);
    let dir = tempfile::tempdir().unwrap();
    save_annotations(&syn, dir.path(), format).unwrap();
    let back = load_annotations(dir.path(), format).unwrap();
    assert_eq!(back.name, syn.name);
    assert_eq!(back.domain, DomainTag::Synthetic);
    assert_eq!(back.records.len(), syn.records.len());
    for (a, b) in syn.records.iter().zip(&back.records) {
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.pixels, b.pixels, "toy pixels are already 8-bit exact");
        assert_eq!(a.masks, b.masks);
        assert_boxes_close(&a.boxes, &b.boxes, tol);
    }
}

#[test]
fn yolo_round_trip_is_exact() {
    check_round_trip(AnnotationFormat::YoloTxt, 0.0);
}

#[test]
fn coco_round_trip_within_float_noise() {
    check_round_trip(AnnotationFormat::CocoJson, 1e-12);
}

#[test]
fn second_round_trip_is_byte_identical() {
    let (syn, _) = toy_dataset(2, 0, 5);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    save_annotations(&syn, a.path(), AnnotationFormat::CocoJson).unwrap();
    let once = load_annotations(a.path(), AnnotationFormat::CocoJson).unwrap();
    save_annotations(&once, b.path(), AnnotationFormat::CocoJson).unwrap();
    let ja = fs::read(a.path().join("annotations.json")).unwrap();
    let jb = fs::read(b.path().join("annotations.json")).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn empty_manifest_round_trips() {
    let empty = DatasetManifest::new("nothing", DomainTag::Real);
    for format in [AnnotationFormat::YoloTxt, AnnotationFormat::CocoJson] {
        let dir = tempfile::tempdir().unwrap();
        save_annotations(&empty, dir.path(), format).unwrap();
        let back = load_annotations(dir.path(), format).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(back.domain, DomainTag::Real);
    }
}

#[test]
fn mixed_domains_survive() {
    let (syn, real) = toy_dataset(2, 2, 3);
    let mut mixed = DatasetManifest::new("mixed", DomainTag::Synthetic);
    mixed.records = syn.records.iter().chain(&real.records).cloned().collect();
    let dir = tempfile::tempdir().unwrap();
    save_annotations(&mixed, dir.path(), AnnotationFormat::YoloTxt).unwrap();
    let back = load_annotations(dir.path(), AnnotationFormat::YoloTxt).unwrap();
    let tags: Vec<_> = back
        .records
        .iter()
        .map(|r| (r.image_id.as_str(), r.domain))
        .collect();
    assert!(tags.contains(&("real_000", DomainTag::Real)));
    assert!(tags.contains(&("syn_001", DomainTag::Synthetic)));
}

#[test]
fn hand_written_yolo_with_rle_masks() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::create_dir_all(root.join("images")).unwrap();
    fs::create_dir_all(root.join("labels")).unwrap();
    fs::create_dir_all(root.join("masks")).unwrap();
    Image::filled(32, 32, [0.2, 0.4, 0.6])
        .save_png(&root.join("images/a.png"))
        .unwrap();
    fs::write(root.join("labels/a.txt"), "0 0.5 0.5 0.25 0.25\n").unwrap();
    // 12 rows of zeros, then rows 12..20 with columns 12..20 set
    let mut counts = vec![12 * 32 + 12];
    for _ in 0..7 {
        counts.extend([8, 24]);
    }
    counts.extend([8, 12 + 12 * 32]);
    let text = format!(
        "32 32\n{}\n",
        counts
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    );
    fs::write(root.join("masks/a_0.rle"), text).unwrap();

    let m = load_annotations(root, AnnotationFormat::YoloTxt).unwrap();
    assert_eq!(m.name, dir.path().file_name().unwrap().to_str().unwrap());
    let rec: &AnnotatedImage = &m.records[0];
    let mask = &rec.masks.as_ref().unwrap()[0].raster;
    assert_eq!(mask.count(), 64);
    assert!(mask.get(12, 12) && mask.get(19, 19) && !mask.get(11, 12) && !mask.get(12, 20));
}

#[test]
fn out_of_image_box_is_clamped_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    Image::filled(32, 32, [0.5; 3])
        .save_png(&root.join("b.png"))
        .unwrap();
    fs::create_dir_all(root.join("labels")).unwrap();
    fs::write(
        root.join("labels/b.txt"),
        "1 0.95 0.5 0.2 0.2\n2 1.5 0.5 0.1 0.1\n",
    )
    .unwrap();
    let m = load_annotations(root, AnnotationFormat::YoloTxt).unwrap();
    let boxes = &m.records[0].boxes;
    assert_eq!(boxes.len(), 1, "fully outside box is dropped");
    let (_, _, x1, _) = boxes[0].xyxy();
    assert!(x1 <= 1.0 + 1e-12);
}
