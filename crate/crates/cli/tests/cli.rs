use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aerialign_core::data::{load_annotations, save_annotations};
use aerialign_core::{AnnotatedImage, AnnotationFormat, DomainTag, Image};

const BIN: &str = env!("CARGO_BIN_EXE_aerialign");
const PLUGIN: &str = env!("CARGO_BIN_EXE_aerialign-plugin-toy-remote");

fn plugin_dir() -> PathBuf {
    Path::new(PLUGIN).parent().unwrap().to_path_buf()
}

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env("AERIALIGN_PLUGIN_PATH", plugin_dir())
        .output()
        .expect("spawn aerialign")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn toy_data(cwd: &Path, syn: usize, real: usize) {
    ok(
        &[
            "toy-data",
            "--out-dir",
            ".",
            "--synthetic",
            &syn.to_string(),
            "--real",
            &real.to_string(),
            "--seed",
            "5",
        ],
        cwd,
    );
}

fn dataset_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["images", "labels", "masks"] {
        let d = dir.join(sub);
        if !d.is_dir() {
            continue;
        }
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            out.insert(
                format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()),
                fs::read(&p).unwrap(),
            );
        }
    }
    out
}

#[test]
fn run_equals_chaining_single_stage_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    toy_data(cwd, 3, 2);
    fs::write(
        cwd.join("run.cfg"),
        "input.synthetic=synthetic\ninput.real=real\noutput.root=out\nrun.seed=4\ngst.steps=5\n\
         blend.enabled=true\nblend.position=after-gst\n",
    )
    .unwrap();
    ok(&["run", "--config", "run.cfg"], cwd);

    ok(
        &[
            "gst",
            "--content-dir",
            "synthetic",
            "--style-dir",
            "real",
            "--out-dir",
            "c1",
            "--steps",
            "5",
            "--seed",
            "4",
        ],
        cwd,
    );
    ok(
        &[
            "blend",
            "--orig-dir",
            "synthetic",
            "--styled-dir",
            "c1",
            "--out-dir",
            "c2",
        ],
        cwd,
    );
    ok(&["lr", "--in-dir", "c2", "--out-dir", "c3"], cwd);
    ok(
        &[
            "hr",
            "--in-dir",
            "c3",
            "--real-dir",
            "real",
            "--out-dir",
            "c4",
            "--seed",
            "4",
        ],
        cwd,
    );

    let chained = dataset_files(&cwd.join("c4"));
    assert!(!chained.is_empty());
    assert_eq!(dataset_files(&cwd.join("out/final")), chained);
    assert_eq!(
        fs::read(cwd.join("out/04_hr/retention_plan.json")).unwrap(),
        fs::read(cwd.join("c4/retention_plan.json")).unwrap()
    );
}

#[test]
fn eval_commands_print_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    toy_data(cwd, 4, 3);
    let fid: serde_json::Value = serde_json::from_str(&ok(
        &[
            "eval-fid",
            "--set-a",
            "synthetic",
            "--set-b",
            "real",
            "--mode",
            "patch",
        ],
        cwd,
    ))
    .unwrap();
    assert_eq!(fid["mode"], "patch");
    assert!(fid["value"].as_f64().unwrap() >= 0.0);

    let gt = load_annotations(&cwd.join("real"), AnnotationFormat::YoloTxt).unwrap();
    let mut lines = String::from("# image_id class score cx cy w h\n");
    for r in &gt.records {
        for b in &r.boxes {
            lines += &format!(
                "{} {} 0.9 {} {} {} {}\n",
                r.image_id, b.class_id, b.cx, b.cy, b.w, b.h
            );
        }
    }
    fs::write(cwd.join("pred.txt"), lines).unwrap();
    let map: serde_json::Value = serde_json::from_str(&ok(
        &["eval-map", "--pred", "pred.txt", "--gt-dir", "real"],
        cwd,
    ))
    .unwrap();
    assert_eq!(map["map50"].as_f64(), Some(1.0));
    assert_eq!(map["map50_95"].as_f64(), Some(1.0));
}

#[test]
fn make_train_set_writes_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    toy_data(cwd, 2, 2);
    ok(
        &[
            "make-train-set",
            "--translated-dir",
            "synthetic",
            "--real-dir",
            "real",
            "--out-dir",
            "train",
            "--lambda-orig",
            "1.0",
            "--lambda-tran",
            "0.5",
        ],
        cwd,
    );
    let text = fs::read_to_string(cwd.join("train/train_config.txt")).unwrap();
    assert!(text.contains("record.syn_000.weight=0.5"));
    assert!(text.contains("record.real_001.weight=1"));
    let m = load_annotations(&cwd.join("train"), AnnotationFormat::YoloTxt).unwrap();
    assert_eq!(m.records.len(), 4);
    assert_eq!(m.get("real_000").unwrap().domain, DomainTag::Real);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    toy_data(cwd, 2, 2);
    fs::write(
        cwd.join("bad.cfg"),
        "input.synthetic=synthetic\nbogus.key=1\n",
    )
    .unwrap();
    let out = run(&["run", "--config", "bad.cfg"], cwd);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus.key"));

    let mut syn = load_annotations(&cwd.join("synthetic"), AnnotationFormat::YoloTxt).unwrap();
    syn.records.push(AnnotatedImage::new(
        "syn_odd",
        Image::filled(66, 64, [0.2, 0.4, 0.6]),
        vec![],
        DomainTag::Synthetic,
    ));
    save_annotations(&syn, &cwd.join("synthetic"), AnnotationFormat::YoloTxt).unwrap();
    let out = run(
        &[
            "gst",
            "--content-dir",
            "synthetic",
            "--style-dir",
            "real",
            "--out-dir",
            "g",
            "--steps",
            "3",
        ],
        cwd,
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        load_annotations(&cwd.join("g"), AnnotationFormat::YoloTxt)
            .unwrap()
            .records
            .len(),
        3
    );

    let out = run(&["lr", "--in-dir", "missing", "--out-dir", "x"], cwd);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plugin_backbone_and_models_match_builtin() {
    let tmp = tempfile::tempdir().unwrap();
    let cwd = tmp.path();
    toy_data(cwd, 2, 2);
    let common = [
        "--content-dir",
        "synthetic",
        "--style-dir",
        "real",
        "--steps",
        "4",
        "--seed",
        "1",
    ];
    ok(
        &[&["gst", "--out-dir", "builtin"], &common[..]].concat(),
        cwd,
    );
    ok(
        &[
            &["gst", "--out-dir", "remote", "--backbone", "toy-remote"],
            &common[..],
        ]
        .concat(),
        cwd,
    );
    assert_eq!(
        dataset_files(&cwd.join("builtin")),
        dataset_files(&cwd.join("remote"))
    );

    ok(
        &[
            "hr",
            "--in-dir",
            "synthetic",
            "--real-dir",
            "real",
            "--out-dir",
            "h1",
        ],
        cwd,
    );
    ok(
        &[
            "hr",
            "--in-dir",
            "synthetic",
            "--real-dir",
            "real",
            "--out-dir",
            "h2",
            "--embedder",
            "toy-remote",
            "--eraser",
            "toy-remote",
        ],
        cwd,
    );
    assert_eq!(
        dataset_files(&cwd.join("h1")),
        dataset_files(&cwd.join("h2"))
    );

    let out = run(
        &[
            "lr",
            "--in-dir",
            "synthetic",
            "--out-dir",
            "x",
            "--backbone",
            "no-such-plugin",
        ],
        cwd,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-plugin"));
}
