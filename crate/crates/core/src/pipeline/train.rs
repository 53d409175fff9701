use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    clear_dataset_dir, save_annotations, AnnotationFormat, DatasetManifest, DomainTag,
};
use crate::error::{Error, Result};

pub const TRAIN_CONFIG_FILE: &str = "train_config.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub image_id: String,
    pub domain: DomainTag,
    pub weight: f64,
}

/// Translated and real records merged, with per-record loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub manifest: DatasetManifest,
    pub lambda_orig: f64,
    pub lambda_tran: f64,
    pub records: Vec<TrainRecord>,
    pub warnings: Vec<String>,
}

impl TrainSet {
    /// Key-value weights file for an external detector trainer.
    pub fn config_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# per-record loss weights: lambda_orig for real, lambda_tran for translated"
        );
        let _ = writeln!(s, "lambda_orig={}", self.lambda_orig);
        let _ = writeln!(s, "lambda_tran={}", self.lambda_tran);
        let _ = writeln!(s, "records={}", self.records.len());
        for r in &self.records {
            let _ = writeln!(s, "record.{}.domain={}", r.image_id, r.domain);
            let _ = writeln!(s, "record.{}.weight={}", r.image_id, r.weight);
        }
        s
    }
}

/// `D̃_s ∪ D_t`; records keep their domain tags and get `λ_tran` (synthetic)
/// or `λ_orig` (real) as weight.
pub fn assemble_train_set(
    translated: &DatasetManifest,
    real: &DatasetManifest,
    lambda_orig: f64,
    lambda_tran: f64,
) -> Result<TrainSet> {
    if !(lambda_orig > 0.0 && lambda_tran > 0.0) {
        return Err(Error::Config(
            "lambda_orig and lambda_tran must be > 0".into(),
        ));
    }
    translated.validate()?;
    real.validate()?;
    let ids: BTreeSet<&str> = translated
        .records
        .iter()
        .map(|r| r.image_id.as_str())
        .collect();
    let clashes: Vec<String> = real
        .records
        .iter()
        .filter(|r| ids.contains(r.image_id.as_str()))
        .map(|r| r.image_id.clone())
        .collect();
    if !clashes.is_empty() {
        return Err(Error::Collision(clashes));
    }
    let mut warnings = Vec::new();
    if real.records.is_empty() {
        let w = format!(
            "real set '{}' is empty; training set holds translated images only",
            real.name
        );
        log::warn!("{w}");
        warnings.push(w);
    }
    let mut manifest = DatasetManifest::new("train", DomainTag::Synthetic);
    manifest.records = translated
        .records
        .iter()
        .chain(&real.records)
        .cloned()
        .collect();
    manifest.records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let records = manifest
        .records
        .iter()
        .map(|r| TrainRecord {
            image_id: r.image_id.clone(),
            domain: r.domain,
            weight: match r.domain {
                DomainTag::Real => lambda_orig,
                DomainTag::Synthetic => lambda_tran,
            },
        })
        .collect();
    Ok(TrainSet {
        manifest,
        lambda_orig,
        lambda_tran,
        records,
        warnings,
    })
}

pub fn write_train_set(set: &TrainSet, dir: &Path, format: AnnotationFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    clear_dataset_dir(dir)?;
    save_annotations(&set.manifest, dir, format)?;
    let path = dir.join(TRAIN_CONFIG_FILE);
    fs::write(&path, set.config_text()).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::toy_dataset;

    #[test]
    fn uniform_weights_and_domains() {
        let (syn, real) = toy_dataset(4, 2, 1);
        let set = assemble_train_set(&syn, &real, 1.0, 1.0).unwrap();
        assert_eq!(set.manifest.records.len(), 6);
        assert!(set.records.iter().all(|r| r.weight == 1.0));
        assert_eq!(
            set.records
                .iter()
                .filter(|r| r.domain == DomainTag::Real)
                .count(),
            2
        );
        let text = set.config_text();
        assert!(text.contains("record.real_000.domain=real\nrecord.real_000.weight=1\n"));
    }

    #[test]
    fn weights_follow_domain() {
        let (syn, real) = toy_dataset(2, 2, 1);
        let set = assemble_train_set(&syn, &real, 2.0, 0.5).unwrap();
        for r in &set.records {
            let expect = if r.domain == DomainTag::Real {
                2.0
            } else {
                0.5
            };
            assert_eq!(r.weight, expect);
        }
    }

    #[test]
    fn empty_real_warns_and_collisions_fail() {
        let (syn, _) = toy_dataset(3, 0, 1);
        let empty = DatasetManifest::new("none", DomainTag::Real);
        let set = assemble_train_set(&syn, &empty, 1.0, 1.0).unwrap();
        assert_eq!(set.manifest.records.len(), 3);
        assert_eq!(set.warnings.len(), 1);
        let mut clash = DatasetManifest::new("r", DomainTag::Real);
        clash.records.push(syn.records[1].clone());
        assert!(
            matches!(assemble_train_set(&syn, &clash, 1.0, 1.0), Err(Error::Collision(ids)) if ids == vec!["syn_001"])
        );
        assert!(assemble_train_set(&syn, &empty, 0.0, 1.0).is_err());
    }
}
