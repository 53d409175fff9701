use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{crop_instance, DatasetManifest};
use crate::error::{Error, Result};
use crate::raster::{area_resize, Image};

/// Deterministic image → feature vector map with a fixed input size.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    /// `(height, width)` every input is resized to.
    fn input_size(&self) -> (usize, usize);
    fn dim(&self) -> usize;
    fn extract(&self, image: &Image) -> Result<Vec<f64>>;
}

fn features(extractor: &dyn FeatureExtractor, img: &Image) -> Result<Vec<f64>> {
    let (h, w) = extractor.input_size();
    let v = extractor.extract(&area_resize(img, h, w))?;
    if v.len() != extractor.dim() {
        return Err(Error::Dimension(format!(
            "extractor '{}' returned {} features, declared {}",
            extractor.name(),
            v.len(),
            extractor.dim()
        )));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub count: usize,
}

/// Sample mean and unbiased, symmetrized covariance.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::SampleSize { needed: 2, got: n });
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::Dimension("feature vectors differ in length".into()));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = DVector::from_fn(d, |j, _| x.column(j).sum() / n as f64);
    let mut centered = x;
    for j in 0..d {
        let m = mu[j];
        centered.column_mut(j).apply(|v| *v -= m);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let sigma = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats {
        mu,
        sigma,
        count: n,
    })
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `Tr((Σ_a Σ_b)^{1/2})` computed as `Tr((A^{1/2} Σ_b A^{1/2})^{1/2})`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let ra = sqrt_psd(a);
    let inner = &ra * b * &ra;
    let sym = (&inner + inner.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum()
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`, clamped at 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.mu.len() != b.mu.len() || a.sigma.shape() != b.sigma.shape() {
        return Err(Error::Dimension(format!(
            "feature dims {} and {} differ",
            a.mu.len(),
            b.mu.len()
        )));
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    // both orderings, averaged, so the result is exactly symmetric
    let cross =
        0.5 * (trace_sqrt_product(&a.sigma, &b.sigma) + trace_sqrt_product(&b.sigma, &a.sigma));
    let d = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FidMode {
    Image,
    Patch,
}

impl FromStr for FidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(FidMode::Image),
            "patch" => Ok(FidMode::Patch),
            _ => Err(Error::Config(format!("unknown fid mode '{s}'"))),
        }
    }
}

impl fmt::Display for FidMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FidMode::Image => "image",
            FidMode::Patch => "patch",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidReport {
    pub mode: FidMode,
    pub extractor: String,
    pub value: f64,
    pub samples_a: usize,
    pub samples_b: usize,
    /// Patch mode only.
    pub context_pad: Option<f64>,
}

fn sorted_records(set: &DatasetManifest) -> Vec<&crate::data::AnnotatedImage> {
    let mut recs: Vec<_> = set.records.iter().collect();
    recs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    recs
}

fn stats_of(images: &[Image], extractor: &dyn FeatureExtractor) -> Result<GaussianStats> {
    let feats = images
        .par_iter()
        .map(|img| features(extractor, img))
        .collect::<Result<Vec<_>>>()?;
    gaussian_stats(&feats)
}

/// Fréchet distance over whole-frame features.
pub fn image_fid(
    a: &DatasetManifest,
    b: &DatasetManifest,
    extractor: &dyn FeatureExtractor,
) -> Result<FidReport> {
    let collect = |s: &DatasetManifest| {
        sorted_records(s)
            .into_iter()
            .map(|r| r.pixels.clone())
            .collect::<Vec<_>>()
    };
    let (ia, ib) = (collect(a), collect(b));
    let value = frechet_distance(&stats_of(&ia, extractor)?, &stats_of(&ib, extractor)?)?;
    Ok(FidReport {
        mode: FidMode::Image,
        extractor: extractor.name().to_string(),
        value,
        samples_a: ia.len(),
        samples_b: ib.len(),
        context_pad: None,
    })
}

/// Every instance crop of `set` (image-id order, then box order); crops of
/// sub-pixel boxes are skipped.
pub fn extract_patches(set: &DatasetManifest, context_pad: f64) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    for rec in sorted_records(set) {
        for i in 0..rec.boxes.len() {
            match crop_instance(rec, i, context_pad) {
                Ok(p) => out.push(p.pixels),
                Err(Error::DegenerateBox { .. }) => {
                    log::warn!("{}: box {i} too small for a patch", rec.image_id)
                }
                Err(e) => return Err(e.with_image(&rec.image_id)),
            }
        }
    }
    Ok(out)
}

/// Fréchet distance over person-centered crops.
pub fn patch_fid(
    a: &DatasetManifest,
    b: &DatasetManifest,
    extractor: &dyn FeatureExtractor,
    context_pad: f64,
) -> Result<FidReport> {
    let pa = extract_patches(a, context_pad)?;
    if pa.is_empty() {
        return Err(Error::EmptyPatchSet(a.name.clone()));
    }
    let pb = extract_patches(b, context_pad)?;
    if pb.is_empty() {
        return Err(Error::EmptyPatchSet(b.name.clone()));
    }
    let value = frechet_distance(&stats_of(&pa, extractor)?, &stats_of(&pb, extractor)?)?;
    Ok(FidReport {
        mode: FidMode::Patch,
        extractor: extractor.name().to_string(),
        value,
        samples_a: pa.len(),
        samples_b: pb.len(),
        context_pad: Some(context_pad),
    })
}
