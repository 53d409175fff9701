//! Translation and detection quality metrics.

mod fid;
mod map;

pub use fid::{
    extract_patches, frechet_distance, gaussian_stats, image_fid, patch_fid, FeatureExtractor,
    FidMode, FidReport, GaussianStats,
};
pub use map::{
    ap_at, default_thresholds, ground_truth, load_predictions, map_eval, parse_predictions,
    Detection, MapReport,
};
