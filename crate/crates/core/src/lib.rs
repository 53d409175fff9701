//! Sim-to-real translation of annotated aerial imagery: global style
//! transfer, local instance refinement, hallucination removal and
//! background blending, plus the metrics used to judge the result.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod compositor;
pub mod data;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod pipeline;
pub mod plugin;
pub mod raster;
pub mod refine;
pub mod registry;
pub mod seed;
pub mod style;
pub mod toy;

pub use backbone::{BackboneAdapter, Latent, NoiseSchedule, PromptCondition};
pub use data::{AnnotatedImage, AnnotationFormat, BBox, DatasetManifest, DomainTag, InstanceMask};
pub use error::{Error, Result};
pub use raster::{Image, Mask};
