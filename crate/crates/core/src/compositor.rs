//! Pixel interpolation between an original render and its styled version.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AnnotatedImage;
use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendRegion {
    /// Background-only when the original carries instance masks, else full.
    #[default]
    Auto,
    Full,
    /// Outside instance masks; box rectangles stand in when masks are absent.
    Background,
}

impl FromStr for BlendRegion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(BlendRegion::Auto),
            "full" => Ok(BlendRegion::Full),
            "background" | "background-only" => Ok(BlendRegion::Background),
            _ => Err(Error::Config(format!("unknown blend region '{s}'"))),
        }
    }
}

impl fmt::Display for BlendRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlendRegion::Auto => "auto",
            BlendRegion::Full => "full",
            BlendRegion::Background => "background",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlendConfig {
    pub alpha: f64,
    pub region: BlendRegion,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            region: BlendRegion::Auto,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "blend alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// `alpha·styled + (1 − alpha)·original` on the selected region, original
/// elsewhere. Annotations come from `original` and must match `styled`.
pub fn blend(
    original: &AnnotatedImage,
    styled: &AnnotatedImage,
    cfg: &BlendConfig,
) -> Result<AnnotatedImage> {
    cfg.validate()?;
    if (original.height(), original.width()) != (styled.height(), styled.width()) {
        return Err(Error::Consistency(format!(
            "{}: original is {}x{}, styled is {}x{}",
            original.image_id,
            original.height(),
            original.width(),
            styled.height(),
            styled.width()
        )));
    }
    if !original.same_annotations(styled) {
        return Err(Error::Consistency(format!(
            "{}: annotations differ between original and styled",
            original.image_id
        )));
    }
    let a = cfg.alpha;
    let region = match cfg.region {
        BlendRegion::Auto if original.masks.is_some() => BlendRegion::Background,
        BlendRegion::Auto => BlendRegion::Full,
        r => r,
    };
    let mut fg = Mask::empty(original.height(), original.width());
    if region == BlendRegion::Background {
        for m in original.masks_or_rasterized() {
            for (d, &v) in fg.data.iter_mut().zip(&m.raster.data) {
                *d |= v;
            }
        }
    }
    let mut out = original.clone();
    for (p, &inside) in fg.data.iter().enumerate() {
        if inside {
            continue;
        }
        for c in 0..3 {
            let i = 3 * p + c;
            out.pixels.data[i] = if a == 0.0 {
                original.pixels.data[i]
            } else if a == 1.0 {
                styled.pixels.data[i]
            } else {
                a * styled.pixels.data[i] + (1.0 - a) * original.pixels.data[i]
            };
        }
    }
    Ok(out)
}
