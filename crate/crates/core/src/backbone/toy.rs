//! Fully linear, seedless backbone for exact desk-scale verification.
//!
//! Encoding is a 4×4 average pool followed by a fixed 3→4 channel mix with
//! orthonormal columns; decoding applies the transposed mix and a nearest
//! 4× upsample, so `decode(encode(x))` is `x` made 4×4-blockwise constant.

use nalgebra::DMatrix;

use super::{AdapterCapabilities, BackboneAdapter, Latent, NoiseSchedule, PromptCondition};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::style::AttentionProjections;

pub const TOY_FACTOR: usize = 4;
pub const TOY_CHANNELS: usize = 4;

/// Latent channel c = Σ_k MIX[c][k]·(pooled_k − 0.5). Columns are the first
/// three columns of the normalized 4×4 Hadamard matrix.
const MIX: [[f64; 3]; TOY_CHANNELS] = [
    [0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5],
    [0.5, 0.5, -0.5],
    [0.5, -0.5, -0.5],
];

/// Channel coupling of the linear toy noise predictor.
const PREDICTOR_MIX: [[f64; TOY_CHANNELS]; TOY_CHANNELS] = [
    [0.06, -0.02, 0.01, 0.00],
    [0.01, 0.05, -0.03, 0.02],
    [0.00, 0.02, 0.04, -0.01],
    [-0.02, 0.01, 0.00, 0.03],
];

const CONDITION_GAIN: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub enum ToyPredictor {
    /// ε ≡ 0.
    Null,
    /// ε = K·z (channel mix) plus a small per-channel bias derived from the
    /// prompt tags.
    Linear,
    /// ε(z, t) = (z − α_t z₀)/β_t for a stored clean latent z₀; inverts the
    /// forward corruption exactly.
    Oracle(Latent),
}

#[derive(Debug, Clone)]
pub struct ToyBackbone {
    schedule: NoiseSchedule,
    predictor: ToyPredictor,
    serial: bool,
}

impl ToyBackbone {
    pub fn new(predictor: ToyPredictor) -> Self {
        Self {
            schedule: NoiseSchedule::default(),
            predictor,
            serial: false,
        }
    }

    pub fn with_schedule(mut self, schedule: NoiseSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Declare the adapter serial (exercises the pipeline's queueing path).
    pub fn serial(mut self, serial: bool) -> Self {
        self.serial = serial;
        self
    }

    pub fn predictor(&self) -> &ToyPredictor {
        &self.predictor
    }

    fn name(&self) -> &'static str {
        match self.predictor {
            ToyPredictor::Null => "toy-null",
            ToyPredictor::Linear => "toy",
            ToyPredictor::Oracle(_) => "toy-oracle",
        }
    }
}

/// FNV-1a, used to turn prompt tags into a deterministic bias.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn condition_bias(condition: &PromptCondition) -> [f64; TOY_CHANNELS] {
    if condition.is_unconditional() {
        return [0.0; TOY_CHANNELS];
    }
    let h = fnv1a(condition.tags.join(",").as_bytes());
    let mut bias = [0.0; TOY_CHANNELS];
    for (c, b) in bias.iter_mut().enumerate() {
        let byte = ((h >> (8 * c)) & 0xff) as f64;
        *b = CONDITION_GAIN * (byte / 127.5 - 1.0);
    }
    bias
}

impl BackboneAdapter for ToyBackbone {
    fn capabilities(&self) -> AdapterCapabilities {
        AdapterCapabilities {
            name: self.name().to_string(),
            downsample_factor: TOY_FACTOR,
            latent_channels: TOY_CHANNELS,
            t_max: self.schedule.t_max(),
            serial: self.serial,
        }
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn encode(&self, image: &Image) -> Result<Latent> {
        let f = TOY_FACTOR;
        if !image.height.is_multiple_of(f)
            || !image.width.is_multiple_of(f)
            || image.height == 0
            || image.width == 0
        {
            return Err(Error::Dimension(format!(
                "image {}x{} not divisible by downsample factor {f}",
                image.height, image.width
            )));
        }
        let (h, w) = (image.height / f, image.width / f);
        let mut out = Latent::zeros(TOY_CHANNELS, h, w);
        let norm = (f * f) as f64;
        for by in 0..h {
            for bx in 0..w {
                let mut pooled = [0.0; 3];
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        let p = image.pixel(y, x);
                        for k in 0..3 {
                            pooled[k] += p[k];
                        }
                    }
                }
                for (c, row) in MIX.iter().enumerate() {
                    let v: f64 = (0..3).map(|k| row[k] * (pooled[k] / norm - 0.5)).sum();
                    out.set(c, by, bx, v);
                }
            }
        }
        Ok(out)
    }

    fn decode(&self, latent: &Latent) -> Result<Image> {
        if latent.channels != TOY_CHANNELS {
            return Err(Error::Dimension(format!(
                "toy decoder expects {TOY_CHANNELS} channels, got {}",
                latent.channels
            )));
        }
        let f = TOY_FACTOR;
        let mut img = Image::filled(latent.height * f, latent.width * f, [0.0; 3]);
        for by in 0..latent.height {
            for bx in 0..latent.width {
                let mut px = [0.5; 3];
                for (c, row) in MIX.iter().enumerate() {
                    let z = latent.get(c, by, bx);
                    for k in 0..3 {
                        px[k] += row[k] * z;
                    }
                }
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        img.set_pixel(y, x, px);
                    }
                }
            }
        }
        Ok(img)
    }

    fn predict_noise(
        &self,
        latent: &Latent,
        t: usize,
        condition: &PromptCondition,
    ) -> Result<Latent> {
        self.schedule.check(t)?;
        match &self.predictor {
            ToyPredictor::Null => {
                Ok(Latent::zeros(latent.channels, latent.height, latent.width).with_timestep(t))
            }
            ToyPredictor::Linear => {
                if latent.channels != TOY_CHANNELS {
                    return Err(Error::Dimension(format!(
                        "toy predictor expects {TOY_CHANNELS} channels, got {}",
                        latent.channels
                    )));
                }
                let bias = condition_bias(condition);
                let n = latent.spatial();
                let mut data = vec![0.0; latent.data.len()];
                for c in 0..TOY_CHANNELS {
                    for i in 0..n {
                        let mut v = bias[c];
                        for (d, k) in PREDICTOR_MIX[c].iter().enumerate() {
                            v += k * latent.data[d * n + i];
                        }
                        data[c * n + i] = v;
                    }
                }
                Latent::new(latent.channels, latent.height, latent.width, data, t)
            }
            ToyPredictor::Oracle(clean) => {
                if !clean.same_shape(latent) {
                    return Err(Error::Dimension(format!(
                        "oracle latent is {}x{}x{}, input is {}x{}x{}",
                        clean.channels,
                        clean.height,
                        clean.width,
                        latent.channels,
                        latent.height,
                        latent.width
                    )));
                }
                let (a, b) = (self.schedule.alpha(t)?, self.schedule.beta(t)?);
                let data = if b == 0.0 {
                    vec![0.0; latent.data.len()]
                } else {
                    latent
                        .data
                        .iter()
                        .zip(&clean.data)
                        .map(|(z, z0)| (z - a * z0) / b)
                        .collect()
                };
                Latent::new(latent.channels, latent.height, latent.width, data, t)
            }
        }
    }

    fn attention_projections(&self) -> AttentionProjections {
        AttentionProjections::identity(TOY_CHANNELS)
    }
}

/// Left inverse of the toy channel mix, exposed for tests that propagate
/// latent statistics to pixels.
pub fn toy_decode_matrix() -> DMatrix<f64> {
    DMatrix::from_fn(3, TOY_CHANNELS, |k, c| MIX[c][k])
}
