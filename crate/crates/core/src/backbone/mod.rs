//! Latent-diffusion backbone contract, deterministic DDIM updates and a toy
//! linear backbone.

mod schedule;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::style::AttentionProjections;

pub use schedule::{NoiseSchedule, DEFAULT_T_MAX};

/// C′×H′×W′ latent, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub timestep: usize,
}

impl Latent {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        timestep: usize,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "latent buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            timestep,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
            timestep: 0,
        }
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &Latent) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn with_timestep(mut self, t: usize) -> Self {
        self.timestep = t;
        self
    }

    pub fn max_abs_diff(&self, other: &Latent) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Tag-style text conditioning; an empty list is unconditional.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptCondition {
    pub tags: Vec<String>,
}

impl PromptCondition {
    pub fn unconditional() -> Self {
        Self::default()
    }

    pub fn from_tags<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            tags: tags.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_unconditional(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Capability record written into run reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterCapabilities {
    pub name: String,
    pub downsample_factor: usize,
    pub latent_channels: usize,
    pub t_max: usize,
    /// Adapter cannot serve concurrent calls; the pipeline queues them.
    pub serial: bool,
}

/// What every latent-diffusion backbone must provide.
///
/// `decode(encode(x))` keeps the spatial dimensions of `x`, and
/// `predict_noise` returns a latent of its input's shape. All methods are
/// deterministic for identical inputs.
pub trait BackboneAdapter: Send + Sync {
    fn capabilities(&self) -> AdapterCapabilities;
    fn schedule(&self) -> &NoiseSchedule;
    fn encode(&self, image: &Image) -> Result<Latent>;
    fn decode(&self, latent: &Latent) -> Result<Image>;
    fn predict_noise(
        &self,
        latent: &Latent,
        t: usize,
        condition: &PromptCondition,
    ) -> Result<Latent>;
    fn attention_projections(&self) -> AttentionProjections;

    fn downsample_factor(&self) -> usize {
        self.capabilities().downsample_factor
    }
}

/// Deterministic DDIM update from `t` to `t_prev`:
/// `ẑ₀ = (z_t − β_t ε)/α_t`, `z_prev = α_prev ẑ₀ + β_prev ε`.
pub fn ddim_step(
    backbone: &dyn BackboneAdapter,
    latent: &Latent,
    t: usize,
    t_prev: usize,
    condition: &PromptCondition,
) -> Result<Latent> {
    let sched = backbone.schedule();
    sched.check(t)?;
    sched.check(t_prev)?;
    if t_prev > t {
        return Err(Error::Config(format!(
            "ddim_step needs t_prev <= t, got {t_prev} > {t}"
        )));
    }
    if t_prev == t {
        return Ok(latent.clone().with_timestep(t));
    }
    let eps = backbone.predict_noise(latent, t, condition)?;
    check_shape(latent, &eps)?;
    let (a_t, b_t) = (sched.alpha(t)?, sched.beta(t)?);
    let (a_p, b_p) = (sched.alpha(t_prev)?, sched.beta(t_prev)?);
    let data = latent
        .data
        .iter()
        .zip(&eps.data)
        .map(|(&z, &e)| a_p * ((z - b_t * e) / a_t) + b_p * e)
        .collect();
    let out = Latent {
        channels: latent.channels,
        height: latent.height,
        width: latent.width,
        data,
        timestep: t_prev,
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { t: t_prev });
    }
    Ok(out)
}

fn check_shape(a: &Latent, b: &Latent) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "predictor returned {}x{}x{} for a {}x{}x{} latent",
            b.channels, b.height, b.width, a.channels, a.height, a.width
        )))
    }
}

/// Latents visited by an inversion, aligned with their timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timesteps: Vec<usize>,
    pub latents: Vec<Latent>,
}

impl Trajectory {
    pub fn at(&self, t: usize) -> Option<&Latent> {
        self.timesteps
            .iter()
            .position(|&s| s == t)
            .map(|i| &self.latents[i])
    }

    pub fn last(&self) -> &Latent {
        self.latents.last().expect("trajectory is never empty")
    }
}

/// Fixed-point refinement budget for each inversion step.
pub const INVERSION_FIXED_POINT_ITERS: usize = 50;

/// Deterministic DDIM inversion from `t = 0` to `target_t` in `num_steps`
/// steps.
///
/// Each step starts from the usual forward DDIM update (noise predicted at
/// the current timestep) and then solves `ddim_step(z_next, t_next, t) = z_t`
/// by fixed-point iteration, so stepping back along the returned trajectory
/// with the same predictor recovers the start latent.
pub fn ddim_invert(
    backbone: &dyn BackboneAdapter,
    latent0: &Latent,
    target_t: usize,
    num_steps: usize,
    condition: &PromptCondition,
) -> Result<Trajectory> {
    let sched = backbone.schedule();
    let timesteps = sched.timesteps(target_t, num_steps)?;
    let mut latents = vec![latent0.clone().with_timestep(0)];
    for w in timesteps.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        let z = latents.last().expect("non-empty");
        let (a_t, b_t) = (sched.alpha(t)?, sched.beta(t)?);
        let (a_n, b_n) = (sched.alpha(t_next)?, sched.beta(t_next)?);
        let step = |eps: &Latent| -> Vec<f64> {
            z.data
                .iter()
                .zip(&eps.data)
                .map(|(&zv, &e)| a_n * ((zv - b_t * e) / a_t) + b_n * e)
                .collect()
        };
        let eps = backbone.predict_noise(z, t, condition)?;
        check_shape(z, &eps)?;
        let mut next = Latent {
            data: step(&eps),
            timestep: t_next,
            ..z.clone()
        };
        for _ in 0..INVERSION_FIXED_POINT_ITERS {
            let eps = backbone.predict_noise(&next, t_next, condition)?;
            check_shape(z, &eps)?;
            // solve z_t = α_t (z_n − β_n ε)/α_n + β_t ε for z_n
            let data = step(&eps);
            let change = data
                .iter()
                .zip(&next.data)
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            next.data = data;
            if change <= 1e-15 * (1.0 + next.max_abs()) || !change.is_finite() {
                break;
            }
        }
        if !next.is_finite() {
            return Err(Error::NonFinite { t: t_next });
        }
        latents.push(next);
    }
    Ok(Trajectory { timesteps, latents })
}

/// Reverse a trajectory with plain [`ddim_step`]s back to `t = 0`.
pub fn ddim_sample_back(
    backbone: &dyn BackboneAdapter,
    latent: &Latent,
    timesteps: &[usize],
    condition: &PromptCondition,
) -> Result<Latent> {
    let mut z = latent.clone();
    for w in timesteps.windows(2).rev() {
        z = ddim_step(backbone, &z, w[1], w[0], condition)?;
    }
    Ok(z)
}
