use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cumulative signal coefficients `ᾱ_t` for `t = 0..=t_max`, with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

pub const DEFAULT_T_MAX: usize = 1000;

impl NoiseSchedule {
    /// Variance schedule linear in `β` from `beta_start` to `beta_end` over
    /// `t = 1..=t_max`; `ᾱ_t = Π_{s ≤ t} (1 − β_s)`.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 {
            return Err(Error::Config("schedule needs t_max >= 1".into()));
        }
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 1..=t_max {
            let frac = if t_max == 1 {
                0.0
            } else {
                (s - 1) as f64 / (t_max - 1) as f64
            };
            let beta = beta_start + (beta_end - beta_start) * frac;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::Config("schedule needs at least two entries".into()));
        }
        if alpha_bar[0] != 1.0 {
            return Err(Error::Config(format!(
                "alpha_bar[0] must be 1, got {}",
                alpha_bar[0]
            )));
        }
        for (t, w) in alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(Error::Config(format!(
                    "alpha_bar must be strictly decreasing in (0, 1]; violated at t={}",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar })
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check(&self, t: usize) -> Result<()> {
        if t > self.t_max() {
            Err(Error::Schedule {
                t,
                t_max: self.t_max(),
            })
        } else {
            Ok(())
        }
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bar[t])
    }

    /// Signal coefficient `√ᾱ_t`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar(t)?.sqrt())
    }

    /// Noise coefficient `√(1 − ᾱ_t)`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }

    /// Evenly spaced timesteps `0 = t_0 < … < t_n = target`.
    pub fn timesteps(&self, target: usize, num_steps: usize) -> Result<Vec<usize>> {
        self.check(target)?;
        if target == 0 || num_steps == 0 {
            return Ok(vec![0]);
        }
        let mut ts: Vec<usize> = (0..=num_steps)
            .map(|k| ((k * target) as f64 / num_steps as f64).round() as usize)
            .collect();
        ts.dedup();
        Ok(ts)
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_T_MAX, 1e-4, 0.02).expect("default schedule is valid")
    }
}
