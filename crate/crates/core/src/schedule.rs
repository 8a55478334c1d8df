//! Forward-diffusion noise schedule (alpha_t, sigma_t) with alpha^2 + sigma^2 = 1.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::vecmath::check_dim;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// sigma_t = t, alpha_t = sqrt(1 - t^2).
    LinearSigma,
    /// alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2).
    CosineAlpha,
}

/// Variance-preserving schedule over continuous time t in [0, 1], with the
/// timestep sampling range restricted to [t_min, t_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub kind: ScheduleKind,
    pub t_min: f64,
    pub t_max: f64,
}

pub const DEFAULT_T_MIN: f64 = 0.02;
pub const DEFAULT_T_MAX: f64 = 0.98;

impl DiffusionSchedule {
    pub fn new(kind: ScheduleKind, t_min: f64, t_max: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&t_min) {
            return Err(Error::Config(format!("t_min must lie in [0,1), got {t_min}")));
        }
        if !(t_max > t_min && t_max <= 1.0) {
            return Err(Error::Config(format!(
                "t_max must lie in (t_min, 1], got t_min={t_min}, t_max={t_max}"
            )));
        }
        Ok(Self { kind, t_min, t_max })
    }

    pub fn linear_sigma() -> Self {
        Self { kind: ScheduleKind::LinearSigma, t_min: DEFAULT_T_MIN, t_max: DEFAULT_T_MAX }
    }

    /// Returns (alpha_t, sigma_t).
    pub fn at(&self, t: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain(format!("t must lie in [0,1], got {t}")));
        }
        Ok(match self.kind {
            ScheduleKind::LinearSigma => ((1.0 - t * t).max(0.0).sqrt(), t),
            ScheduleKind::CosineAlpha => ((FRAC_PI_2 * t).cos(), (FRAC_PI_2 * t).sin()),
        })
    }

    /// x_t = alpha_t * x + sigma_t * eps.
    pub fn perturb(&self, x: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>> {
        check_dim(x.len(), eps.len(), "perturb noise")?;
        let (alpha, sigma) = self.at(t)?;
        Ok(x.iter().zip(eps).map(|(xi, ei)| alpha * xi + sigma * ei).collect())
    }

    /// Uniform draw on [t_min, t_max].
    pub fn sample_timestep<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.t_min + u * (self.t_max - self.t_min)
    }
}
