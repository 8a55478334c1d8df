//! Score-distillation laboratory on analytic Gaussian-mixture worlds.
//!
//! Every diffusion-model quantity used by the gradient rules (noise
//! prediction, score, implicit classifier) is computed in closed form from
//! class-conditional Gaussian mixtures, so the distillation rules can be
//! cross-checked against exact oracles instead of a trained network.

pub mod config;
pub mod distill;
pub mod error;
pub mod generator;
pub mod presets;
pub mod runner;
pub mod schedule;
pub mod vecmath;
pub mod world;

pub use error::{Error, Result};
pub use schedule::{DiffusionSchedule, ScheduleKind};
pub use world::{GaussianComponent, Mixture, World};
