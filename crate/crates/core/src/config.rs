//! The experiment file format: a single JSON document describing the world,
//! schedule, generator, and exactly one experiment stanza. Parsing fills
//! defaults; `resolve` turns the document into executable configuration and
//! performs every static check that `run` itself would perform.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::distill::RuleConfig;
use crate::generator::{random_orthonormal_cameras, Camera, Generator};
use crate::presets::{world_preset, PRESET_NAMES};
use crate::runner::{Optimizer, RunConfig, ThetaInit};
use crate::schedule::{DiffusionSchedule, ScheduleKind, DEFAULT_T_MAX, DEFAULT_T_MIN};
use crate::world::{GaussianComponent, Mixture, World};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// One weighted Gaussian component as written in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub prompt: String,
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorldSpec {
    /// A built-in world by name.
    Preset(String),
    Inline {
        classes: Vec<ClassSpec>,
        /// Uniform when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior: Option<Vec<f64>>,
    },
}

impl WorldSpec {
    pub fn build(&self) -> Result<World> {
        match self {
            WorldSpec::Preset(name) => world_preset(name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown world preset `{name}`; available: {}",
                    PRESET_NAMES.join(", ")
                ))
            }),
            WorldSpec::Inline { classes, prior } => {
                let mut prompts = Vec::with_capacity(classes.len());
                let mut mixtures = Vec::with_capacity(classes.len());
                for class in classes {
                    prompts.push(class.prompt.clone());
                    let comps: Vec<GaussianComponent> = class
                        .components
                        .iter()
                        .map(|c| GaussianComponent::new(c.mean.clone(), c.var.clone()))
                        .collect::<Result<_>>()?;
                    let total: f64 = class.components.iter().map(|c| c.weight).sum();
                    if total <= 0.0 {
                        return Err(Error::Config(format!(
                            "class `{}` component weights must have a positive sum",
                            class.prompt
                        )));
                    }
                    let weights =
                        class.components.iter().map(|c| c.weight / total).collect();
                    mixtures.push(Mixture::new(comps, weights)?);
                }
                match prior {
                    Some(p) => World::new(prompts, mixtures, p.clone()),
                    None => World::uniform_prior(prompts, mixtures),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_min() -> f64 {
    DEFAULT_T_MIN
}
fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { kind: ScheduleKind::LinearSigma, t_min: DEFAULT_T_MIN, t_max: DEFAULT_T_MAX }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.kind, self.t_min, self.t_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorSpec {
    /// "identity" or "random-orthonormal:<count>".
    Preset(String),
    Explicit { cameras: Vec<Camera> },
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Preset("identity".into())
    }
}

impl GeneratorSpec {
    /// `dim` is the world dimension; `seed` drives the random preset.
    pub fn build(&self, dim: usize, seed: u64) -> Result<Generator> {
        match self {
            GeneratorSpec::Preset(name) => {
                if name == "identity" {
                    return Ok(Generator::identity(dim));
                }
                if let Some(count) = name.strip_prefix("random-orthonormal:") {
                    let count: usize = count.parse().map_err(|_| {
                        Error::Config(format!(
                            "generator preset `{name}` needs an integer camera count"
                        ))
                    })?;
                    return Ok(Generator::affine(random_orthonormal_cameras(
                        dim, count, seed,
                    )?)?);
                }
                Err(Error::Config(format!(
                    "unknown generator preset `{name}`; use `identity`, \
                     `random-orthonormal:<count>`, or explicit cameras"
                )))
            }
            GeneratorSpec::Explicit { cameras } => {
                for c in cameras {
                    Camera::new(c.matrix.clone(), c.offset.clone())?;
                }
                Generator::affine(cameras.clone())
            }
        }
    }
}

/// The run-shaped part shared by every stanza.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub rule: RuleConfig,
    pub steps: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub theta_init: ThetaInit,
}

fn default_optimizer() -> Optimizer {
    Optimizer::adam_default()
}
fn default_log_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(flatten)]
    pub base: RunSpec,
    pub omegas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditSpec {
    #[serde(flatten)]
    pub source: RunSpec,
    pub target: String,
    pub edit: String,
    #[serde(default = "default_w1")]
    pub w1: f64,
    #[serde(default = "default_w2")]
    pub w2: f64,
}

fn default_w1() -> f64 {
    1.0
}
fn default_w2() -> f64 {
    0.5
}

/// The whole experiment file. Exactly one stanza must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub world: WorldSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub generator: GeneratorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal: Option<RunSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradnorm: Option<RunSpec>,
    pub output_dir: PathBuf,
}

/// Which experiment the file requests.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentKind {
    Run,
    Sweep { omegas: Vec<f64> },
    Anneal,
    Edit { target: String, edit: String, w1: f64, w2: f64 },
    GradNorm,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::Sweep { .. } => "sweep",
            ExperimentKind::Anneal => "anneal",
            ExperimentKind::Edit { .. } => "edit",
            ExperimentKind::GradNorm => "gradnorm",
        }
    }
}

/// Executable form of an experiment file, fully validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub base: RunConfig,
    pub kind: ExperimentKind,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parse a JSON document; errors carry serde's line:column anchor.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// The document with every default filled in.
    pub fn resolved_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn stanza(&self) -> Result<(&RunSpec, ExperimentKind)> {
        let present: Vec<&str> = [
            ("run", self.run.is_some()),
            ("sweep", self.sweep.is_some()),
            ("anneal", self.anneal.is_some()),
            ("edit", self.edit.is_some()),
            ("gradnorm", self.gradnorm.is_some()),
        ]
        .iter()
        .filter(|(_, p)| *p)
        .map(|(n, _)| *n)
        .collect();
        if present.len() != 1 {
            return Err(Error::Config(format!(
                "exactly one of run/sweep/anneal/edit/gradnorm must be present, found {}",
                if present.is_empty() { "none".to_string() } else { present.join(" and ") }
            )));
        }
        Ok(if let Some(r) = &self.run {
            (r, ExperimentKind::Run)
        } else if let Some(s) = &self.sweep {
            (&s.base, ExperimentKind::Sweep { omegas: s.omegas.clone() })
        } else if let Some(a) = &self.anneal {
            (a, ExperimentKind::Anneal)
        } else if let Some(e) = &self.edit {
            (
                &e.source,
                ExperimentKind::Edit {
                    target: e.target.clone(),
                    edit: e.edit.clone(),
                    w1: e.w1,
                    w2: e.w2,
                },
            )
        } else {
            (self.gradnorm.as_ref().expect("checked"), ExperimentKind::GradNorm)
        })
    }

    /// Static validation, complete with respect to what execution checks.
    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {}, expected {CONFIG_VERSION}",
                self.version
            )));
        }
        let world = self.world.build()?;
        let schedule = self.schedule.build()?;
        let (spec, kind) = self.stanza()?;
        let generator = self.generator.build(world.dim(), spec.seed)?;
        let base = RunConfig {
            world,
            schedule,
            generator,
            rule: spec.rule.clone(),
            steps: spec.steps,
            optimizer: spec.optimizer,
            seed: spec.seed,
            log_every: spec.log_every,
            theta_init: spec.theta_init.clone(),
        };
        base.validate()?;
        match &kind {
            ExperimentKind::Sweep { omegas } => {
                if omegas.is_empty() {
                    return Err(Error::Config("sweep needs a nonempty omega list".into()));
                }
            }
            ExperimentKind::Edit { target, edit, w1, w2 } => {
                base.world.class_mixture(target).map(|_| ())?;
                base.world.class_mixture(edit).map(|_| ())?;
                if *w1 < 0.0 || *w2 < 0.0 {
                    return Err(Error::Config("edit weights must be nonnegative".into()));
                }
            }
            ExperimentKind::Anneal => {
                if base.rule.kind != crate::distill::RuleKind::CsdNeg {
                    return Err(Error::Config(
                        "anneal stanza requires the csd-neg rule".into(),
                    ));
                }
            }
            ExperimentKind::GradNorm => {
                if base.rule.kind != crate::distill::RuleKind::Sds {
                    return Err(Error::Config("gradnorm stanza requires the sds rule".into()));
                }
            }
            ExperimentKind::Run => {}
        }
        Ok(ResolvedExperiment { base, kind, output_dir: self.output_dir.clone() })
    }
}
