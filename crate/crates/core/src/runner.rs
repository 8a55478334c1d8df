//! The optimization loop, trajectory logging, and the diagnostic experiments
//! built on top of it (gradient-norm tracking, omega sweeps, annealing and
//! editing comparisons).

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distill::{
    rule_delta, DdsReference, RuleConfig, RuleKind, RuleState, VsdSurrogate, WeightSchedule,
    COMP_DELTA_CLS_NEG, COMP_DELTA_CLS_POS, COMP_DELTA_GEN,
};
use crate::generator::Generator;
use crate::schedule::DiffusionSchedule;
use crate::vecmath::{all_finite, axpy, norm};
use crate::world::World;
use crate::{Error, Result};

pub const VSD_DEFAULT_FIT_WINDOW: usize = 64;
pub const VSD_DEFAULT_REFRESH_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Gd {
        lr: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps_hat")]
        eps_hat: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.99
}
fn default_eps_hat() -> f64 {
    1e-8
}

impl Optimizer {
    pub fn adam_default() -> Self {
        Optimizer::Adam { lr: 0.01, beta1: 0.9, beta2: 0.99, eps_hat: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Gd { lr } | Optimizer::Adam { lr, .. } => *lr,
        }
    }
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl OptState {
    fn new(p: usize) -> Self {
        Self { m: vec![0.0; p], v: vec![0.0; p], step: 0 }
    }

    fn update(&mut self, opt: &Optimizer, theta: &mut [f64], grad: &[f64]) {
        match *opt {
            Optimizer::Gd { lr } => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * g;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps_hat } => {
                self.step += 1;
                let k = self.step as i32;
                let bc1 = 1.0 - beta1.powi(k);
                let bc2 = 1.0 - beta2.powi(k);
                for ((t, g), (m, v)) in
                    theta.iter_mut().zip(grad).zip(self.m.iter_mut().zip(&mut self.v))
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *t -= lr * mh / (vh.sqrt() + eps_hat);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaPreset {
    Zeros,
    /// Pooled-distribution mean, the hardest symmetric start.
    UncondMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaInit {
    Preset(ThetaPreset),
    SampleFrom { sample_from: String },
    Explicit { explicit: Vec<f64> },
}

impl Default for ThetaInit {
    fn default() -> Self {
        ThetaInit::Preset(ThetaPreset::Zeros)
    }
}

/// Full description of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub world: World,
    pub schedule: DiffusionSchedule,
    pub generator: Generator,
    pub rule: RuleConfig,
    pub steps: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub log_every: usize,
    pub theta_init: ThetaInit,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be > 0".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be > 0".into()));
        }
        if self.optimizer.lr() < 0.0 {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if self.world.dim() != self.generator.dim_render() {
            return Err(Error::Config(format!(
                "world dimension {} does not match generator render dimension {}",
                self.world.dim(),
                self.generator.dim_render()
            )));
        }
        self.rule.validate()?;
        self.world.class_mixture(&self.rule.prompt).map(|_| ())?;
        if let Some(neg) = &self.rule.neg_prompt {
            self.world.class_mixture(neg).map(|_| ())?;
        }
        match &self.theta_init {
            ThetaInit::Explicit { explicit } => {
                if explicit.len() != self.generator.dim_params() {
                    return Err(Error::Config(format!(
                        "explicit theta has dimension {}, generator expects {}",
                        explicit.len(),
                        self.generator.dim_params()
                    )));
                }
            }
            ThetaInit::SampleFrom { sample_from } => {
                self.world.class_mixture(sample_from).map(|_| ())?;
                if self.generator.dim_params() != self.world.dim() {
                    return Err(Error::Config(
                        "sample-from init requires parameter dim == world dim".into(),
                    ));
                }
            }
            ThetaInit::Preset(ThetaPreset::UncondMean) => {
                if self.generator.dim_params() != self.world.dim() {
                    return Err(Error::Config(
                        "uncond-mean init requires parameter dim == world dim".into(),
                    ));
                }
            }
            ThetaInit::Preset(ThetaPreset::Zeros) => {}
        }
        Ok(())
    }

    fn resolve_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        Ok(match &self.theta_init {
            ThetaInit::Preset(ThetaPreset::Zeros) => vec![0.0; self.generator.dim_params()],
            ThetaInit::Preset(ThetaPreset::UncondMean) => self.world.pooled().mean(),
            ThetaInit::SampleFrom { sample_from } => {
                self.world.class_mixture(sample_from)?.sample(rng)
            }
            ThetaInit::Explicit { explicit } => explicit.clone(),
        })
    }
}

/// One logged step. Norm fields are absent when the rule has no such term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub t: f64,
    pub camera: usize,
    pub norm_delta_gen: Option<f64>,
    pub norm_delta_cls_pos: Option<f64>,
    pub norm_delta_cls_neg: Option<f64>,
    pub norm_total: f64,
    pub clf_logprob: f64,
    pub omega2: Option<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrajectoryLog {
    pub rows: Vec<LogRow>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrajectoryLog {
    /// Fixed-header CSV; byte-deterministic for a given run.
    pub fn to_csv(&self, p: usize) -> String {
        let mut out = String::from("step,t,camera,norm_delta_gen,norm_delta_cls_pos,norm_delta_cls_neg,norm_total,clf_logprob,omega2");
        for i in 0..p {
            out.push_str(&format!(",theta_{i}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}",
                r.step,
                r.t,
                r.camera,
                fmt_opt(r.norm_delta_gen),
                fmt_opt(r.norm_delta_cls_pos),
                fmt_opt(r.norm_delta_cls_neg),
                r.norm_total,
                r.clf_logprob,
                fmt_opt(r.omega2),
            ));
            for v in &r.theta {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_theta: Vec<f64>,
    pub final_renders: Vec<Vec<f64>>,
    /// (prompt, probability) per prompt; a valid distribution.
    pub clf_probs: Vec<(String, f64)>,
    pub trajectory: TrajectoryLog,
    pub wall_time_ms: u64,
}

impl RunResult {
    pub fn prob(&self, prompt: &str) -> Option<f64> {
        self.clf_probs.iter().find(|(p, _)| p == prompt).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let probs: serde_json::Map<String, serde_json::Value> = self
            .clf_probs
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "final_theta": self.final_theta,
            "final_renders": self.final_renders,
            "clf_probs": probs,
            "wall_time_ms": self.wall_time_ms,
        })
    }
}

/// Classifier probabilities of a parameter state, averaged over cameras,
/// evaluated at the small-t floor of the schedule.
fn state_probs(cfg: &RunConfig, theta: &[f64]) -> Result<Vec<(String, f64)>> {
    let t_eval = cfg.schedule.t_min;
    let n = cfg.generator.n_cameras();
    let mut acc = vec![0.0; cfg.world.prompts().len()];
    for c in 0..n {
        let x = cfg.generator.render(theta, c)?;
        let probs = cfg.world.classifier_probs(&cfg.schedule, &x, t_eval)?;
        axpy(&mut acc, 1.0 / n as f64, &probs);
    }
    Ok(cfg.world.prompts().iter().cloned().zip(acc).collect())
}

/// Execute one run. Deterministic: identical config and seed produce an
/// identical trajectory and result.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let d = cfg.world.dim();
    let p = cfg.generator.dim_params();
    let mut theta = cfg.resolve_theta(&mut rng)?;
    if theta.len() != p {
        return Err(Error::Config("resolved theta has wrong dimension".into()));
    }

    let dds_ref = if cfg.rule.kind.needs_dds_reference() {
        let y_hat = cfg.rule.neg_prompt.clone().expect("validated");
        Some(DdsReference { x_hat: cfg.generator.render(&theta, 0)?, y_hat })
    } else {
        None
    };

    let mut surrogate = if cfg.rule.kind == RuleKind::Vsd {
        Some(VsdSurrogate {
            mean: vec![0.0; d],
            var: vec![1.0; d],
            fit_window: VSD_DEFAULT_FIT_WINDOW,
            refresh_every: VSD_DEFAULT_REFRESH_EVERY,
        })
    } else {
        None
    };
    let mut render_buf: VecDeque<Vec<f64>> = VecDeque::new();

    let mut opt_state = OptState::new(p);
    let mut log = TrajectoryLog::default();
    let t_eval = cfg.schedule.t_min;

    for i in 0..cfg.steps {
        let progress = i as f64 / cfg.steps as f64;
        let t = cfg.schedule.sample_timestep(&mut rng);
        let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let camera = rng.random_range(0..cfg.generator.n_cameras());
        let x = cfg.generator.render(&theta, camera)?;

        if let Some(sur) = surrogate.as_mut() {
            render_buf.push_back(x.clone());
            while render_buf.len() > sur.fit_window {
                render_buf.pop_front();
            }
            if i % sur.refresh_every == 0 {
                let window: Vec<Vec<f64>> = render_buf.iter().cloned().collect();
                *sur = sur.fit(&window)?;
            }
        }

        let x_t = cfg.schedule.perturb(&x, t, &eps)?;
        let state = RuleState {
            world: &cfg.world,
            schedule: &cfg.schedule,
            x_t: &x_t,
            t,
            eps: &eps,
            progress,
            surrogate: surrogate.as_ref(),
            dds_ref: dds_ref.as_ref(),
        };
        let delta = rule_delta(&cfg.rule, &state)?;
        let grad = cfg.generator.pullback(camera, &delta.total)?;
        opt_state.update(&cfg.optimizer, &mut theta, &grad);
        if !all_finite(&theta) {
            return Err(Error::Diverged { step: i });
        }

        if i % cfg.log_every == 0 {
            let render_now = cfg.generator.render(&theta, camera)?;
            let clf_logprob =
                cfg.world.classifier_logprob(&cfg.schedule, &render_now, t_eval, &cfg.rule.prompt)?;
            log.rows.push(LogRow {
                step: i,
                t,
                camera,
                norm_delta_gen: delta.term(COMP_DELTA_GEN).map(|tm| norm(&tm.vector)),
                norm_delta_cls_pos: delta.term(COMP_DELTA_CLS_POS).map(|tm| norm(&tm.vector)),
                norm_delta_cls_neg: delta.term(COMP_DELTA_CLS_NEG).map(|tm| norm(&tm.vector)),
                norm_total: norm(&delta.total),
                clf_logprob,
                omega2: delta.omega2,
                theta: theta.clone(),
            });
        }
    }

    let final_renders: Vec<Vec<f64>> = (0..cfg.generator.n_cameras())
        .map(|c| cfg.generator.render(&theta, c))
        .collect::<Result<_>>()?;
    let clf_probs = state_probs(cfg, &theta)?;
    Ok(RunResult {
        final_theta: theta,
        final_renders,
        clf_probs,
        trajectory: log,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradNormRow {
    pub step: usize,
    pub norm_gen: f64,
    pub norm_cls: f64,
    pub running_mean_gen: f64,
    pub running_mean_cls: f64,
}

/// Per-step norms of the generative and classifier terms of SDS, with the
/// mean-norm ratio. The ratio is +inf when the classifier norms are all zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradNormTable {
    pub rows: Vec<GradNormRow>,
    pub mean_gen: f64,
    pub mean_cls: f64,
    pub ratio: f64,
}

impl GradNormTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("step,norm_delta_gen,norm_delta_cls,running_mean_gen,running_mean_cls\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.step, r.norm_gen, r.norm_cls, r.running_mean_gen, r.running_mean_cls
            ));
        }
        out
    }
}

/// Run SDS and track the norms of its two components.
pub fn gradient_norm_experiment(cfg: &RunConfig) -> Result<(RunResult, GradNormTable)> {
    if cfg.rule.kind != RuleKind::Sds {
        return Err(Error::Config(format!(
            "gradient-norm experiment requires the SDS rule, got {:?}",
            cfg.rule.kind
        )));
    }
    let result = run(cfg)?;
    let mut rows = Vec::with_capacity(result.trajectory.rows.len());
    let mut sum_gen = 0.0;
    let mut sum_cls = 0.0;
    for (k, r) in result.trajectory.rows.iter().enumerate() {
        let g = r.norm_delta_gen.expect("SDS logs delta_gen");
        let c = r.norm_delta_cls_pos.expect("SDS logs delta_cls");
        sum_gen += g;
        sum_cls += c;
        rows.push(GradNormRow {
            step: r.step,
            norm_gen: g,
            norm_cls: c,
            running_mean_gen: sum_gen / (k + 1) as f64,
            running_mean_cls: sum_cls / (k + 1) as f64,
        });
    }
    let n = rows.len().max(1) as f64;
    let mean_gen = sum_gen / n;
    let mean_cls = sum_cls / n;
    let ratio = if mean_cls == 0.0 { f64::INFINITY } else { mean_gen / mean_cls };
    Ok((result, GradNormTable { rows, mean_gen, mean_cls, ratio }))
}

/// One run per guidance weight, identical seeds, all else fixed.
pub fn omega_sweep(base: &RunConfig, omegas: &[f64]) -> Result<Vec<RunResult>> {
    if omegas.is_empty() {
        return Err(Error::Config("omega sweep needs a nonempty weight list".into()));
    }
    omegas
        .iter()
        .map(|&omega| {
            let mut cfg = base.clone();
            cfg.rule.omega = omega;
            run(&cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealOutcome {
    pub fixed: RunResult,
    pub annealed: RunResult,
}

/// Constant omega2 versus a linear decay to zero, identical seeds.
pub fn anneal_comparison(base: &RunConfig) -> Result<AnnealOutcome> {
    if base.rule.kind != RuleKind::CsdNeg {
        return Err(Error::Config(format!(
            "anneal comparison requires the negative-prompt CSD rule, got {:?}",
            base.rule.kind
        )));
    }
    let start = base.rule.omega2_schedule.start;
    let mut fixed_cfg = base.clone();
    fixed_cfg.rule.omega2_schedule = WeightSchedule::constant(start);
    let mut annealed_cfg = base.clone();
    annealed_cfg.rule.omega2_schedule = WeightSchedule::linear_decay(start, 0.0);
    Ok(AnnealOutcome { fixed: run(&fixed_cfg)?, annealed: run(&annealed_cfg)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    /// Classifier probabilities of the source parameters before editing.
    pub probs_before: Vec<(String, f64)>,
    pub result: RunResult,
}

/// Continue optimization from the source parameters under the editing rule,
/// with (y_target, y_edit) = (target, edit) and weights (w1, w2).
pub fn edit_experiment(
    source: &RunConfig,
    target: &str,
    edit: &str,
    w1: f64,
    w2: f64,
) -> Result<EditOutcome> {
    source.world.class_mixture(target).map(|_| ())?;
    source.world.class_mixture(edit).map(|_| ())?;
    let mut rng = ChaCha12Rng::seed_from_u64(source.seed);
    let theta0 = source.resolve_theta(&mut rng)?;
    let mut cfg = source.clone();
    cfg.rule = RuleConfig {
        kind: RuleKind::CsdEdit,
        omega: source.rule.omega,
        omega1: w1,
        omega2_schedule: WeightSchedule::constant(w2),
        prompt: target.to_string(),
        neg_prompt: Some(edit.to_string()),
        w_of_t: source.rule.w_of_t,
    };
    cfg.theta_init = ThetaInit::Explicit { explicit: theta0.clone() };
    let probs_before = state_probs(&cfg, &theta0)?;
    let result = run(&cfg)?;
    Ok(EditOutcome { probs_before, result })
}
