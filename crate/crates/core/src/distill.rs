//! Image-space gradient rules and the surrogate denoiser used by the
//! variational rule. Each rule reports its additive terms by name so the
//! decomposition diagnostics can reuse them instead of recomputing.

use serde::{Deserialize, Serialize};

use crate::schedule::DiffusionSchedule;
use crate::vecmath::{axpy, check_dim, sub};
use crate::world::World;
use crate::{Error, Result};

/// Fixed component names used in logs.
pub const COMP_DELTA_GEN: &str = "delta_gen";
pub const COMP_DELTA_CLS_POS: &str = "delta_cls_pos";
pub const COMP_DELTA_CLS_NEG: &str = "delta_cls_neg";
pub const COMP_DELTA_VSD_RESIDUAL: &str = "delta_vsd_residual";
pub const COMP_DDS_REF_TERM: &str = "dds_ref_term";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Sds,
    Csd,
    CsdNeg,
    CsdEdit,
    Vsd,
    Dds,
    DdsNoCls,
    CsdOnlyFromDds,
}

impl RuleKind {
    /// Kinds whose second prompt slot (y_neg / y_edit / y_hat) is required.
    pub fn needs_neg_prompt(self) -> bool {
        matches!(
            self,
            RuleKind::CsdNeg
                | RuleKind::CsdEdit
                | RuleKind::Dds
                | RuleKind::DdsNoCls
                | RuleKind::CsdOnlyFromDds
        )
    }

    pub fn needs_dds_reference(self) -> bool {
        matches!(self, RuleKind::Dds | RuleKind::DdsNoCls | RuleKind::CsdOnlyFromDds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheduleKind {
    Constant,
    LinearDecay,
    CosineDecay,
}

/// Weight as a function of normalized optimization progress u in [0, 1];
/// value(0) = start, value(1) = end, monotone between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSchedule {
    pub kind: WeightScheduleKind,
    pub start: f64,
    #[serde(default)]
    pub end: f64,
}

impl WeightSchedule {
    pub fn constant(value: f64) -> Self {
        Self { kind: WeightScheduleKind::Constant, start: value, end: value }
    }

    pub fn linear_decay(start: f64, end: f64) -> Self {
        Self { kind: WeightScheduleKind::LinearDecay, start, end }
    }

    pub fn value(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            WeightScheduleKind::Constant => self.start,
            WeightScheduleKind::LinearDecay => self.start + (self.end - self.start) * u,
            WeightScheduleKind::CosineDecay => {
                self.end + (self.start - self.end) * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeWeight {
    One,
    SigmaSq,
}

impl TimeWeight {
    pub fn value(self, sigma: f64) -> f64 {
        match self {
            TimeWeight::One => 1.0,
            TimeWeight::SigmaSq => sigma * sigma,
        }
    }
}

/// A named gradient rule with its weights and schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub kind: RuleKind,
    /// CFG scale for SDS / VSD / the DDS family.
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Positive-prompt weight for the dual-classifier rules.
    #[serde(default = "default_omega1")]
    pub omega1: f64,
    /// Negative-prompt weight schedule for the dual-classifier rules.
    #[serde(default = "default_omega2")]
    pub omega2_schedule: WeightSchedule,
    pub prompt: String,
    /// y_neg, y_edit, or y_hat depending on the kind.
    #[serde(default)]
    pub neg_prompt: Option<String>,
    #[serde(default = "default_w_of_t")]
    pub w_of_t: TimeWeight,
}

fn default_omega() -> f64 {
    40.0
}
fn default_omega1() -> f64 {
    1.0
}
fn default_omega2() -> WeightSchedule {
    WeightSchedule::constant(0.5)
}
fn default_w_of_t() -> TimeWeight {
    TimeWeight::One
}

impl RuleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.omega < 0.0 || self.omega1 < 0.0 {
            return Err(Error::Config("guidance weights must be nonnegative".into()));
        }
        if self.kind.needs_neg_prompt() != self.neg_prompt.is_some() {
            return Err(Error::Config(format!(
                "rule {:?} {} a second prompt label",
                self.kind,
                if self.kind.needs_neg_prompt() { "requires" } else { "does not take" }
            )));
        }
        Ok(())
    }
}

/// Variance floor applied to the surrogate fit.
pub const VSD_VARIANCE_FLOOR: f64 = 1e-4;

/// Moment-matched Gaussian standing in for the concurrently trained surrogate
/// denoiser: the exact minimizer of the noise-prediction objective restricted
/// to a single-Gaussian data model over recent renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsdSurrogate {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub fit_window: usize,
    pub refresh_every: usize,
}

impl VsdSurrogate {
    /// Refit from the most recent renders (sample mean, floored sample variance).
    pub fn fit(&self, recent_renders: &[Vec<f64>]) -> Result<VsdSurrogate> {
        let n = recent_renders.len();
        if n == 0 {
            return Err(Error::State("surrogate fit window is empty".into()));
        }
        let d = recent_renders[0].len();
        let mut mean = vec![0.0; d];
        for r in recent_renders {
            check_dim(d, r.len(), "surrogate fit render")?;
            axpy(&mut mean, 1.0, r);
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in recent_renders {
            for (v, (x, m)) in var.iter_mut().zip(r.iter().zip(&mean)) {
                let dmm = x - m;
                *v += dmm * dmm;
            }
        }
        for v in &mut var {
            *v = (*v / n as f64).max(VSD_VARIANCE_FLOOR);
        }
        Ok(VsdSurrogate { mean, var, ..*self })
    }

    /// Closed-form optimal denoiser of the fitted Gaussian:
    /// -sigma_t * score of N(alpha_t mean, alpha_t^2 var + sigma_t^2) at x_t.
    pub fn eps(&self, s: &DiffusionSchedule, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.mean.len(), x_t.len(), "surrogate query")?;
        let (alpha, sigma) = s.at(t)?;
        if sigma == 0.0 {
            return Err(Error::Domain("surrogate eps is degenerate at sigma_t=0".into()));
        }
        Ok(x_t
            .iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(x, (m, v))| {
                let var_t = alpha * alpha * v + sigma * sigma;
                sigma * (x - alpha * m) / var_t
            })
            .collect())
    }
}

/// Frozen editing reference: the initial render and its source prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdsReference {
    pub x_hat: Vec<f64>,
    pub y_hat: String,
}

/// Everything a rule may consume at one optimization step.
pub struct RuleState<'a> {
    pub world: &'a World,
    pub schedule: &'a DiffusionSchedule,
    pub x_t: &'a [f64],
    pub t: f64,
    pub eps: &'a [f64],
    /// Normalized optimization progress in [0, 1].
    pub progress: f64,
    pub surrogate: Option<&'a VsdSurrogate>,
    pub dds_ref: Option<&'a DdsReference>,
}

/// One additive term of a rule output.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub name: &'static str,
    pub coeff: f64,
    pub vector: Vec<f64>,
}

/// Rule output: the total gradient applied in render space, plus the named
/// additive terms it was summed from.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleDelta {
    pub total: Vec<f64>,
    pub terms: Vec<Term>,
    /// w(t) factor applied to the total.
    pub time_weight: f64,
    /// Negative-prompt weight in effect this step, when the rule has one.
    pub omega2: Option<f64>,
}

impl RuleDelta {
    pub fn term(&self, name: &str) -> Option<&Term> {
        self.terms.iter().find(|t| t.name == name)
    }

    fn assemble(terms: Vec<Term>, time_weight: f64, omega2: Option<f64>, dim: usize) -> RuleDelta {
        let mut total = vec![0.0; dim];
        for t in &terms {
            axpy(&mut total, t.coeff, &t.vector);
        }
        for v in &mut total {
            *v *= time_weight;
        }
        RuleDelta { total, terms, time_weight, omega2 }
    }
}

/// eps_pred(x_t; y, t) - eps.
pub fn delta_gen(
    world: &World,
    s: &DiffusionSchedule,
    x_t: &[f64],
    y: &str,
    t: f64,
    eps: &[f64],
) -> Result<Vec<f64>> {
    check_dim(x_t.len(), eps.len(), "delta_gen noise")?;
    Ok(sub(&world.eps_pred(s, x_t, Some(y), t)?, eps))
}

/// eps_pred(x_t; y, t) - eps_pred(x_t; t), the classifier score.
pub fn delta_cls(
    world: &World,
    s: &DiffusionSchedule,
    x_t: &[f64],
    y: &str,
    t: f64,
) -> Result<Vec<f64>> {
    Ok(sub(&world.eps_pred(s, x_t, Some(y), t)?, &world.eps_pred(s, x_t, None, t)?))
}

/// Evaluate a rule at one step. Components are computed once and summed, so
/// the decomposition identities hold exactly on the returned terms.
pub fn rule_delta(rule: &RuleConfig, st: &RuleState) -> Result<RuleDelta> {
    rule.validate()?;
    let (_, sigma) = st.schedule.at(st.t)?;
    let w_t = rule.w_of_t.value(sigma);
    let dim = st.x_t.len();
    let y = rule.prompt.as_str();
    let neg = rule.neg_prompt.as_deref();

    let delta = match rule.kind {
        RuleKind::Sds => {
            let dg = delta_gen(st.world, st.schedule, st.x_t, y, st.t, st.eps)?;
            let dc = delta_cls(st.world, st.schedule, st.x_t, y, st.t)?;
            RuleDelta::assemble(
                vec![
                    Term { name: COMP_DELTA_GEN, coeff: 1.0, vector: dg },
                    Term { name: COMP_DELTA_CLS_POS, coeff: rule.omega, vector: dc },
                ],
                w_t,
                None,
                dim,
            )
        }
        RuleKind::Csd => {
            let dc = delta_cls(st.world, st.schedule, st.x_t, y, st.t)?;
            RuleDelta::assemble(
                vec![Term { name: COMP_DELTA_CLS_POS, coeff: 1.0, vector: dc }],
                w_t,
                None,
                dim,
            )
        }
        RuleKind::CsdNeg | RuleKind::CsdEdit => {
            let y2 = neg.expect("validated");
            let omega2 = rule.omega2_schedule.value(st.progress);
            let dc_pos = delta_cls(st.world, st.schedule, st.x_t, y, st.t)?;
            let dc_neg = delta_cls(st.world, st.schedule, st.x_t, y2, st.t)?;
            RuleDelta::assemble(
                vec![
                    Term { name: COMP_DELTA_CLS_POS, coeff: rule.omega1, vector: dc_pos },
                    Term { name: COMP_DELTA_CLS_NEG, coeff: -omega2, vector: dc_neg },
                ],
                w_t,
                Some(omega2),
                dim,
            )
        }
        RuleKind::Vsd => {
            let sur = st.surrogate.ok_or_else(|| {
                Error::Config("VSD rule requires a fitted surrogate".into())
            })?;
            let eps_cond = st.world.eps_pred(st.schedule, st.x_t, Some(y), st.t)?;
            let residual = sub(&eps_cond, &sur.eps(st.schedule, st.x_t, st.t)?);
            let dc = delta_cls(st.world, st.schedule, st.x_t, y, st.t)?;
            RuleDelta::assemble(
                vec![
                    Term { name: COMP_DELTA_VSD_RESIDUAL, coeff: 1.0, vector: residual },
                    Term { name: COMP_DELTA_CLS_POS, coeff: rule.omega, vector: dc },
                ],
                w_t,
                None,
                dim,
            )
        }
        RuleKind::Dds | RuleKind::DdsNoCls | RuleKind::CsdOnlyFromDds => {
            let r = st.dds_ref.ok_or_else(|| {
                Error::Config("DDS-family rules require a captured reference".into())
            })?;
            let dc_pos = delta_cls(st.world, st.schedule, st.x_t, y, st.t)?;
            if rule.kind == RuleKind::CsdOnlyFromDds {
                RuleDelta::assemble(
                    vec![Term { name: COMP_DELTA_CLS_POS, coeff: rule.omega, vector: dc_pos }],
                    w_t,
                    None,
                    dim,
                )
            } else {
                // Reference branch shares (t, eps) with the live branch.
                let x_hat_t = st.schedule.perturb(&r.x_hat, st.t, st.eps)?;
                let dg = delta_gen(st.world, st.schedule, st.x_t, y, st.t, st.eps)?;
                let mut sds_ref =
                    delta_gen(st.world, st.schedule, &x_hat_t, &r.y_hat, st.t, st.eps)?;
                let dc_ref = delta_cls(st.world, st.schedule, &x_hat_t, &r.y_hat, st.t)?;
                axpy(&mut sds_ref, rule.omega, &dc_ref);
                let mut terms = vec![Term { name: COMP_DELTA_GEN, coeff: 1.0, vector: dg }];
                if rule.kind == RuleKind::Dds {
                    terms.push(Term {
                        name: COMP_DELTA_CLS_POS,
                        coeff: rule.omega,
                        vector: dc_pos,
                    });
                }
                terms.push(Term { name: COMP_DDS_REF_TERM, coeff: -1.0, vector: sds_ref });
                RuleDelta::assemble(terms, w_t, None, dim)
            }
        }
    };
    Ok(delta)
}
