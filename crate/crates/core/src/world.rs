//! Class-conditional Gaussian-mixture worlds with exact forward-diffused
//! densities, scores, noise predictors, and the implicit classifier.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::schedule::DiffusionSchedule;
use crate::vecmath::{check_dim, log_sum_exp};
use crate::{Error, Result};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// A single diagonal-covariance Gaussian component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl GaussianComponent {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Config(format!(
                "component mean dimension {} does not match variance dimension {}",
                mean.len(),
                var.len()
            )));
        }
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("component variances must be strictly positive".into()));
        }
        Ok(Self { mean, var })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((xi, mu), v) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - mu;
            acc += -0.5 * (LN_2PI + v.ln()) - d * d / (2.0 * v);
        }
        acc
    }
}

/// A finite Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    components: Vec<GaussianComponent>,
    weights: Vec<f64>,
}

impl Mixture {
    pub fn new(components: Vec<GaussianComponent>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if components.len() != weights.len() {
            return Err(Error::Config(format!(
                "mixture has {} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("mixture weights must be nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights must sum to 1, got {sum}")));
        }
        let d = components[0].mean.len();
        if components.iter().any(|c| c.mean.len() != d) {
            return Err(Error::Config("all mixture components must share one dimension".into()));
        }
        Ok(Self { components, weights })
    }

    pub fn single(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        Ok(Self { components: vec![GaussianComponent::new(mean, var)?], weights: vec![1.0] })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mixture mean, sum_k w_k mu_k.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, w) in self.components.iter().zip(&self.weights) {
            for (o, m) in out.iter_mut().zip(&c.mean) {
                *o += w * m;
            }
        }
        out
    }

    /// Closed-form marginal under the forward process at time t: means scaled
    /// by alpha_t, per-dimension variances alpha_t^2 var + sigma_t^2.
    pub fn diffused(&self, s: &DiffusionSchedule, t: f64) -> Result<Mixture> {
        let (alpha, sigma) = s.at(t)?;
        let components = self
            .components
            .iter()
            .map(|c| GaussianComponent {
                mean: c.mean.iter().map(|m| alpha * m).collect(),
                var: c.var.iter().map(|v| alpha * alpha * v + sigma * sigma).collect(),
            })
            .collect();
        Ok(Mixture { components, weights: self.weights.clone() })
    }

    /// Per-component log(w_k) + log N(x; mu_k, var_k).
    fn log_terms(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| if *w == 0.0 { f64::NEG_INFINITY } else { w.ln() + c.log_pdf(x) })
            .collect()
    }

    /// log sum_k w_k N(x; mu_k, diag(var_k)), log-sum-exp stabilized.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len(), "log_density point")?;
        Ok(log_sum_exp(&self.log_terms(x)))
    }

    /// grad_x log density via posterior responsibilities, computed in log space.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len(), "score point")?;
        let terms = self.log_terms(x);
        let lse = log_sum_exp(&terms);
        let mut out = vec![0.0; x.len()];
        for (c, lt) in self.components.iter().zip(&terms) {
            let r = (lt - lse).exp();
            if r == 0.0 {
                continue;
            }
            for ((o, xi), (mu, v)) in
                out.iter_mut().zip(x).zip(c.mean.iter().zip(&c.var))
            {
                *o += r * (-(xi - mu) / v);
            }
        }
        Ok(out)
    }

    /// Draw one sample from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = k;
                break;
            }
        }
        let c = &self.components[idx];
        c.mean
            .iter()
            .zip(&c.var)
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }
}

/// Prompt-indexed data distributions plus a class prior. The unconditional
/// distribution is the prior-weighted pooled mixture, so the implicit
/// classifier relation holds as an identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    prompts: Vec<String>,
    class_mixtures: Vec<Mixture>,
    prior: Vec<f64>,
    dim: usize,
    pooled: Mixture,
}

impl World {
    pub fn new(prompts: Vec<String>, class_mixtures: Vec<Mixture>, prior: Vec<f64>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::Config("world needs at least one prompt".into()));
        }
        if prompts.len() != class_mixtures.len() || prompts.len() != prior.len() {
            return Err(Error::Config(
                "prompts, class mixtures, and prior must have equal length".into(),
            ));
        }
        for (i, a) in prompts.iter().enumerate() {
            if prompts[i + 1..].contains(a) {
                return Err(Error::Config(format!("duplicate prompt label `{a}`")));
            }
        }
        if prior.iter().any(|p| *p < 0.0) {
            return Err(Error::Config("prior must be nonnegative".into()));
        }
        let sum: f64 = prior.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("prior must sum to 1, got {sum}")));
        }
        let dim = class_mixtures[0].dim();
        if class_mixtures.iter().any(|m| m.dim() != dim) {
            return Err(Error::Config("every class mixture must have the world dimension".into()));
        }
        // Pooled mixture: all class components, weights prior(y) * w_k.
        let mut comps = Vec::new();
        let mut ws = Vec::new();
        for (m, p) in class_mixtures.iter().zip(&prior) {
            for (c, w) in m.components.iter().zip(&m.weights) {
                comps.push(c.clone());
                ws.push(p * w);
            }
        }
        // renormalize away accumulated rounding so the pooled weights pass
        // their own sum invariant
        let wsum: f64 = ws.iter().sum();
        for w in &mut ws {
            *w /= wsum;
        }
        let pooled = Mixture::new(comps, ws)?;
        Ok(Self { prompts, class_mixtures, prior, dim, pooled })
    }

    pub fn uniform_prior(prompts: Vec<String>, class_mixtures: Vec<Mixture>) -> Result<Self> {
        let n = prompts.len();
        Self::new(prompts, class_mixtures, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn pooled(&self) -> &Mixture {
        &self.pooled
    }

    fn index(&self, y: &str) -> Result<usize> {
        self.prompts
            .iter()
            .position(|p| p == y)
            .ok_or_else(|| Error::UnknownLabel(y.to_string()))
    }

    pub fn class_mixture(&self, y: &str) -> Result<&Mixture> {
        Ok(&self.class_mixtures[self.index(y)?])
    }

    /// Exact analog of the trained noise predictor: -sigma_t times the score
    /// of the diffused class mixture (conditional) or of the diffused pooled
    /// mixture (unconditional, y = None), at x_t.
    pub fn eps_pred(
        &self,
        s: &DiffusionSchedule,
        x_t: &[f64],
        y: Option<&str>,
        t: f64,
    ) -> Result<Vec<f64>> {
        let (_, sigma) = s.at(t)?;
        if sigma == 0.0 {
            return Err(Error::Domain(format!(
                "eps_pred is degenerate at t={t} where sigma_t=0"
            )));
        }
        let m = match y {
            Some(label) => self.class_mixture(label)?,
            None => &self.pooled,
        };
        let score = m.diffused(s, t)?.score(x_t)?;
        Ok(score.into_iter().map(|g| -sigma * g).collect())
    }

    /// log q(y | x_t) = log prior(y) + log q_t(x_t | y) - log q_t(x_t).
    pub fn classifier_logprob(
        &self,
        s: &DiffusionSchedule,
        x_t: &[f64],
        t: f64,
        y: &str,
    ) -> Result<f64> {
        let i = self.index(y)?;
        let cond = self.class_mixtures[i].diffused(s, t)?.log_density(x_t)?;
        let pooled = self.pooled.diffused(s, t)?.log_density(x_t)?;
        Ok(self.prior[i].ln() + cond - pooled)
    }

    /// Posterior over all prompts at x_t; a valid distribution by construction.
    pub fn classifier_probs(&self, s: &DiffusionSchedule, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let logs: Vec<f64> = self
            .prompts
            .iter()
            .map(|y| self.classifier_logprob(s, x_t, t, y))
            .collect::<Result<_>>()?;
        Ok(logs.into_iter().map(f64::exp).collect())
    }
}
