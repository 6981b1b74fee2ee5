//! Meta-learning of priors: SVGD on the PAC-optimal hyper-posterior
//! `Q*(φ) ∝ 𝒫(φ)·exp(Σ_i λ/(nβ_i+λ)·ln Z_{β_i}(S_i, P_φ))`.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnn::{self, BnnArch, BnnPrior, TargetTrainConfig};
use crate::data::Dataset;
use crate::diffmath::{grad, GradientEvaluation, Matrix, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::gp::{self, GpConfig, GpPrior};
use crate::predictive::{MixturePredictive, Predictive};
use crate::rng::substream;
use crate::svgd::{self, ParticleSet, SvgdConfig, SvgdDiagnostics};

/// Zero-mean isotropic Gaussian over prior parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPrior {
    pub variance: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        Self { variance: 1.0 }
    }
}

impl HyperPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance > 0.0) || !self.variance.is_finite() {
            return Err(Error::InvalidArgument("hyper-prior variance must be > 0".into()));
        }
        Ok(())
    }

    fn on_tape(&self, tape: &Tape, phi: Var) -> Var {
        let (_, dim) = tape.shape(phi);
        let quad = tape.scale(tape.sum(tape.square(phi)), -0.5 / self.variance);
        tape.offset(quad, -0.5 * dim as f64 * (2.0 * PI * self.variance).ln())
    }
}

/// `ln 𝒫(φ)` and `∇ ln 𝒫(φ) = −φ/σ²`.
pub fn hyper_prior_log_density_grad(phi: &ParamVector, hp: &HyperPrior) -> Result<GradientEvaluation> {
    hp.validate()?;
    let sq: f64 = phi.values().iter().map(|v| v * v).sum();
    Ok(GradientEvaluation {
        value: -sq / (2.0 * hp.variance) - 0.5 * phi.len() as f64 * (2.0 * PI * hp.variance).ln(),
        grad: phi.values().iter().map(|v| -v / hp.variance).collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    #[default]
    N,
    SqrtN,
}

impl LambdaRule {
    pub fn value(self, n: usize) -> f64 {
        match self {
            LambdaRule::N => n as f64,
            LambdaRule::SqrtN => (n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    #[default]
    M,
    SqrtM,
}

impl BetaRule {
    pub fn value(self, m: usize) -> f64 {
        match self {
            BetaRule::M => m as f64,
            BetaRule::SqrtM => (m as f64).sqrt(),
        }
    }
}

/// `λ/(nβ + λ)`.
pub fn task_weight(lambda: f64, n: usize, beta: f64) -> f64 {
    lambda / (n as f64 * beta + lambda)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseLearner {
    Gp(GpConfig),
    Bnn(BnnArch),
}

impl BaseLearner {
    pub fn kind(&self) -> &'static str {
        match self {
            BaseLearner::Gp(_) => "gp",
            BaseLearner::Bnn(_) => "bnn",
        }
    }

    pub fn param_count(&self) -> Result<usize> {
        match self {
            BaseLearner::Gp(c) => c.param_count(),
            BaseLearner::Bnn(a) => Ok(2 * a.hypothesis_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            BaseLearner::Gp(c) => c.input_dim,
            BaseLearner::Bnn(a) => a.net.input_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    #[serde(default)]
    pub lambda_rule: LambdaRule,
    #[serde(default)]
    pub beta_rule: BetaRule,
    /// Hyper-posterior particles.
    pub k: usize,
    /// Hypothesis samples per MLL estimate (BNN only).
    #[serde(default = "default_l")]
    pub l: usize,
    /// Tasks per step; all tasks when absent.
    #[serde(default)]
    pub task_batch: Option<usize>,
    /// Points per task and step (BNN only); all points when absent.
    #[serde(default)]
    pub point_batch: Option<usize>,
    pub svgd: SvgdConfig,
    #[serde(default)]
    pub seed: u64,
    /// Drop `∇ ln 𝒫` from the score, leaving a pure marginal-likelihood
    /// objective.
    #[serde(default)]
    pub disable_hyper_prior: bool,
    /// Reuse the same hypothesis draws at every step.
    #[serde(default)]
    pub fixed_eps: bool,
}

fn default_l() -> usize {
    5
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.l == 0 {
            return Err(Error::InvalidArgument("K and L must be >= 1".into()));
        }
        if self.task_batch == Some(0) || self.point_batch == Some(0) {
            return Err(Error::InvalidArgument("batch sizes must be >= 1".into()));
        }
        self.svgd.validate()
    }
}

/// The tasks entering one score evaluation.
pub struct ScoreInputs<'a> {
    pub tasks: &'a [Dataset],
    /// `β_i` per task in `tasks`.
    pub betas: &'a [f64],
    /// Total number of meta-training tasks `n`.
    pub n_total: usize,
    pub lambda: f64,
    /// `None` drops the hyper-prior term.
    pub hyper_prior: Option<HyperPrior>,
}

/// `ln Q̃*(φ)` up to a constant and its gradient:
/// `ln 𝒫(φ) + (n/n_bs) Σ_i λ/(nβ_i+λ) ln Z(S_i, P_φ)`.
///
/// `eps` holds the hypothesis draws for the BNN estimator (`L×D`).
pub fn hyper_score(phi: &[f64], base: &BaseLearner, inputs: &ScoreInputs, eps: Option<&Matrix>) -> Result<GradientEvaluation> {
    let nbs = inputs.tasks.len();
    if nbs == 0 {
        return Err(Error::EmptyInput("hyper-score needs at least one task"));
    }
    if inputs.betas.len() != nbs {
        return Err(Error::LengthMismatch {
            left: inputs.betas.len(),
            right: nbs,
        });
    }
    if let Some(hp) = &inputs.hyper_prior {
        hp.validate()?;
    }
    let scale = inputs.n_total as f64 / nbs as f64;
    let weights: Vec<f64> = inputs
        .betas
        .iter()
        .map(|&b| scale * task_weight(inputs.lambda, inputs.n_total, b))
        .collect();
    let at = ParamVector::from_layout(&[("phi", phi.len())], phi.to_vec())?;
    grad(
        |tape, p| {
            let ln_z = match base {
                BaseLearner::Gp(cfg) => {
                    let template = GpPrior::from_values(cfg, phi.to_vec())?;
                    let mut acc: Option<Var> = None;
                    for (i, (task, w)) in inputs.tasks.iter().zip(&weights).enumerate() {
                        let mll = gp::gp_mll_on_tape(tape, p, &template, task)
                            .map_err(|e| e.context(format!("task {i}")))?;
                        let term = tape.scale(mll, *w);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => tape.add(a, term),
                        });
                    }
                    acc.expect("non-empty batch")
                }
                BaseLearner::Bnn(arch) => {
                    let eps = eps.ok_or_else(|| Error::InvalidArgument("BNN score needs hypothesis draws".into()))?;
                    let v = bnn::lse_mll_batch_on_tape(tape, p, arch, inputs.tasks, inputs.betas, eps)?;
                    let w = tape.constant(Matrix::column(&weights));
                    tape.sum(tape.mul(v, w))
                }
            };
            Ok(match &inputs.hyper_prior {
                Some(hp) => tape.add(ln_z, hp.on_tape(tape, p)),
                None => ln_z,
            })
        },
        &at,
    )
}

/// Meta-learned set of priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTrainResult {
    pub base: BaseLearner,
    pub prior_particles: ParticleSet,
    pub hyper_prior: HyperPrior,
    pub config: MetaConfig,
    pub diagnostics: SvgdDiagnostics,
}

impl MetaTrainResult {
    pub fn k(&self) -> usize {
        self.prior_particles.len()
    }

    pub fn gp_priors(&self) -> Result<Vec<GpPrior>> {
        let BaseLearner::Gp(cfg) = &self.base else {
            return Err(Error::InvalidArgument("result holds BNN priors".into()));
        };
        self.prior_particles
            .iter()
            .map(|p| GpPrior::from_values(cfg, p.to_vec()))
            .collect()
    }

    pub fn bnn_priors(&self) -> Result<Vec<BnnPrior>> {
        let BaseLearner::Bnn(arch) = &self.base else {
            return Err(Error::InvalidArgument("result holds GP priors".into()));
        };
        self.prior_particles
            .iter()
            .map(|p| BnnPrior::from_values(arch.clone(), p.to_vec()))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.prior_particles.dim() != r.base.param_count()? {
            return Err(Error::Schema("particle dimension does not match the base learner".into()));
        }
        Ok(r)
    }
}

/// `K` draws from the hyper-prior. GP noise scales start at the configured
/// initial value instead of a random draw.
pub fn init_particles(base: &BaseLearner, hp: &HyperPrior, k: usize, seed: u64) -> Result<ParticleSet> {
    hp.validate()?;
    let dim = base.param_count()?;
    let sd = hp.variance.sqrt();
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut rng = substream(seed, "hyper_prior_init", &[i as u64]);
            let mut v: Vec<f64> = (0..dim).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
            if let BaseLearner::Gp(cfg) = base {
                let last = v.len() - 1;
                v[last] = cfg.init_noise_sigma.ln();
            }
            v
        })
        .collect();
    ParticleSet::from_rows(&rows)
}

/// Task indices and per-task point subsets used at `step`.
fn minibatch(tasks: &[Dataset], cfg: &MetaConfig, base: &BaseLearner, step: usize) -> Vec<(usize, Dataset)> {
    let n = tasks.len();
    let nbs = cfg.task_batch.unwrap_or(n).min(n);
    let chosen: Vec<usize> = if nbs == n {
        (0..n).collect()
    } else {
        let mut rng = substream(cfg.seed, "task_batch", &[step as u64]);
        sample(&mut rng, n, nbs).into_vec()
    };
    chosen
        .into_iter()
        .map(|i| {
            let t = &tasks[i];
            let sub = match (base, cfg.point_batch) {
                (BaseLearner::Bnn(_), Some(mbs)) if mbs < t.len() => {
                    let mut rng = substream(cfg.seed, "point_batch", &[step as u64, i as u64]);
                    t.select(&sample(&mut rng, t.len(), mbs).into_vec())
                }
                _ => t.clone(),
            };
            (i, sub)
        })
        .collect()
}

/// Runs SVGD on the hyper-posterior starting from `K` hyper-prior draws.
pub fn meta_train(tasks: &[Dataset], base: &BaseLearner, hp: &HyperPrior, cfg: &MetaConfig) -> Result<MetaTrainResult> {
    cfg.validate()?;
    hp.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptyInput("meta-training needs at least one task"));
    }
    for (i, t) in tasks.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::EmptyDataset.context(format!("task {i}")));
        }
        if t.dim() != base.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "task {i} has dimension {}, base learner expects {}",
                t.dim(),
                base.input_dim()
            )));
        }
    }
    let n = tasks.len();
    let lambda = cfg.lambda_rule.value(n);
    let init = init_particles(base, hp, cfg.k, cfg.seed)?;
    let hyper_prior = (!cfg.disable_hyper_prior).then_some(*hp);
    let hyp_dim = match base {
        BaseLearner::Bnn(a) => a.hypothesis_dim(),
        BaseLearner::Gp(_) => 0,
    };

    let score_fn = |step: usize, particles: &ParticleSet| -> Result<Matrix> {
        let batch = minibatch(tasks, cfg, base, step);
        let idx: Vec<usize> = batch.iter().map(|(i, _)| *i).collect();
        let data: Vec<Dataset> = batch.into_iter().map(|(_, d)| d).collect();
        // β_i follows the full task size; the minibatch only estimates L̂
        let betas: Vec<f64> = idx.iter().map(|&i| cfg.beta_rule.value(tasks[i].len())).collect();
        let inputs = ScoreInputs {
            tasks: &data,
            betas: &betas,
            n_total: n,
            lambda,
            hyper_prior,
        };
        let rows: Vec<Vec<f64>> = (0..particles.len())
            .into_par_iter()
            .map(|k| {
                let eps = match base {
                    BaseLearner::Bnn(_) => {
                        let s = if cfg.fixed_eps { 0 } else { step as u64 };
                        let mut rng = substream(cfg.seed, "mll_eps", &[s, k as u64]);
                        Some(bnn::sample_epsilon(hyp_dim, cfg.l, &mut rng))
                    }
                    BaseLearner::Gp(_) => None,
                };
                hyper_score(particles.particle(k), base, &inputs, eps.as_ref())
                    .map(|g| g.grad)
                    .map_err(|e| match e {
                        Error::NonFiniteValue => Error::NonFiniteScore { step, particle: k },
                        other => other.context(format!("particle {k}")),
                    })
            })
            .collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    };
    let (particles, diagnostics) = svgd::run(score_fn, init, &cfg.svgd)?;
    Ok(MetaTrainResult {
        base: base.clone(),
        prior_particles: particles,
        hyper_prior: *hp,
        config: cfg.clone(),
        diagnostics,
    })
}

/// Meta-test settings; only used by the BNN path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTestConfig {
    #[serde(default)]
    pub beta_rule: BetaRule,
    pub target: TargetTrainConfig,
}

/// Predictive distribution for a new task given its training set.
///
/// GP: equal-weight mixture of the `K` GP posteriors. BNN: target training
/// from every prior, then the particle mixture.
pub fn meta_predict(result: &MetaTrainResult, train: &Dataset, xq: &Matrix, cfg: &MetaTestConfig) -> Result<Predictive> {
    match &result.base {
        BaseLearner::Gp(_) => {
            let comps = result
                .gp_priors()?
                .iter()
                .map(|p| gp::gp_predict(p, train, xq))
                .collect::<Result<_>>()?;
            Ok(Predictive::Regression(MixturePredictive::new(comps)?))
        }
        BaseLearner::Bnn(_) => {
            let priors = result.bnn_priors()?;
            let beta = cfg.beta_rule.value(train.len().max(1));
            bnn::target_train(&priors, train, beta, &cfg.target)?.predict(xq)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_identity() {
        for m in 1..200 {
            let n = 7;
            assert_eq!(task_weight(n as f64, n, m as f64), 1.0 / (m as f64 + 1.0));
        }
    }

    #[test]
    fn hyper_prior_examples() {
        let hp = HyperPrior::default();
        let phi = ParamVector::from_layout(&[("p", 2)], vec![0.0, 0.0]).unwrap();
        let g = hyper_prior_log_density_grad(&phi, &hp).unwrap();
        assert_eq!(g.grad, vec![0.0, 0.0]);
        assert!((g.value + (2.0 * PI).ln()).abs() < 1e-15);
        let phi = ParamVector::from_layout(&[("p", 2)], vec![1.0, 0.0]).unwrap();
        assert_eq!(hyper_prior_log_density_grad(&phi, &hp).unwrap().grad, vec![-1.0, 0.0]);
    }

    #[test]
    fn gp_init_uses_configured_noise() {
        let cfg = GpConfig::new(1);
        let ps = init_particles(&BaseLearner::Gp(cfg.clone()), &HyperPrior::default(), 2, 5).unwrap();
        for p in ps.iter() {
            assert_eq!(*p.last().unwrap(), cfg.init_noise_sigma.ln());
        }
    }
}
