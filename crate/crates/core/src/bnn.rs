//! Bayesian-neural-network base learner with diagonal Gaussian priors.
//!
//! A prior is `φ = (μ_P, ln σ_P)` over the hypothesis `h = (θ, ln σ_lik)`;
//! the noise scale is only present for Gaussian regression.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::diffmath::{logsumexp, GradientEvaluation, Matrix, MlpConfig, ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::predictive::{ClassPredictive, GaussianPredictive, MixturePredictive, Predictive};
use crate::rng::{substream, Rng};
use crate::svgd::{self, ParticleSet, SvgdConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    GaussianRegression,
    CategoricalSoftmax { classes: usize },
}

/// Network shape plus likelihood; fixes the hypothesis layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnnArch {
    pub net: MlpConfig,
    pub likelihood: Likelihood,
}

impl BnnArch {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, likelihood: Likelihood) -> Result<Self> {
        let output_dim = match likelihood {
            Likelihood::GaussianRegression => 1,
            Likelihood::CategoricalSoftmax { classes } => classes,
        };
        let arch = Self {
            net: MlpConfig::new(input_dim, hidden_layers, output_dim)?,
            likelihood,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Regression network with the default 2×32 hidden layers.
    pub fn regression(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, vec![32, 32], Likelihood::GaussianRegression)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        match self.likelihood {
            Likelihood::GaussianRegression if self.net.output_dim != 1 => {
                Err(Error::ShapeMismatch("regression network must have one output".into()))
            }
            Likelihood::CategoricalSoftmax { classes } if classes < 2 => {
                Err(Error::InvalidArgument("classification needs at least 2 classes".into()))
            }
            Likelihood::CategoricalSoftmax { classes } if self.net.output_dim != classes => Err(
                Error::ShapeMismatch("network outputs must equal the class count".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn net_params(&self) -> usize {
        self.net.param_count()
    }

    pub fn hypothesis_dim(&self) -> usize {
        self.net_params() + usize::from(self.likelihood == Likelihood::GaussianRegression)
    }

    pub fn hypothesis_layout(&self) -> Vec<(&'static str, usize)> {
        let mut layout = vec![("net", self.net_params())];
        if self.likelihood == Likelihood::GaussianRegression {
            layout.push(("ln_sigma_lik", 1));
        }
        layout
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.net.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "dataset has dimension {}, network expects {}",
                data.dim(),
                self.net.input_dim
            )));
        }
        match (self.likelihood, data.targets()) {
            (Likelihood::GaussianRegression, Targets::Regression(_)) => Ok(()),
            (Likelihood::CategoricalSoftmax { classes }, Targets::Classification { classes: c, .. })
                if classes == *c =>
            {
                Ok(())
            }
            _ => Err(Error::ShapeMismatch("dataset targets do not match the likelihood".into())),
        }
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.hypothesis_dim() {
            return Err(Error::ShapeMismatch(format!(
                "hypothesis has {} entries, expected {}",
                theta.len(),
                self.hypothesis_dim()
            )));
        }
        Ok(())
    }

    /// Per-point negative log-likelihoods of `data` under hypothesis `theta`.
    pub fn pointwise_nll(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        self.check_data(data)?;
        let out = self.net.forward_batch(&theta[..self.net_params()], data.x())?;
        Ok(match data.targets() {
            Targets::Regression(y) => {
                let ln_s = theta[self.net_params()];
                let s = ln_s.exp();
                y.iter()
                    .enumerate()
                    .map(|(i, yi)| gaussian_nll(*yi, out[(i, 0)], s, ln_s))
                    .collect()
            }
            Targets::Classification { labels, .. } => labels
                .iter()
                .enumerate()
                .map(|(i, &c)| crate::diffmath::logsumexp(out.row(i)).unwrap_or(f64::NAN) - out[(i, c)])
                .collect(),
        })
    }

    /// Records per-point NLLs as an `m×1` node. `theta` is a `1×D` node.
    fn pointwise_nll_on_tape(&self, tape: &Tape, theta: Var, x: Var, targets: &TapeTargets) -> Var {
        let out = self.net.forward_on_tape(tape, theta, 0, x);
        match targets {
            TapeTargets::Regression(y) => {
                let ln_s = tape.slice(theta, self.net_params(), 1, 1);
                let inv_s = tape.exp(tape.neg(ln_s));
                let z = tape.mul_scalar(tape.sub(*y, out), inv_s);
                let quad = tape.scale(tape.square(z), 0.5);
                tape.offset(tape.add_scalar(quad, ln_s), 0.5 * (2.0 * PI).ln())
            }
            TapeTargets::Classification(onehot) => {
                let picked = tape.row_sum(tape.mul(out, *onehot));
                tape.sub(tape.row_logsumexp(out), picked)
            }
        }
    }
}

fn gaussian_nll(y: f64, f: f64, s: f64, ln_s: f64) -> f64 {
    let z = (y - f) / s;
    0.5 * z * z + ln_s + 0.5 * (2.0 * PI).ln()
}

enum TapeTargets {
    Regression(Var),
    Classification(Var),
}

fn tape_targets(tape: &Tape, data: &Dataset) -> TapeTargets {
    match data.targets() {
        Targets::Regression(y) => TapeTargets::Regression(tape.constant(Matrix::column(y))),
        Targets::Classification { labels, classes } => {
            let mut onehot = Matrix::zeros(labels.len(), *classes);
            for (i, &c) in labels.iter().enumerate() {
                onehot[(i, c)] = 1.0;
            }
            TapeTargets::Classification(tape.constant(onehot))
        }
    }
}

/// A single target value for [`nll`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetValue {
    Real(f64),
    Class(usize),
}

/// Negative log-likelihood of one point.
pub fn nll(arch: &BnnArch, theta: &[f64], x: &[f64], target: TargetValue) -> Result<f64> {
    let data = match target {
        TargetValue::Real(y) => Dataset::regression(Matrix::row_vector(x), vec![y])?,
        TargetValue::Class(c) => match arch.likelihood {
            Likelihood::CategoricalSoftmax { classes } => {
                Dataset::classification(Matrix::row_vector(x), vec![c], classes)?
            }
            Likelihood::GaussianRegression => {
                return Err(Error::ShapeMismatch("class label for a regression likelihood".into()))
            }
        },
    };
    Ok(arch.pointwise_nll(theta, &data)?[0])
}

/// `L̂(θ, S)`: mean NLL over the dataset.
pub fn empirical_loss(arch: &BnnArch, theta: &[f64], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let l = arch.pointwise_nll(theta, data)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnnPrior {
    pub phi: ParamVector,
    pub arch: BnnArch,
}

impl BnnPrior {
    pub fn new(arch: BnnArch, mu: Vec<f64>, ln_sigma: Vec<f64>) -> Result<Self> {
        let d = arch.hypothesis_dim();
        if mu.len() != d || ln_sigma.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "prior segments must have length {d}"
            )));
        }
        let values = mu.into_iter().chain(ln_sigma).collect();
        Self::from_values(arch, values)
    }

    pub fn from_values(arch: BnnArch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let d = arch.hypothesis_dim();
        let phi = ParamVector::from_layout(&[("mu_P", d), ("ln_sigma_P", d)], values)?;
        Ok(Self { phi, arch })
    }

    /// `N(0, I)` over every hypothesis coordinate.
    pub fn standard(arch: BnnArch) -> Result<Self> {
        let d = arch.hypothesis_dim();
        Self::from_values(arch, vec![0.0; 2 * d])
    }

    pub fn dim(&self) -> usize {
        self.arch.hypothesis_dim()
    }

    pub fn mu(&self) -> &[f64] {
        &self.phi.values()[..self.dim()]
    }

    pub fn ln_sigma(&self) -> &[f64] {
        &self.phi.values()[self.dim()..]
    }

    /// `θ = μ + σ ⊙ ε`.
    pub fn reparametrize(&self, eps: &[f64]) -> Vec<f64> {
        self.mu()
            .iter()
            .zip(self.ln_sigma())
            .zip(eps)
            .map(|((m, ls), e)| m + ls.exp() * e)
            .collect()
    }

    /// `∇_θ ln P_φ(θ) = −(θ − μ)/σ²`.
    pub fn log_density_grad(&self, theta: &[f64]) -> Vec<f64> {
        self.mu()
            .iter()
            .zip(self.ln_sigma())
            .zip(theta)
            .map(|((m, ls), t)| -(t - m) * (-2.0 * ls).exp())
            .collect()
    }
}

/// A reparametrised draw from a prior, with the noise that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSample {
    pub theta: ParamVector,
    pub source_epsilon: Vec<f64>,
}

/// `L×D` standard-normal draws.
pub fn sample_epsilon(dim: usize, l: usize, rng: &mut Rng) -> Matrix {
    let data = (0..dim * l).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::new(l, dim, data).expect("finite normal draws")
}

pub fn sample_hypotheses(prior: &BnnPrior, l: usize, rng: &mut Rng) -> Result<Vec<HypothesisSample>> {
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one hypothesis sample".into()));
    }
    let eps = sample_epsilon(prior.dim(), l, rng);
    let layout = prior.arch.hypothesis_layout();
    (0..l)
        .map(|i| {
            let e = eps.row(i).to_vec();
            Ok(HypothesisSample {
                theta: ParamVector::from_layout(&layout, prior.reparametrize(&e))?,
                source_epsilon: e,
            })
        })
        .collect()
}

fn sampled_losses(prior: &BnnPrior, data: &Dataset, eps: &Matrix) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    (0..eps.rows())
        .map(|l| empirical_loss(&prior.arch, &prior.reparametrize(eps.row(l)), data))
        .collect()
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument("beta must be > 0".into()));
    }
    Ok(())
}

/// `LSE_l(−β·L̂(θ_l, S)) − ln L` for the hypotheses `μ + σ⊙ε_l`, one per row
/// of `eps`.
pub fn lse_mll_with_eps(prior: &BnnPrior, data: &Dataset, beta: f64, eps: &Matrix) -> Result<f64> {
    check_beta(beta)?;
    let v: Vec<f64> = sampled_losses(prior, data, eps)?.iter().map(|l| -beta * l).collect();
    Ok(logsumexp(&v)? - (eps.rows() as f64).ln())
}

/// `−β·mean_l L̂(θ_l, S)` for the same hypotheses as [`lse_mll_with_eps`].
pub fn naive_mll_with_eps(prior: &BnnPrior, data: &Dataset, beta: f64, eps: &Matrix) -> Result<f64> {
    check_beta(beta)?;
    let l = sampled_losses(prior, data, eps)?;
    Ok(-beta * l.iter().sum::<f64>() / l.len() as f64)
}

/// LSE estimate of the generalised marginal log-likelihood from `l` fresh draws.
pub fn lse_mll(prior: &BnnPrior, data: &Dataset, beta: f64, l: usize, rng: &mut Rng) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one hypothesis sample".into()));
    }
    let eps = sample_epsilon(prior.dim(), l, rng);
    lse_mll_with_eps(prior, data, beta, &eps)
}

/// Naive estimate; consumes the same draws as [`lse_mll`] for an equal rng state.
pub fn naive_mll(prior: &BnnPrior, data: &Dataset, beta: f64, l: usize, rng: &mut Rng) -> Result<f64> {
    if l == 0 {
        return Err(Error::InvalidArgument("need at least one hypothesis sample".into()));
    }
    let eps = sample_epsilon(prior.dim(), l, rng);
    naive_mll_with_eps(prior, data, beta, &eps)
}

/// Records `ln Z̃_β(S_i, P_φ)` for every dataset in `tasks` as an `n×1` node.
///
/// `phi` is a `1×2D` node laid out as `(μ_P, ln σ_P)`. All tasks share the
/// hypotheses drawn from `eps` (one per row).
pub(crate) fn lse_mll_batch_on_tape(
    tape: &Tape,
    phi: Var,
    arch: &BnnArch,
    tasks: &[Dataset],
    betas: &[f64],
    eps: &Matrix,
) -> Result<Var> {
    let d = arch.hypothesis_dim();
    if tape.shape(phi) != (1, 2 * d) || eps.cols() != d {
        return Err(Error::ShapeMismatch("prior parameters do not match the architecture".into()));
    }
    if tasks.is_empty() || tasks.len() != betas.len() {
        return Err(Error::InvalidArgument("need one beta per task and at least one task".into()));
    }
    let mut all = tasks[0].clone();
    for t in &tasks[1..] {
        all = all.concat(t)?;
    }
    arch.check_data(&all)?;
    let total = all.len();
    // averaging[i][j] = 1/m_i when point j belongs to task i
    let mut averaging = Matrix::zeros(tasks.len(), total);
    let mut off = 0;
    for (i, t) in tasks.iter().enumerate() {
        if t.is_empty() {
            return Err(Error::EmptyDataset.context(format!("task {i}")));
        }
        for j in off..off + t.len() {
            averaging[(i, j)] = 1.0 / t.len() as f64;
        }
        off += t.len();
    }
    let l = eps.rows();
    let x = tape.constant(all.x().clone());
    let targets = tape_targets(tape, &all);
    let averaging = tape.constant(averaging);
    let mu = tape.slice(phi, 0, 1, d);
    let sigma = tape.exp(tape.slice(phi, d, 1, d));
    let mut per_sample = Vec::with_capacity(l);
    for s in 0..l {
        let e = tape.constant(Matrix::row_vector(eps.row(s)));
        let theta = tape.add(mu, tape.mul(sigma, e));
        let pointwise = arch.pointwise_nll_on_tape(tape, theta, x, &targets);
        per_sample.push(tape.matmul(averaging, pointwise));
    }
    // n×L matrix of task losses, scaled by −β_i per row
    let losses = tape.transpose(tape.slice(tape.concat(&per_sample), 0, l, tasks.len()));
    let mut neg_beta = Matrix::zeros(tasks.len(), l);
    for (i, b) in betas.iter().enumerate() {
        check_beta(*b)?;
        neg_beta.row_mut(i).fill(-b);
    }
    let scaled = tape.mul(losses, tape.constant(neg_beta));
    Ok(tape.offset(tape.row_logsumexp(scaled), -(l as f64).ln()))
}

/// Value and `φ`-gradient of [`lse_mll_with_eps`] with the draws held fixed.
pub fn lse_mll_grad(prior: &BnnPrior, data: &Dataset, beta: f64, eps: &Matrix) -> Result<GradientEvaluation> {
    crate::diffmath::grad(
        |tape, phi| {
            let v = lse_mll_batch_on_tape(tape, phi, &prior.arch, std::slice::from_ref(data), &[beta], eps)?;
            Ok(tape.sum(v))
        },
        &prior.phi,
    )
}

/// Value and `θ`-gradient of `L̂(θ, S)`.
pub fn empirical_loss_grad(arch: &BnnArch, theta: &[f64], data: &Dataset) -> Result<GradientEvaluation> {
    arch.check_theta(theta)?;
    arch.check_data(data)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let layout = arch.hypothesis_layout();
    let at = ParamVector::from_layout(&layout, theta.to_vec())?;
    crate::diffmath::grad(
        |tape, t| {
            let x = tape.constant(data.x().clone());
            let targets = tape_targets(tape, data);
            Ok(tape.mean(arch.pointwise_nll_on_tape(tape, t, x, &targets)))
        },
        &at,
    )
}

/// Target-training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetTrainConfig {
    /// Posterior particles per prior.
    pub particles_per_prior: usize,
    pub svgd: SvgdConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Equal-weight particle approximation of the posterior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticlePosterior {
    pub particles: ParticleSet,
    pub arch: BnnArch,
}

impl ParticlePosterior {
    /// Equal-weight mixture over particles; regression components carry
    /// variance `σ_lik²`.
    pub fn predict(&self, xq: &Matrix) -> Result<Predictive> {
        let np = self.arch.net_params();
        let outs: Vec<Matrix> = self
            .particles
            .iter()
            .map(|theta| self.arch.net.forward_batch(&theta[..np], xq))
            .collect::<Result<_>>()?;
        match self.arch.likelihood {
            Likelihood::GaussianRegression => {
                let comps = self
                    .particles
                    .iter()
                    .zip(outs)
                    .map(|(theta, out)| {
                        let var = (2.0 * theta[np]).exp();
                        GaussianPredictive {
                            mean: out.into_vec(),
                            variance: vec![var; xq.rows()],
                        }
                    })
                    .collect();
                Ok(Predictive::Regression(MixturePredictive::new(comps)?))
            }
            Likelihood::CategoricalSoftmax { classes } => {
                let k = outs.len() as f64;
                let mut probs = vec![vec![0.0; classes]; xq.rows()];
                for out in &outs {
                    for (i, p) in probs.iter_mut().enumerate() {
                        let row = out.row(i);
                        let lse = crate::diffmath::logsumexp(row)?;
                        for (pc, v) in p.iter_mut().zip(row) {
                            *pc += (v - lse).exp() / k;
                        }
                    }
                }
                Ok(Predictive::Classification(ClassPredictive { probs }))
            }
        }
    }

    /// Network outputs of particle `k` at `xq` (first output column).
    pub fn particle_mean(&self, k: usize, xq: &Matrix) -> Result<Vec<f64>> {
        let np = self.arch.net_params();
        let out = self.arch.net.forward_batch(&self.particles.particle(k)[..np], xq)?;
        Ok((0..out.rows()).map(|i| out[(i, 0)]).collect())
    }
}

/// SVGD on hypotheses, separately for every prior, with score
/// `∇ ln P_φk(θ) − β ∇ L̂(θ, S̃)`; returns the union of all particles.
pub fn target_train(priors: &[BnnPrior], data: &Dataset, beta: f64, cfg: &TargetTrainConfig) -> Result<ParticlePosterior> {
    let Some(first) = priors.first() else {
        return Err(Error::EmptyInput("target training needs at least one prior"));
    };
    if cfg.particles_per_prior == 0 {
        return Err(Error::InvalidArgument("need at least one particle per prior".into()));
    }
    check_beta(beta)?;
    if priors.iter().any(|p| p.arch != first.arch) {
        return Err(Error::ShapeMismatch("all priors must share one architecture".into()));
    }
    let arch = first.arch.clone();
    arch.check_data(data)?;
    let per_prior: Vec<Matrix> = priors
        .par_iter()
        .enumerate()
        .map(|(k, prior)| {
            let mut rng = substream(cfg.seed, "target_train_init", &[k as u64]);
            let eps = sample_epsilon(prior.dim(), cfg.particles_per_prior, &mut rng);
            let init: Vec<Vec<f64>> = (0..eps.rows()).map(|l| prior.reparametrize(eps.row(l))).collect();
            let init = ParticleSet::from_rows(&init)?;
            if data.is_empty() || cfg.svgd.steps == 0 {
                return Ok(init.into_values());
            }
            let score = |_step: usize, ps: &ParticleSet| -> Result<Matrix> {
                let rows: Vec<Vec<f64>> = (0..ps.len())
                    .map(|l| {
                        let theta = ps.particle(l);
                        let g = empirical_loss_grad(&arch, theta, data)?;
                        let mut s = prior.log_density_grad(theta);
                        for (si, gi) in s.iter_mut().zip(&g.grad) {
                            *si -= beta * gi;
                        }
                        Ok(s)
                    })
                    .collect::<Result<_>>()?;
                Matrix::from_rows(&rows)
            };
            let (out, _) = svgd::run(score, init, &cfg.svgd).map_err(|e| e.context(format!("prior {k}")))?;
            Ok(out.into_values())
        })
        .collect::<Result<_>>()?;
    let mut all = per_prior[0].clone();
    for m in &per_prior[1..] {
        all = all.vstack(m);
    }
    Ok(ParticlePosterior {
        particles: ParticleSet::new(all)?,
        arch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn linear_arch() -> BnnArch {
        BnnArch::new(1, vec![], Likelihood::GaussianRegression).unwrap()
    }

    #[test]
    fn nll_examples() {
        let arch = linear_arch();
        // f(x) = 2x + 1, σ = 1
        let theta = [2.0, 1.0, 0.0];
        let half_ln_2pi = 0.5 * (2.0 * PI).ln();
        assert!((nll(&arch, &theta, &[1.0], TargetValue::Real(3.0)).unwrap() - half_ln_2pi).abs() < 1e-15);
        assert!((nll(&arch, &theta, &[1.0], TargetValue::Real(4.0)).unwrap() - 0.5 - half_ln_2pi).abs() < 1e-15);
        let cls = BnnArch::new(1, vec![], Likelihood::CategoricalSoftmax { classes: 2 }).unwrap();
        let theta = [0.0; 4];
        assert!((nll(&cls, &theta, &[0.3], TargetValue::Class(0)).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn empirical_loss_is_mean() {
        let arch = linear_arch();
        let theta = [0.5, -0.2, 0.3];
        let d = Dataset::regression(Matrix::column(&[0.0, 1.0]), vec![1.0, -1.0]).unwrap();
        let a = nll(&arch, &theta, &[0.0], TargetValue::Real(1.0)).unwrap();
        let b = nll(&arch, &theta, &[1.0], TargetValue::Real(-1.0)).unwrap();
        assert!((empirical_loss(&arch, &theta, &d).unwrap() - (a + b) / 2.0).abs() < 1e-15);
        assert!(matches!(empirical_loss(&arch, &theta, &Dataset::empty(1)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn degenerate_prior_samples_equal_mean() {
        let arch = linear_arch();
        let prior = BnnPrior::new(arch, vec![0.4, -1.0, 0.2], vec![-30.0; 3]).unwrap();
        let mut rng = Rng::seed_from_u64(3);
        for h in sample_hypotheses(&prior, 10, &mut rng).unwrap() {
            for (t, m) in h.theta.values().iter().zip(prior.mu()) {
                assert!((t - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_sample_lse_equals_naive() {
        let prior = BnnPrior::standard(linear_arch()).unwrap();
        let d = Dataset::regression(Matrix::column(&[0.0, 1.0, 2.0]), vec![1.0, -1.0, 0.5]).unwrap();
        let a = lse_mll(&prior, &d, 3.0, 1, &mut Rng::seed_from_u64(9)).unwrap();
        let b = naive_mll(&prior, &d, 3.0, 1, &mut Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batched_tape_matches_plain_estimator() {
        let arch = BnnArch::new(1, vec![4], Likelihood::GaussianRegression).unwrap();
        let d = arch.hypothesis_dim();
        let values: Vec<f64> = (0..2 * d).map(|i| ((i as f64) * 1.3).sin() * 0.5).collect();
        let prior = BnnPrior::from_values(arch, values).unwrap();
        let t1 = Dataset::regression(Matrix::column(&[0.0, 1.0, 2.0]), vec![1.0, -1.0, 0.5]).unwrap();
        let t2 = Dataset::regression(Matrix::column(&[-1.0, 0.5]), vec![0.2, 0.1]).unwrap();
        let eps = sample_epsilon(d, 4, &mut Rng::seed_from_u64(1));
        let tape = Tape::new();
        let phi = tape.param(Matrix::row_vector(prior.phi.values()));
        let v = lse_mll_batch_on_tape(&tape, phi, &prior.arch, &[t1.clone(), t2.clone()], &[3.0, 2.0], &eps).unwrap();
        let v = tape.value(v);
        assert!((v[(0, 0)] - lse_mll_with_eps(&prior, &t1, 3.0, &eps).unwrap()).abs() < 1e-12);
        assert!((v[(1, 0)] - lse_mll_with_eps(&prior, &t2, 2.0, &eps).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_prior_samples() {
        let prior = BnnPrior::standard(linear_arch()).unwrap();
        let d = Dataset::regression(Matrix::column(&[0.0]), vec![1.0]).unwrap();
        let cfg = TargetTrainConfig {
            particles_per_prior: 3,
            svgd: SvgdConfig { steps: 0, ..Default::default() },
            seed: 4,
        };
        let post = target_train(std::slice::from_ref(&prior), &d, 1.0, &cfg).unwrap();
        let eps = sample_epsilon(3, 3, &mut substream(4, "target_train_init", &[0]));
        for l in 0..3 {
            assert_eq!(post.particles.particle(l), prior.reparametrize(eps.row(l)).as_slice());
        }
    }

    #[test]
    fn class_predictive_averages() {
        let arch = BnnArch::new(1, vec![], Likelihood::CategoricalSoftmax { classes: 2 }).unwrap();
        // logits (±50) at x = 0 via the bias
        let post = ParticlePosterior {
            particles: ParticleSet::from_rows(&[vec![0.0, 0.0, 50.0, -50.0], vec![0.0, 0.0, -50.0, 50.0]]).unwrap(),
            arch,
        };
        let p = post.predict(&Matrix::column(&[0.0])).unwrap();
        let probs = &p.classification().unwrap().probs[0];
        assert!((probs[0] - 0.5).abs() < 1e-12 && (probs[1] - 0.5).abs() < 1e-12);
    }
}
