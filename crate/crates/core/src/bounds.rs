//! PAC-Bayesian single-task and meta-learning bounds, with exact evaluation
//! on finite hypothesis spaces.

use serde::{Deserialize, Serialize};

use crate::diffmath::logsumexp;
use crate::error::{Error, Result};

/// Tolerance on the normalization of categorical weights.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Assumption on the loss used by the `Ψ` and constant terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossModel {
    /// Loss with values in `[a, b]`.
    Bounded { a: f64, b: f64 },
    /// Sub-gamma loss; `(s1_sq, c1)` on the data level, `(s2_sq, c2)` on
    /// the task level.
    SubGamma { s1_sq: f64, c1: f64, s2_sq: f64, c2: f64 },
}

impl LossModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossModel::Bounded { a, b } => {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(Error::InvalidArgument(format!("bounded loss needs a <= b, got [{a}, {b}]")));
                }
            }
            LossModel::SubGamma { s1_sq, c1, s2_sq, c2 } => {
                if [s1_sq, c1, s2_sq, c2].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidArgument("sub-gamma parameters must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// A common `β` or one per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Beta {
    Common(f64),
    PerTask(Vec<f64>),
}

impl Beta {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Beta::Common(b) => *b,
            Beta::PerTask(v) => v[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub delta: f64,
    pub lambda: f64,
    pub beta: Beta,
    pub n: usize,
    pub m_list: Vec<usize>,
    pub loss_model: LossModel,
}

impl BoundSpec {
    /// `n` tasks of size `m` with `λ = n`, `β = m`.
    pub fn standard(n: usize, m: usize, delta: f64, loss_model: LossModel) -> Self {
        Self {
            delta,
            lambda: n as f64,
            beta: Beta::Common(m as f64),
            n,
            m_list: vec![m; n],
            loss_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidArgument(format!("delta must be in (0, 1], got {}", self.delta)));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if self.m_list.len() != self.n {
            return Err(Error::LengthMismatch {
                left: self.m_list.len(),
                right: self.n,
            });
        }
        if self.m_list.contains(&0) {
            return Err(Error::InvalidArgument("all m_i must be >= 1".into()));
        }
        match &self.beta {
            Beta::Common(b) => check_beta(*b)?,
            Beta::PerTask(v) => {
                if v.len() != self.n {
                    return Err(Error::LengthMismatch { left: v.len(), right: self.n });
                }
                v.iter().try_for_each(|b| check_beta(*b))?;
            }
        }
        self.loss_model.validate()
    }

    /// Effective sample size `n / Σ 1/m_i`.
    pub fn m_eff(&self) -> Result<f64> {
        harmonic_mean_size(&self.m_list)
    }

    /// Effective `β`: the common value, or `n / Σ 1/β_i`.
    pub fn beta_eff(&self) -> f64 {
        match &self.beta {
            Beta::Common(b) => *b,
            Beta::PerTask(v) => v.len() as f64 / v.iter().map(|b| 1.0 / b).sum::<f64>(),
        }
    }

    /// Coefficient `1/λ + 1/(nβ)` of the hyper-posterior KL.
    pub fn kl_hyper_coef(&self) -> f64 {
        1.0 / self.lambda + 1.0 / (self.n as f64 * self.beta_eff())
    }
}

fn check_beta(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta must be > 0, got {b}")))
    }
}

/// Additive decomposition of the meta-learning bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub empirical_term: f64,
    /// `(1/λ + 1/(nβ))·KL(𝒬‖𝒫)`.
    pub kl_hyper: f64,
    /// `(1/n) Σ (1/β_i)·E_𝒬[KL(Q_i‖P)]`.
    pub kl_task_avg: f64,
    pub c_term: f64,
    pub total: f64,
}

/// `(Σ 1/m_i)⁻¹`.
pub fn harmonic_mean(m_list: &[usize]) -> Result<f64> {
    if m_list.is_empty() {
        return Err(Error::EmptyList("m_list"));
    }
    if m_list.contains(&0) {
        return Err(Error::InvalidArgument("all m_i must be >= 1".into()));
    }
    Ok(1.0 / m_list.iter().map(|&m| 1.0 / m as f64).sum::<f64>())
}

/// `n·(Σ 1/m_i)⁻¹`, the usual harmonic mean.
pub fn harmonic_mean_size(m_list: &[usize]) -> Result<f64> {
    Ok(m_list.len() as f64 * harmonic_mean(m_list)?)
}

/// Upper bound on `Ψ(β, m)`.
pub fn psi_bound(beta: f64, m: f64, loss_model: &LossModel) -> Result<f64> {
    loss_model.validate()?;
    match *loss_model {
        LossModel::Bounded { a, b } => Ok(beta * beta * (b - a) * (b - a) / (8.0 * m)),
        LossModel::SubGamma { s1_sq, c1, .. } => sub_gamma_term(beta, m, s1_sq, c1),
    }
}

/// `x²s²/(2k(1 − cx/k))`.
fn sub_gamma_term(x: f64, k: f64, s_sq: f64, c: f64) -> Result<f64> {
    let ratio = c * x / k;
    if ratio >= 1.0 {
        return Err(Error::SubGammaDomain { ratio });
    }
    Ok(x * x * s_sq / (2.0 * k * (1.0 - ratio)))
}

/// Single-task bound `L̂ + (1/β)[KL + ln(1/δ) + Ψ(β, m)]`, with `m` the
/// effective sample size of the spec.
pub fn alquier_bound(empirical: f64, kl: f64, spec: &BoundSpec) -> Result<f64> {
    spec.validate()?;
    check_kl(kl)?;
    let beta = spec.beta_eff();
    let psi = psi_bound(beta, spec.m_eff()?, &spec.loss_model)?;
    Ok(empirical + (kl + (1.0 / spec.delta).ln() + psi) / beta)
}

/// Constant term `C(δ, λ, β)` of the meta-learning bound.
pub fn c_term(spec: &BoundSpec) -> Result<f64> {
    spec.validate()?;
    let n = spec.n as f64;
    let m = spec.m_eff()?;
    let beta = spec.beta_eff();
    let conf = (1.0 / spec.delta).ln() / n.sqrt();
    match spec.loss_model {
        LossModel::Bounded { a, b } => Ok((spec.lambda / (8.0 * n) + beta / (8.0 * m)) * (b - a) * (b - a) + conf),
        LossModel::SubGamma { s1_sq, c1, s2_sq, c2 } => {
            // λ s²/(2n(1 − cλ/n)) is x² s²/(2k(1 − cx/k)) divided by x
            let task = sub_gamma_term(spec.lambda, n, s2_sq, c2)? / spec.lambda;
            let data = sub_gamma_term(beta, m, s1_sq, c1)? / beta;
            Ok(task + data + conf)
        }
    }
}

fn check_kl(kl: f64) -> Result<()> {
    if kl >= 0.0 && kl.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("KL must be finite and >= 0, got {kl}")))
    }
}

/// Bound holding for arbitrary task posteriors.
pub fn meta_bound_uniform(empirical_multitask: f64, kl_hyper: f64, kl_task_list: &[f64], spec: &BoundSpec) -> Result<BoundReport> {
    spec.validate()?;
    check_kl(kl_hyper)?;
    if kl_task_list.len() != spec.n {
        return Err(Error::LengthMismatch {
            left: kl_task_list.len(),
            right: spec.n,
        });
    }
    kl_task_list.iter().try_for_each(|k| check_kl(*k))?;
    let n = spec.n as f64;
    let kl_task_avg = kl_task_list
        .iter()
        .enumerate()
        .map(|(i, k)| k / spec.beta.get(i))
        .sum::<f64>()
        / n;
    let kl_hyper = spec.kl_hyper_coef() * kl_hyper;
    let c = c_term(spec)?;
    Ok(BoundReport {
        empirical_term: empirical_multitask,
        kl_hyper,
        kl_task_avg,
        c_term: c,
        total: empirical_multitask + kl_hyper + kl_task_avg + c,
    })
}

/// Bound for Gibbs task posteriors; `expected_ln_z[i]` is `E_𝒬[ln Z_β(S_i, P)]`.
pub fn meta_bound_gibbs(expected_ln_z: &[f64], kl_hyper: f64, spec: &BoundSpec) -> Result<f64> {
    spec.validate()?;
    check_kl(kl_hyper)?;
    if expected_ln_z.len() != spec.n {
        return Err(Error::LengthMismatch {
            left: expected_ln_z.len(),
            right: spec.n,
        });
    }
    let n = spec.n as f64;
    let data = -expected_ln_z
        .iter()
        .enumerate()
        .map(|(i, z)| z / spec.beta.get(i))
        .sum::<f64>()
        / n;
    Ok(data + spec.kl_hyper_coef() * kl_hyper + c_term(spec)?)
}

/// Bound at the PAC-optimal hyper-posterior in terms of `ln Z^II`.
pub fn level2_bound(ln_z2: f64, spec: &BoundSpec) -> Result<f64> {
    if !ln_z2.is_finite() {
        return Err(Error::InvalidArgument(format!("ln Z^II must be finite, got {ln_z2}")));
    }
    Ok(-spec.kl_hyper_coef() * ln_z2 + c_term(spec)?)
}

fn check_simplex(p: &[f64], what: &'static str, strictly_positive: bool) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyList(what));
    }
    if let Some(v) = p.iter().find(|&&v| !(v.is_finite() && if strictly_positive { v > 0.0 } else { v >= 0.0 })) {
        return Err(Error::InvalidArgument(format!("{what} has invalid weight {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL * p.len().max(1) as f64 {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// `Σ q ln(q/p)` with `0·ln 0 = 0`.
pub fn kl_categorical(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::LengthMismatch { left: q.len(), right: p.len() });
    }
    check_simplex(q, "q", false)?;
    if let Some(v) = p.iter().find(|&&v| !(v.is_finite() && v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("p has invalid weight {v}")));
    }
    let mut kl = 0.0;
    for (index, (&qi, &pi)) in q.iter().zip(p).enumerate() {
        if qi == 0.0 {
            continue;
        }
        if pi == 0.0 {
            return Err(Error::SupportViolation { index, mass: qi });
        }
        kl += qi * (qi / pi).ln();
    }
    // rounding can push an exact zero slightly negative
    Ok(kl.max(0.0))
}

/// `Q*(h) ∝ P(h)·exp(−β g(h))`.
pub fn gibbs_posterior_finite(prior: &[f64], g: &[f64], beta: f64) -> Result<Vec<f64>> {
    let logits = gibbs_logits(prior, g, beta)?;
    let z = logsumexp(&logits)?;
    Ok(logits.iter().map(|l| (l - z).exp()).collect())
}

fn gibbs_logits(prior: &[f64], g: &[f64], beta: f64) -> Result<Vec<f64>> {
    if prior.len() != g.len() {
        return Err(Error::LengthMismatch {
            left: prior.len(),
            right: g.len(),
        });
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be >= 0, got {beta}")));
    }
    check_simplex(prior, "prior", true)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("losses must be finite".into()));
    }
    Ok(prior.iter().zip(g).map(|(p, gi)| p.ln() - beta * gi).collect())
}

/// `ln Σ_h P(h)·exp(−β g(h))`.
pub fn log_partition(prior: &[f64], g: &[f64], beta: f64) -> Result<f64> {
    logsumexp(&gibbs_logits(prior, g, beta)?)
}

/// `β·E_Q[g] + KL(Q‖P)`.
pub fn gibbs_objective(q: &[f64], g: &[f64], beta: f64, prior: &[f64]) -> Result<f64> {
    if q.len() != g.len() {
        return Err(Error::LengthMismatch { left: q.len(), right: g.len() });
    }
    let expected: f64 = q.iter().zip(g).filter(|(qi, _)| **qi > 0.0).map(|(qi, gi)| qi * gi).sum();
    Ok(beta * expected + kl_categorical(q, prior)?)
}

/// Hypotheses, per-task per-sample losses and a default prior, all
/// enumerable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteHypothesisSpace {
    /// `loss_table[task][h][j]`.
    pub loss_table: Vec<Vec<Vec<f64>>>,
    pub prior: Vec<f64>,
}

impl FiniteHypothesisSpace {
    pub fn new(loss_table: Vec<Vec<Vec<f64>>>, prior: Vec<f64>) -> Result<Self> {
        let s = Self { loss_table, prior };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.prior, "prior", true)?;
        for (t, task) in self.loss_table.iter().enumerate() {
            if task.len() != self.prior.len() {
                return Err(Error::Schema(format!(
                    "task {t} has losses for {} hypotheses, expected {}",
                    task.len(),
                    self.prior.len()
                )));
            }
            let m = task[0].len();
            if m == 0 {
                return Err(Error::EmptyTask(t.to_string()));
            }
            if task.iter().any(|row| row.len() != m || row.iter().any(|v| !v.is_finite())) {
                return Err(Error::Schema(format!("task {t} has ragged or non-finite losses")));
            }
        }
        Ok(())
    }

    pub fn hypotheses(&self) -> usize {
        self.prior.len()
    }

    pub fn tasks(&self) -> usize {
        self.loss_table.len()
    }

    pub fn task_size(&self, task: usize) -> usize {
        self.loss_table[task][0].len()
    }

    /// `L̂(h, S_task)` for every hypothesis.
    pub fn empirical_losses(&self, task: usize) -> Vec<f64> {
        self.loss_table[task]
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .collect()
    }

    /// Exact `ln Z_β(S_task, P)`; `prior` defaults to the space's prior.
    pub fn log_partition(&self, task: usize, prior: Option<&[f64]>, beta: f64) -> Result<f64> {
        self.check_task(task)?;
        log_partition(prior.unwrap_or(&self.prior), &self.empirical_losses(task), beta)
    }

    pub fn gibbs_posterior(&self, task: usize, prior: Option<&[f64]>, beta: f64) -> Result<Vec<f64>> {
        self.check_task(task)?;
        gibbs_posterior_finite(prior.unwrap_or(&self.prior), &self.empirical_losses(task), beta)
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.tasks() {
            return Err(Error::InvalidArgument(format!("task {task} out of range ({} tasks)", self.tasks())));
        }
        Ok(())
    }
}

/// `ln Z_β(S_task, P)` by enumeration.
pub fn log_partition_finite(space: &FiniteHypothesisSpace, task: usize, prior: &[f64], beta: f64) -> Result<f64> {
    space.log_partition(task, Some(prior), beta)
}

/// PAC-optimal hyper-posterior over a finite grid of priors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteHyperPosterior {
    pub weights: Vec<f64>,
    pub ln_z2: f64,
    /// `ln_z[j][i] = ln Z_{β_i}(S_i, P_j)`.
    pub ln_z: Vec<Vec<f64>>,
}

/// `Q*(P_j) ∝ 𝒫(P_j)·exp(Σ_i λ/(nβ_i + λ)·ln Z_{β_i}(S_i, P_j))`.
pub fn pacoh_finite(space: &FiniteHypothesisSpace, prior_grid: &[Vec<f64>], hyper_weights: &[f64], spec: &BoundSpec) -> Result<FiniteHyperPosterior> {
    spec.validate()?;
    if prior_grid.len() != hyper_weights.len() {
        return Err(Error::LengthMismatch {
            left: prior_grid.len(),
            right: hyper_weights.len(),
        });
    }
    check_simplex(hyper_weights, "hyper-prior", true)?;
    if spec.n != space.tasks() {
        return Err(Error::LengthMismatch {
            left: spec.n,
            right: space.tasks(),
        });
    }
    let n = spec.n as f64;
    let ln_z = prior_grid
        .iter()
        .map(|p| (0..spec.n).map(|i| space.log_partition(i, Some(p), spec.beta.get(i))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<f64> = ln_z
        .iter()
        .zip(hyper_weights)
        .map(|(zs, w)| {
            let s: f64 = zs
                .iter()
                .enumerate()
                .map(|(i, z)| spec.lambda / (n * spec.beta.get(i) + spec.lambda) * z)
                .sum();
            w.ln() + s
        })
        .collect();
    let ln_z2 = logsumexp(&logits)?;
    Ok(FiniteHyperPosterior {
        weights: logits.iter().map(|l| (l - ln_z2).exp()).collect(),
        ln_z2,
        ln_z,
    })
}

impl FiniteHyperPosterior {
    /// `E_Q[ln Z_i]` for every task under hyper-posterior weights `q`.
    pub fn expected_ln_z(&self, q: &[f64]) -> Result<Vec<f64>> {
        if q.len() != self.ln_z.len() {
            return Err(Error::LengthMismatch {
                left: q.len(),
                right: self.ln_z.len(),
            });
        }
        let n = self.ln_z.first().map_or(0, Vec::len);
        Ok((0..n)
            .map(|i| q.iter().zip(&self.ln_z).map(|(w, zs)| w * zs[i]).sum())
            .collect())
    }
}
