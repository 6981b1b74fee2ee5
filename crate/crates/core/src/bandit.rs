//! Fixed-pool Bayesian-optimization bandits with UCB and Thompson sampling.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::bnn::{self, BnnPrior, ParticlePosterior, TargetTrainConfig};
use crate::data::Dataset;
use crate::diffmath::{cholesky, Matrix};
use crate::envs::{csv_err, SinusoidTask};
use crate::error::{Error, Result};
use crate::gp::{self, GpPrior};
use crate::meta::BetaRule;
use crate::rng::{substream, Rng};

pub const DEFAULT_KAPPA: f64 = 2.0;

/// Arms with features and hidden rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmPool {
    features: Matrix,
    rewards: Vec<f64>,
}

impl ArmPool {
    pub fn new(features: Matrix, rewards: Vec<f64>) -> Result<Self> {
        if features.rows() != rewards.len() {
            return Err(Error::LengthMismatch {
                left: features.rows(),
                right: rewards.len(),
            });
        }
        if rewards.len() < 2 {
            return Err(Error::InvalidArgument("a pool needs at least two arms".into()));
        }
        if rewards.iter().chain(features.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pool values must be finite".into()));
        }
        Ok(Self { features, rewards })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn reward(&self, arm: usize) -> f64 {
        self.rewards[arm]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn best_reward(&self) -> f64 {
        self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Observations `(x_a, r(a))` for the chosen arms.
    pub fn observed(&self, chosen: &[usize]) -> Dataset {
        let x: Vec<Vec<f64>> = chosen.iter().map(|&a| self.features.row(a).to_vec()).collect();
        let y = chosen.iter().map(|&a| self.rewards[a]).collect();
        if x.is_empty() {
            return Dataset::empty(self.dim());
        }
        Dataset::regression(Matrix::from_rows(&x).expect("rows share the pool width"), y).expect("finite pool")
    }

    /// Header `x0..x{d-1},reward`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| csv_err(path, e))?;
        let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
        let d = header.len().saturating_sub(1);
        let mut expected: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        expected.push("reward".into());
        if d == 0 || header != expected {
            return Err(Error::Schema(format!(
                "{}: header must be x0..x{{d-1}},reward",
                path.display()
            )));
        }
        let mut xs = Vec::new();
        let mut rewards = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Schema(format!("{} row {}: bad number {field:?}", path.display(), line + 1)))?;
                if j < d {
                    xs.push(v);
                } else {
                    rewards.push(v);
                }
            }
        }
        let features = Matrix::new(rewards.len(), d, xs).map_err(|e| e.context(path.display().to_string()))?;
        Self::new(features, rewards).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| csv_err(path, e))?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("reward".into());
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for a in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(a).iter().map(f64::to_string).collect();
            rec.push(self.rewards[a].to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Posterior over arm values after fitting a surrogate.
pub trait ArmPosterior {
    /// Posterior mean and standard deviation per row of `x`.
    fn mean_std(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)>;
    /// One joint sample of the values at all rows of `x`.
    fn sample_joint(&self, x: &Matrix, rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Refits from scratch on every call.
pub trait Surrogate {
    type Posterior: ArmPosterior;
    fn fit(&self, observed: &Dataset) -> Result<Self::Posterior>;
}

/// Equal-weight mixture of GP posteriors, one per prior.
#[derive(Clone, Debug)]
pub struct GpSurrogate {
    pub priors: Vec<GpPrior>,
}

pub struct GpArmPosterior {
    priors: Vec<GpPrior>,
    observed: Dataset,
}

impl Surrogate for GpSurrogate {
    type Posterior = GpArmPosterior;

    fn fit(&self, observed: &Dataset) -> Result<GpArmPosterior> {
        if self.priors.is_empty() {
            return Err(Error::EmptyInput("GP surrogate needs at least one prior"));
        }
        Ok(GpArmPosterior {
            priors: self.priors.clone(),
            observed: observed.clone(),
        })
    }
}

impl ArmPosterior for GpArmPosterior {
    fn mean_std(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let comps = self
            .priors
            .iter()
            .map(|p| gp::gp_predict(p, &self.observed, x))
            .collect::<Result<Vec<_>>>()?;
        let mix = crate::predictive::MixturePredictive::new(comps)?;
        Ok((mix.mean(), mix.variance().into_iter().map(f64::sqrt).collect()))
    }

    /// Picks a prior uniformly, then draws the latent function jointly.
    fn sample_joint(&self, x: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
        let k = rng.random_range(0..self.priors.len());
        let (mean, cov) = gp::gp_posterior_latent(&self.priors[k], &self.observed, x)?;
        let l = cholesky(&symmetrize(cov), &GP_SAMPLE_JITTER)?.factor;
        let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        Ok(mean.iter().zip(l.matvec(&z)).map(|(m, e)| m + e).collect())
    }
}

/// Posterior covariances of nearly observed arms are close to singular.
const GP_SAMPLE_JITTER: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

fn symmetrize(mut a: Matrix) -> Matrix {
    for i in 0..a.rows() {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// BNN particle posterior obtained by target training from each prior.
#[derive(Clone, Debug)]
pub struct BnnSurrogate {
    pub priors: Vec<BnnPrior>,
    pub beta_rule: BetaRule,
    pub target: TargetTrainConfig,
}

impl Surrogate for BnnSurrogate {
    type Posterior = ParticlePosterior;

    fn fit(&self, observed: &Dataset) -> Result<ParticlePosterior> {
        let beta = self.beta_rule.value(observed.len().max(1));
        bnn::target_train(&self.priors, observed, beta, &self.target)
    }
}

impl ArmPosterior for ParticlePosterior {
    fn mean_std(&self, x: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let mix = self.predict(x)?;
        let mix = mix.regression()?;
        Ok((mix.mean(), mix.variance().into_iter().map(f64::sqrt).collect()))
    }

    /// One particle chosen uniformly, evaluated at every arm.
    fn sample_joint(&self, x: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
        let k = rng.random_range(0..self.particles.len());
        self.particle_mean(k, x)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `argmax_a mean(a) + κ·std(a)`, lowest index on ties.
pub fn ucb_select(posterior: &impl ArmPosterior, pool: &ArmPool, kappa: f64) -> Result<usize> {
    let (mean, std) = posterior.mean_std(pool.features())?;
    let scores: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + kappa * s).collect();
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFiniteValue);
    }
    Ok(argmax(&scores))
}

/// Argmax of one joint posterior sample.
pub fn ts_select(posterior: &impl ArmPosterior, pool: &ArmPool, rng: &mut Rng) -> Result<usize> {
    let sample = posterior.sample_joint(pool.features(), rng)?;
    if sample.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFiniteValue);
    }
    Ok(argmax(&sample))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Policy {
    Ucb { kappa: f64 },
    Thompson,
    /// Uniformly random arm; ignores the surrogate.
    Random,
    /// Always the best arm; ignores the surrogate.
    Oracle,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BanditTrace {
    pub chosen: Vec<usize>,
    pub rewards: Vec<f64>,
    pub avg_regret: Vec<f64>,
    pub simple_regret: Vec<f64>,
}

pub const TRACE_CSV_HEADER: &str = "t,arm,reward,avg_regret,simple_regret";

impl BanditTrace {
    pub fn len(&self) -> usize {
        self.chosen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chosen.is_empty()
    }

    fn push(&mut self, arm: usize, reward: f64, best: f64) {
        self.chosen.push(arm);
        self.rewards.push(reward);
        let t = self.rewards.len() as f64;
        let gap = self.rewards.iter().map(|r| best - r).sum::<f64>() / t;
        let top = self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.avg_regret.push(gap);
        self.simple_regret.push(best - top);
    }

    /// One row per round, `t` starting at 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_CSV_HEADER);
        s.push('\n');
        for t in 0..self.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                t + 1,
                self.chosen[t],
                self.rewards[t],
                self.avg_regret[t],
                self.simple_regret[t]
            ));
        }
        s
    }
}

/// Select, observe, refit for `t_max` rounds. Round `t` only sees the
/// rewards of rounds `< t`.
pub fn run_bandit<S: Surrogate>(surrogate: &S, pool: &ArmPool, t_max: usize, policy: Policy, rng: &mut Rng) -> Result<BanditTrace> {
    if t_max == 0 {
        return Err(Error::InvalidArgument("T must be >= 1".into()));
    }
    let best = pool.best_reward();
    let mut trace = BanditTrace::default();
    for t in 0..t_max {
        let arm = match policy {
            Policy::Random => rng.random_range(0..pool.len()),
            Policy::Oracle => argmax(pool.rewards()),
            Policy::Ucb { kappa } => {
                let post = surrogate.fit(&pool.observed(&trace.chosen))?;
                ucb_select(&post, pool, kappa)
            }
            .map_err(|e| e.context(format!("round {t}")))?,
            Policy::Thompson => {
                let post = surrogate.fit(&pool.observed(&trace.chosen))?;
                ts_select(&post, pool, rng)
            }
            .map_err(|e| e.context(format!("round {t}")))?,
        };
        trace.push(arm, pool.reward(arm), best);
    }
    Ok(trace)
}

/// Synthetic arm family `r(x) = f_sin(5·x_0) + wᵀx` on `[−1, 1]^d`, with
/// `f_sin` a random Sinusoid task and `w ~ N(0, w_scale²·I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmFamily {
    pub d: usize,
    pub w_scale: f64,
}

impl Default for ArmFamily {
    fn default() -> Self {
        Self { d: 2, w_scale: 0.5 }
    }
}

/// One member of an [`ArmFamily`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmTask {
    pub sinusoid: SinusoidTask,
    pub w: Vec<f64>,
}

impl ArmTask {
    pub fn reward(&self, x: &[f64]) -> f64 {
        self.sinusoid.f(5.0 * x[0]) + self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

impl ArmFamily {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("arm features need d >= 1".into()));
        }
        if !(self.w_scale >= 0.0 && self.w_scale.is_finite()) {
            return Err(Error::InvalidArgument("w_scale must be >= 0".into()));
        }
        Ok(())
    }

    pub fn sample_task(&self, rng: &mut Rng) -> Result<ArmTask> {
        self.validate()?;
        let normal = Normal::new(0.0, self.w_scale).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let sinusoid = SinusoidTask::sample(rng);
        let w = (0..self.d).map(|_| normal.sample(rng)).collect();
        Ok(ArmTask { sinusoid, w })
    }

    pub fn sample_features(&self, n: usize, rng: &mut Rng) -> Matrix {
        let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        Matrix::new(n, self.d, (0..n * self.d).map(|_| u.sample(rng)).collect()).expect("finite features")
    }

    /// `m` noisy observations of a fresh task, for meta-training.
    pub fn sample_dataset(&self, m: usize, rng: &mut Rng) -> Result<Dataset> {
        let task = self.sample_task(rng)?;
        let x = self.sample_features(m, rng);
        let noise = task.sinusoid.noise;
        let y = (0..m)
            .map(|i| task.reward(x.row(i)) + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::regression(x, y)
    }

    /// A pool of `arms` arms of a fresh task with noise-free rewards.
    pub fn sample_pool(&self, arms: usize, rng: &mut Rng) -> Result<ArmPool> {
        let task = self.sample_task(rng)?;
        let x = self.sample_features(arms, rng);
        let r = (0..arms).map(|i| task.reward(x.row(i))).collect();
        ArmPool::new(x, r)
    }

    /// Meta-training tasks from substreams `"bandit_meta_train"[i]`.
    pub fn meta_train_tasks(&self, n: usize, m: usize, seed: u64) -> Result<Vec<Dataset>> {
        (0..n)
            .map(|i| self.sample_dataset(m, &mut substream(seed, "bandit_meta_train", &[i as u64])))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed {
        mean: Vec<f64>,
        std: Vec<f64>,
    }

    impl ArmPosterior for Fixed {
        fn mean_std(&self, _: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((self.mean.clone(), self.std.clone()))
        }
        fn sample_joint(&self, _: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
            Ok(self
                .mean
                .iter()
                .zip(&self.std)
                .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect())
        }
    }

    fn pool3() -> ArmPool {
        ArmPool::new(Matrix::column(&[0.0, 1.0, 2.0]), vec![0.1, 0.5, 0.3]).unwrap()
    }

    #[test]
    fn ucb_examples() {
        let post = Fixed {
            mean: vec![0.0, 1.0, 0.0],
            std: vec![1.0, 0.0, 2.0],
        };
        assert_eq!(ucb_select(&post, &pool3(), 1.0).unwrap(), 2);
        assert_eq!(ucb_select(&post, &pool3(), 0.0).unwrap(), 1);
        let flat = Fixed {
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        assert_eq!(ucb_select(&flat, &pool3(), 2.0).unwrap(), 0);
    }

    #[test]
    fn degenerate_ts_is_greedy() {
        let post = Fixed {
            mean: vec![0.2, 0.9, 0.1],
            std: vec![0.0; 3],
        };
        let mut rng = substream(0, "test", &[]);
        for _ in 0..20 {
            assert_eq!(ts_select(&post, &pool3(), &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn oracle_has_zero_regret() {
        let gp = GpSurrogate { priors: vec![] };
        let tr = run_bandit(&gp, &pool3(), 5, Policy::Oracle, &mut substream(0, "test", &[])).unwrap();
        assert!(tr.avg_regret.iter().chain(&tr.simple_regret).all(|&r| r == 0.0));
        assert_eq!(tr.chosen, vec![1; 5]);
    }

    #[test]
    fn csv_trace_layout() {
        let gp = GpSurrogate { priors: vec![] };
        let tr = run_bandit(&gp, &pool3(), 2, Policy::Oracle, &mut substream(0, "test", &[])).unwrap();
        assert_eq!(tr.to_csv(), "t,arm,reward,avg_regret,simple_regret\n1,1,0.5,0,0\n2,1,0.5,0,0\n");
    }
}
