//! Gaussian-process base learner with a neural mean function and a kernel on
//! learned features: `k(x, x') = ½·exp(−‖Φ(x) − Φ(x')‖²)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diffmath::{
    cholesky, tri_solve, tri_solve_upper_t, Matrix, MlpConfig, ParamVector, Tape, Var,
    DEFAULT_JITTER_SCHEDULE,
};
use crate::error::{Error, Result};
use crate::predictive::GaussianPredictive;

pub const KERNEL_SCALE: f64 = 0.5;

/// Architecture of a GP prior; the learnable values live in [`GpPrior::phi`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub input_dim: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_hidden")]
    pub mean_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub feature_hidden: Vec<usize>,
    #[serde(default = "default_noise_sigma")]
    pub init_noise_sigma: f64,
}

fn default_feature_dim() -> usize {
    2
}

fn default_hidden() -> Vec<usize> {
    vec![32]
}

fn default_noise_sigma() -> f64 {
    0.1
}

impl GpConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            feature_dim: default_feature_dim(),
            mean_hidden: default_hidden(),
            feature_hidden: default_hidden(),
            init_noise_sigma: default_noise_sigma(),
        }
    }

    pub fn mean_config(&self) -> Result<MlpConfig> {
        MlpConfig::new(self.input_dim, self.mean_hidden.clone(), 1)
    }

    pub fn feature_config(&self) -> Result<MlpConfig> {
        MlpConfig::new(self.input_dim, self.feature_hidden.clone(), self.feature_dim)
    }

    pub fn layout(&self) -> Result<Vec<(&'static str, usize)>> {
        if !(self.init_noise_sigma > 0.0) {
            return Err(Error::InvalidArgument("initial noise sigma must be > 0".into()));
        }
        Ok(vec![
            ("mean_net", self.mean_config()?.param_count()),
            ("feature_net", self.feature_config()?.param_count()),
            ("ln_noise_sigma", 1),
        ])
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layout()?.iter().map(|(_, l)| l).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpPrior {
    pub phi: ParamVector,
    pub mean_config: MlpConfig,
    pub feature_config: MlpConfig,
}

impl GpPrior {
    /// Builds a prior from a flat parameter vector laid out per `cfg`.
    pub fn from_values(cfg: &GpConfig, values: Vec<f64>) -> Result<Self> {
        let phi = ParamVector::from_layout(&cfg.layout()?, values)?;
        Ok(Self {
            phi,
            mean_config: cfg.mean_config()?,
            feature_config: cfg.feature_config()?,
        })
    }

    /// All network weights zero, noise at `cfg.init_noise_sigma`.
    pub fn zeros(cfg: &GpConfig) -> Result<Self> {
        let mut p = Self::from_values(cfg, vec![0.0; cfg.param_count()?])?;
        p.phi.segment_mut("ln_noise_sigma").unwrap()[0] = cfg.init_noise_sigma.ln();
        Ok(p)
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.ln_noise_sigma()).exp()
    }

    fn ln_noise_sigma(&self) -> f64 {
        self.phi.segment("ln_noise_sigma").map(|s| s[0]).unwrap_or(0.0)
    }

    fn segment_offset(&self, name: &str) -> usize {
        self.phi.range(name).map(|r| r.start).unwrap_or(0)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.mean_config.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "inputs have {} columns, prior expects {}",
                x.cols(),
                self.mean_config.input_dim
            )));
        }
        Ok(())
    }

    pub fn mean(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self
            .mean_config
            .forward_batch(self.phi.segment("mean_net").unwrap_or(&[]), x)?
            .into_vec())
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        self.feature_config
            .forward_batch(self.phi.segment("feature_net").unwrap_or(&[]), x)
    }
}

fn kernel_from_features(f: &Matrix, f2: &Matrix) -> Matrix {
    let mut k = Matrix::zeros(f.rows(), f2.rows());
    for i in 0..f.rows() {
        for j in 0..f2.rows() {
            let d: f64 = f.row(i).iter().zip(f2.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            k[(i, j)] = KERNEL_SCALE * (-d).exp();
        }
    }
    k
}

/// `K[i][j] = ½·exp(−‖Φ(x_i) − Φ(x'_j)‖²)`.
pub fn kernel_matrix(prior: &GpPrior, x: &Matrix, x2: &Matrix) -> Result<Matrix> {
    Ok(kernel_from_features(&prior.features(x)?, &prior.features(x2)?))
}

/// Records `ln p(y | X, φ)` on `tape`. `phi` is a `1×N` node laid out like
/// `prior.phi`; only the configs of `prior` are used.
pub fn gp_mll_on_tape(tape: &Tape, phi: Var, prior: &GpPrior, data: &Dataset) -> Result<Var> {
    let y = data.y()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    prior.check_input(data.x())?;
    let m = data.len();
    let x = tape.constant(data.x().clone());
    let mean = prior
        .mean_config
        .forward_on_tape(tape, phi, prior.segment_offset("mean_net"), x);
    let feats = prior
        .feature_config
        .forward_on_tape(tape, phi, prior.segment_offset("feature_net"), x);
    let k = tape.scale(tape.exp(tape.neg(tape.sq_dist(feats, feats))), KERNEL_SCALE);
    let ln_sigma = tape.slice(phi, prior.segment_offset("ln_noise_sigma"), 1, 1);
    let noise_var = tape.exp(tape.scale(ln_sigma, 2.0));
    let eye = tape.constant(Matrix::identity(m));
    let kt = tape.add(k, tape.mul_scalar(eye, noise_var));
    let jitter = cholesky(&tape.value(kt), &DEFAULT_JITTER_SCHEDULE)?.jitter;
    let kt = if jitter > 0.0 { tape.add_diag(kt, jitter) } else { kt };
    let l = tape.cholesky(kt)?;
    let r = tape.sub(tape.constant(Matrix::column(y)), mean);
    let z = tape.tri_solve(l, r)?;
    let quad = tape.sum(tape.square(z));
    let logdet = tape.scale(tape.sum_log_diag(l), 2.0);
    let total = tape.add(quad, logdet);
    Ok(tape.offset(tape.scale(total, -0.5), -0.5 * m as f64 * (2.0 * PI).ln()))
}

/// Marginal log-likelihood `−½rᵀK̃⁻¹r − ½ln|K̃| − (m/2)ln 2π`, `K̃ = K + σ²I`.
pub fn gp_mll(prior: &GpPrior, data: &Dataset) -> Result<f64> {
    let y = data.y()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = data.len();
    let mut kt = kernel_matrix(prior, data.x(), data.x())?;
    let s2 = prior.noise_variance();
    for i in 0..m {
        kt[(i, i)] += s2;
    }
    let chol = cholesky(&kt, &DEFAULT_JITTER_SCHEDULE)?;
    let mean = prior.mean(data.x())?;
    let r: Vec<f64> = y.iter().zip(&mean).map(|(a, b)| a - b).collect();
    let z = tri_solve(&chol.factor, &r)?;
    let quad: f64 = z.iter().map(|v| v * v).sum();
    Ok(-0.5 * quad - 0.5 * chol.log_det() - 0.5 * m as f64 * (2.0 * PI).ln())
}

/// Posterior mean and latent covariance of `f` at `xq`, without observation
/// noise. With an empty training set this is the prior.
pub fn gp_posterior_latent(prior: &GpPrior, train: &Dataset, xq: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let y = train.y()?;
    let fq = prior.features(xq)?;
    let mut mean = prior.mean(xq)?;
    let mut cov = kernel_from_features(&fq, &fq);
    if train.is_empty() {
        return Ok((mean, cov));
    }
    let ft = prior.features(train.x())?;
    let mut kt = kernel_from_features(&ft, &ft);
    let s2 = prior.noise_variance();
    for i in 0..train.len() {
        kt[(i, i)] += s2;
    }
    let chol = cholesky(&kt, &DEFAULT_JITTER_SCHEDULE)?;
    let tm = prior.mean(train.x())?;
    let r: Vec<f64> = y.iter().zip(&tm).map(|(a, b)| a - b).collect();
    let alpha = tri_solve_upper_t(&chol.factor, &tri_solve(&chol.factor, &r)?)?;
    let kstar = kernel_from_features(&fq, &ft);
    // V = L⁻¹ K*ᵀ, one column per query point
    let mut v = Matrix::zeros(train.len(), xq.rows());
    for q in 0..xq.rows() {
        mean[q] += kstar.row(q).iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
        let col = tri_solve(&chol.factor, kstar.row(q))?;
        for (i, c) in col.into_iter().enumerate() {
            v[(i, q)] = c;
        }
    }
    let vtv = v.tmatmul(&v);
    cov.add_assign(&vtv.scale(-1.0));
    Ok((mean, cov))
}

/// Posterior predictive at `xq`, variances including `σ²`.
pub fn gp_predict(prior: &GpPrior, train: &Dataset, xq: &Matrix) -> Result<GaussianPredictive> {
    let (mean, cov) = gp_posterior_latent(prior, train, xq)?;
    let s2 = prior.noise_variance();
    let variance = (0..xq.rows()).map(|i| cov[(i, i)].max(0.0) + s2).collect();
    Ok(GaussianPredictive { mean, variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::grad;

    fn small_cfg() -> GpConfig {
        GpConfig {
            input_dim: 1,
            feature_dim: 1,
            mean_hidden: vec![],
            feature_hidden: vec![],
            init_noise_sigma: 0.1,
        }
    }

    fn prior_with(feature_w: f64, ln_sigma: f64) -> GpPrior {
        // mean: w=0,b=0; feature: w, b=0
        GpPrior::from_values(&small_cfg(), vec![0.0, 0.0, feature_w, 0.0, ln_sigma]).unwrap()
    }

    #[test]
    fn identity_feature_kernel() {
        let p = prior_with(1.0, 0.0);
        let k = kernel_matrix(&p, &Matrix::column(&[0.0]), &Matrix::column(&[1.0])).unwrap();
        assert!((k[(0, 0)] - 0.5 * (-1f64).exp()).abs() < 1e-15);
        let kk = kernel_matrix(&p, &Matrix::column(&[0.0, 1.0]), &Matrix::column(&[0.0, 1.0])).unwrap();
        assert_eq!(kk[(0, 0)], 0.5);
        assert_eq!(kk[(1, 1)], 0.5);
    }

    #[test]
    fn zero_feature_net_collapses() {
        let p = prior_with(0.0, 0.0);
        let k = kernel_matrix(&p, &Matrix::column(&[0.0, 3.0, -2.0]), &Matrix::column(&[1.0, 5.0])).unwrap();
        assert!(k.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn single_point_mll() {
        // σ² = 0.5 ⇒ K̃ = 1
        let p = prior_with(1.0, 0.5 * 0.5f64.ln());
        let d = Dataset::regression(Matrix::column(&[0.3]), vec![0.0]).unwrap();
        assert!((gp_mll(&p, &d).unwrap() + 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
        let d = Dataset::regression(Matrix::column(&[0.3]), vec![1.7]).unwrap();
        let want = -0.5 * 1.7 * 1.7 - 0.5 * (2.0 * PI).ln();
        assert!((gp_mll(&p, &d).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn tape_mll_matches_plain_mll() {
        let p = prior_with(0.8, -1.0);
        let d = Dataset::regression(Matrix::column(&[0.0, 0.5, 2.0]), vec![0.1, -0.4, 1.0]).unwrap();
        let g = grad(|t, phi| gp_mll_on_tape(t, phi, &p, &d), &p.phi).unwrap();
        assert!((g.value - gp_mll(&p, &d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn prior_predictive_for_empty_train() {
        let p = prior_with(1.0, -1.0);
        let pred = gp_predict(&p, &Dataset::empty(1), &Matrix::column(&[0.0, 2.0])).unwrap();
        assert_eq!(pred.mean, vec![0.0, 0.0]);
        for v in pred.variance {
            assert!((v - (0.5 + (-2f64).exp())).abs() < 1e-15);
        }
    }

    #[test]
    fn one_point_posterior_matches_hand_formula() {
        let p = prior_with(1.0, -1.0);
        let s2 = (-2f64).exp();
        let d = Dataset::regression(Matrix::column(&[0.0]), vec![1.2]).unwrap();
        let pred = gp_predict(&p, &d, &Matrix::column(&[0.7])).unwrap();
        let ks = 0.5 * (-0.49f64).exp();
        let mean = ks / (0.5 + s2) * 1.2;
        let var = 0.5 - ks * ks / (0.5 + s2) + s2;
        assert!((pred.mean[0] - mean).abs() < 1e-12);
        assert!((pred.variance[0] - var).abs() < 1e-12);
    }

    #[test]
    fn interpolates_in_noise_free_limit() {
        let p = prior_with(1.0, 0.5 * 1e-8f64.ln());
        let d = Dataset::regression(Matrix::column(&[-1.0, 0.0, 1.5]), vec![0.3, -0.2, 0.9]).unwrap();
        let pred = gp_predict(&p, &d, d.x()).unwrap();
        for (m, y) in pred.mean.iter().zip([0.3, -0.2, 0.9]) {
            assert!((m - y).abs() < 1e-3);
        }
    }
}
