//! Stein variational gradient descent with an RBF kernel.

use serde::{Deserialize, Serialize};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

/// `K` particles of dimension `dim`, one per row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    values: Matrix,
}

impl ParticleSet {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() == 0 {
            return Err(Error::EmptyInput("particle set needs at least one particle"));
        }
        if values.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("particles must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn particle(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }

    pub fn particle_mut(&mut self, k: usize) -> &mut [f64] {
        self.values.row_mut(k)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn into_values(self) -> Matrix {
        self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(|k| self.particle(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    PlainStep,
    /// Per-coordinate step scaling by a running RMS of past updates.
    AdaptivePerCoordinate { decay: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvgdConfig {
    pub steps: usize,
    pub step_size: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    #[serde(default = "default_optimizer")]
    pub optimizer: Optimizer,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::MedianHeuristic
}

fn default_optimizer() -> Optimizer {
    Optimizer::PlainStep
}

impl Default for SvgdConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            step_size: 1e-2,
            bandwidth: Bandwidth::MedianHeuristic,
            optimizer: Optimizer::PlainStep,
        }
    }
}

impl SvgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidArgument("SVGD step size must be > 0".into()));
        }
        if let Bandwidth::Fixed(l) = self.bandwidth {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidArgument("fixed SVGD bandwidth must be > 0".into()));
            }
        }
        if let Optimizer::AdaptivePerCoordinate { decay } = self.optimizer {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::InvalidArgument("adaptive decay must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Kernel matrix and its gradients. `grads[i]` is a `K×dim` matrix whose row
/// `j` holds `∂k(φ_i, φ_j)/∂φ_i`.
pub struct KernelEvaluation {
    pub matrix: Matrix,
    pub grads: Vec<Matrix>,
}

/// `k(φ, φ') = exp(−‖φ − φ'‖² / (2ℓ))` on all particle pairs.
pub fn rbf_kernel_with_grads(particles: &ParticleSet, bandwidth: f64) -> Result<KernelEvaluation> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument("bandwidth must be > 0".into()));
    }
    let k = particles.len();
    let d = particles.dim();
    let mut matrix = Matrix::zeros(k, k);
    let mut grads = vec![Matrix::zeros(k, d); k];
    for i in 0..k {
        matrix[(i, i)] = 1.0;
        for j in (i + 1)..k {
            let (pi, pj) = (particles.particle(i), particles.particle(j));
            let sq: f64 = pi.iter().zip(pj).map(|(a, b)| (a - b) * (a - b)).sum();
            let v = (-sq / (2.0 * bandwidth)).exp();
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
            for c in 0..d {
                let g = -v * (pi[c] - pj[c]) / bandwidth;
                grads[i][(j, c)] = g;
                grads[j][(i, c)] = -g;
            }
        }
    }
    Ok(KernelEvaluation { matrix, grads })
}

/// `median(pairwise squared distances) / (2 ln(K + 1))`, or 1.0 when the
/// particles are degenerate.
pub fn median_bandwidth(particles: &ParticleSet) -> f64 {
    let k = particles.len();
    let mut d2 = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            d2.push(
                particles
                    .particle(i)
                    .iter()
                    .zip(particles.particle(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
    }
    if d2.is_empty() {
        return 1.0;
    }
    d2.sort_by(f64::total_cmp);
    let n = d2.len();
    let med = if n % 2 == 1 {
        d2[n / 2]
    } else {
        0.5 * (d2[n / 2 - 1] + d2[n / 2])
    };
    let l = med / (2.0 * ((k + 1) as f64).ln());
    if l > 0.0 && l.is_finite() {
        l
    } else {
        1.0
    }
}

fn resolve_bandwidth(particles: &ParticleSet, rule: Bandwidth) -> f64 {
    match rule {
        Bandwidth::MedianHeuristic => median_bandwidth(particles),
        Bandwidth::Fixed(l) => l,
    }
}

/// The kernelised Stein direction
/// `(1/K) Σ_{k'} [k(φ_{k'}, φ_k)·score_{k'} + ∇_{φ_{k'}} k(φ_{k'}, φ_k)]` per particle.
pub fn stein_direction(particles: &ParticleSet, scores: &Matrix, bandwidth: f64) -> Result<Matrix> {
    let kern = rbf_kernel_with_grads(particles, bandwidth)?;
    let (k, d) = (particles.len(), particles.dim());
    let mut out = Matrix::zeros(k, d);
    for target in 0..k {
        let row = out.row_mut(target);
        for src in 0..k {
            let w = kern.matrix[(src, target)];
            let g = kern.grads[src].row(target);
            for ((o, s), gc) in row.iter_mut().zip(scores.row(src)).zip(g) {
                *o += w * s + gc;
            }
        }
        for o in row.iter_mut() {
            *o /= k as f64;
        }
    }
    Ok(out)
}

fn check_scores(particles: &ParticleSet, scores: &Matrix, step: usize) -> Result<()> {
    if scores.shape() != particles.values.shape() {
        return Err(Error::ShapeMismatch(format!(
            "scores {:?} vs particles {:?}",
            scores.shape(),
            particles.values.shape()
        )));
    }
    for k in 0..scores.rows() {
        if scores.row(k).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore { step, particle: k });
        }
    }
    Ok(())
}

/// Stateful SVGD driver: carries the per-coordinate optimizer state across
/// steps.
pub struct Svgd {
    cfg: SvgdConfig,
    history: Option<Matrix>,
    step: usize,
}

impl Svgd {
    pub fn new(cfg: SvgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            history: None,
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update in place and returns the bandwidth that was used.
    pub fn step(&mut self, particles: &mut ParticleSet, scores: &Matrix) -> Result<f64> {
        check_scores(particles, scores, self.step)?;
        let l = resolve_bandwidth(particles, self.cfg.bandwidth);
        let dir = stein_direction(particles, scores, l)?;
        let eta = self.cfg.step_size;
        match self.cfg.optimizer {
            Optimizer::PlainStep => {
                for (p, d) in particles.values.as_mut_slice().iter_mut().zip(dir.as_slice()) {
                    *p += eta * d;
                }
            }
            Optimizer::AdaptivePerCoordinate { decay } => {
                const FUDGE: f64 = 1e-6;
                let hist = match self.history.take() {
                    None => dir.map(|d| d * d),
                    Some(h) => h.zip_map(&dir, |h, d| decay * h + (1.0 - decay) * d * d),
                };
                for ((p, d), h) in particles
                    .values
                    .as_mut_slice()
                    .iter_mut()
                    .zip(dir.as_slice())
                    .zip(hist.as_slice())
                {
                    *p += eta * d / (FUDGE + h.sqrt());
                }
                self.history = Some(hist);
            }
        }
        if let Some(k) = (0..particles.len()).find(|&k| particles.particle(k).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteScore {
                step: self.step,
                particle: k,
            });
        }
        self.step += 1;
        Ok(l)
    }
}

/// One stateless update; the adaptive optimizer behaves as on its first step.
pub fn svgd_step(particles: &ParticleSet, scores: &Matrix, cfg: &SvgdConfig) -> Result<ParticleSet> {
    let mut out = particles.clone();
    Svgd::new(cfg.clone())?.step(&mut out, scores)?;
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SvgdDiagnostics {
    /// Mean Euclidean norm of the particle scores, per step.
    pub mean_score_norm: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

/// Runs `cfg.steps` updates. `score_fn(step, particles)` returns the `K×dim`
/// score matrix.
pub fn run<F>(mut score_fn: F, init: ParticleSet, cfg: &SvgdConfig) -> Result<(ParticleSet, SvgdDiagnostics)>
where
    F: FnMut(usize, &ParticleSet) -> Result<Matrix>,
{
    let mut svgd = Svgd::new(cfg.clone())?;
    let mut particles = init;
    let mut diag = SvgdDiagnostics::default();
    for step in 0..cfg.steps {
        let scores = score_fn(step, &particles).map_err(|e| e.context(format!("SVGD step {step}")))?;
        check_scores(&particles, &scores, step)?;
        let norm = (0..scores.rows())
            .map(|k| scores.row(k).iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / scores.rows() as f64;
        diag.mean_score_norm.push(norm);
        diag.bandwidth.push(svgd.step(&mut particles, &scores)?);
    }
    Ok((particles, diag))
}
