//! Predictive distributions returned by the base learners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Independent Gaussians, one per query point. Variances include the
/// observation noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPredictive {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianPredictive {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn cdf(&self, i: usize, y: f64) -> f64 {
        normal_cdf((y - self.mean[i]) / self.variance[i].sqrt())
    }
}

/// Equal-weight mixture of Gaussian predictives over the same query points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixturePredictive {
    components: Vec<GaussianPredictive>,
}

impl MixturePredictive {
    pub fn new(components: Vec<GaussianPredictive>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::EmptyInput("mixture needs at least one component"));
        };
        let n = first.len();
        if let Some(c) = components.iter().find(|c| c.len() != n || c.variance.len() != n) {
            return Err(Error::LengthMismatch {
                left: c.len(),
                right: n,
            });
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianPredictive] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> Vec<f64> {
        let k = self.components.len() as f64;
        (0..self.len())
            .map(|i| self.components.iter().map(|c| c.mean[i]).sum::<f64>() / k)
            .collect()
    }

    /// Mixture variance `E[V] + Var[M]`.
    pub fn variance(&self) -> Vec<f64> {
        let k = self.components.len() as f64;
        self.mean()
            .into_iter()
            .enumerate()
            .map(|(i, mu)| {
                self.components
                    .iter()
                    .map(|c| c.variance[i] + (c.mean[i] - mu) * (c.mean[i] - mu))
                    .sum::<f64>()
                    / k
            })
            .collect()
    }

    pub fn cdf(&self, i: usize, y: f64) -> f64 {
        self.components.iter().map(|c| c.cdf(i, y)).sum::<f64>() / self.components.len() as f64
    }
}

/// Averaged class probabilities, one row per query point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPredictive {
    pub probs: Vec<Vec<f64>>,
}

impl ClassPredictive {
    /// `(predicted class, confidence)` per query point; ties go to the lower
    /// class index.
    pub fn argmax(&self) -> Vec<(usize, f64)> {
        self.probs
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictive {
    Regression(MixturePredictive),
    Classification(ClassPredictive),
}

impl Predictive {
    pub fn regression(&self) -> Result<&MixturePredictive> {
        match self {
            Predictive::Regression(m) => Ok(m),
            Predictive::Classification(_) => Err(Error::InvalidArgument("expected a regression predictive".into())),
        }
    }

    pub fn classification(&self) -> Result<&ClassPredictive> {
        match self {
            Predictive::Classification(c) => Ok(c),
            Predictive::Regression(_) => Err(Error::InvalidArgument("expected a class predictive".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((normal_cdf(-1.96) - 0.024_997_895_148_220_43).abs() < 1e-15);
        assert!(normal_cdf(-40.0) >= 0.0 && normal_cdf(40.0) == 1.0);
    }

    #[test]
    fn two_component_moments() {
        let m = MixturePredictive::new(vec![
            GaussianPredictive { mean: vec![0.0], variance: vec![1.0] },
            GaussianPredictive { mean: vec![2.0], variance: vec![1.0] },
        ])
        .unwrap();
        assert_eq!(m.mean(), vec![1.0]);
        assert_eq!(m.variance(), vec![2.0]);
        assert!((m.cdf(0, 1.0) - 0.5).abs() < 1e-15);
    }
}
