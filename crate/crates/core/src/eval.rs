//! Accuracy and calibration metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictive::{ClassPredictive, GaussianPredictive, MixturePredictive};

/// Number of confidence levels / bins used unless stated otherwise.
pub const DEFAULT_LEVELS: usize = 20;

/// `F̂(y | x_i)` for the query points of a predictive distribution.
pub trait PredictiveCdf {
    fn cdf(&self, i: usize, y: f64) -> f64;
}

impl PredictiveCdf for GaussianPredictive {
    fn cdf(&self, i: usize, y: f64) -> f64 {
        GaussianPredictive::cdf(self, i, y)
    }
}

impl PredictiveCdf for MixturePredictive {
    fn cdf(&self, i: usize, y: f64) -> f64 {
        MixturePredictive::cdf(self, i, y)
    }
}

impl<F: Fn(usize, f64) -> f64> PredictiveCdf for F {
    fn cdf(&self, i: usize, y: f64) -> f64 {
        self(i, y)
    }
}

pub fn rmse(predicted: &[f64], targets: &[f64]) -> Result<f64> {
    if predicted.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: targets.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput("rmse of no points"));
    }
    let sq: f64 = predicted.iter().zip(targets).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

/// Interior confidence grid `q_h = h/(H+1)`, `h = 1..H`.
pub fn confidence_levels(h: usize) -> Vec<f64> {
    (1..=h).map(|i| i as f64 / (h + 1) as f64).collect()
}

/// `(q_h, q̂_h)` pairs with `q̂_h` the fraction of test points whose
/// predictive CDF value is at most `q_h`.
pub fn calibration_curve(cdf: &impl PredictiveCdf, targets: &[f64], h: usize) -> Result<Vec<(f64, f64)>> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("calibration of no points"));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("need at least one confidence level".into()));
    }
    let mut u: Vec<f64> = targets.iter().enumerate().map(|(i, &y)| cdf.cdf(i, y)).collect();
    u.sort_by(f64::total_cmp);
    let m = u.len() as f64;
    Ok(confidence_levels(h)
        .into_iter()
        .map(|q| (q, u.partition_point(|&v| v <= q) as f64 / m))
        .collect())
}

/// Mean absolute gap `(1/H) Σ |q̂_h − q_h|`.
pub fn calib_regression(cdf: &impl PredictiveCdf, targets: &[f64], h: usize) -> Result<f64> {
    let curve = calibration_curve(cdf, targets, h)?;
    Ok(curve.iter().map(|(q, qh)| (qh - q).abs()).sum::<f64>() / h as f64)
}

/// Expected calibration error over bins `((h−1)/H, h/H]`.
pub fn ece_classification(confidences: &[f64], predictions: &[usize], labels: &[usize], h: usize) -> Result<f64> {
    if confidences.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: predictions.len(),
        });
    }
    if confidences.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: labels.len(),
        });
    }
    if confidences.is_empty() {
        return Err(Error::EmptyInput("ECE of no points"));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("need at least one bin".into()));
    }
    if let Some(c) = confidences.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
        return Err(Error::InvalidArgument(format!("confidence {c} outside (0, 1]")));
    }
    let mut count = vec![0usize; h];
    let mut correct = vec![0usize; h];
    let mut conf = vec![0.0; h];
    for ((&c, &p), &l) in confidences.iter().zip(predictions).zip(labels) {
        // bin b holds ((b)/H, (b+1)/H]
        let b = ((c * h as f64).ceil() as usize).clamp(1, h) - 1;
        count[b] += 1;
        correct[b] += usize::from(p == l);
        conf[b] += c;
    }
    let m = confidences.len() as f64;
    Ok((0..h)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let n = count[b] as f64;
            (n / m) * (correct[b] as f64 / n - conf[b] / n).abs()
        })
        .sum())
}

/// Metrics of one meta-test task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task: usize,
    /// For classification: RMSE of class probabilities against one-hot labels.
    pub rmse: f64,
    /// Regression calibration error, or ECE for classification.
    pub calib_err: f64,
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
}

/// Task-averaged metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub environment: String,
    pub seed: u64,
    pub rmse: f64,
    pub calib_err: f64,
    pub n_test: usize,
    /// Confidence levels used for `calib_err`.
    pub levels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub per_task: Vec<TaskEval>,
}

pub const EVAL_CSV_HEADER: &str = "method,environment,seed,rmse,calib_err,n_test,levels";

impl EvalReport {
    pub fn from_tasks(method: &str, environment: &str, seed: u64, levels: usize, per_task: Vec<TaskEval>) -> Result<Self> {
        if per_task.is_empty() {
            return Err(Error::EmptyInput("report needs at least one task"));
        }
        let n = per_task.len() as f64;
        Ok(Self {
            method: method.into(),
            environment: environment.into(),
            seed,
            rmse: per_task.iter().map(|t| t.rmse).sum::<f64>() / n,
            calib_err: per_task.iter().map(|t| t.calib_err).sum::<f64>() / n,
            n_test: per_task.iter().map(|t| t.n_test).sum(),
            levels,
            accuracy: per_task
                .iter()
                .map(|t| t.accuracy)
                .sum::<Option<f64>>()
                .map(|a| a / n),
            per_task,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method, self.environment, self.seed, self.rmse, self.calib_err, self.n_test, self.levels
        )
    }
}

/// RMSE of the predictive mean and calibration error of the predictive CDF.
pub fn evaluate_regression(task: usize, pred: &MixturePredictive, targets: &[f64], levels: usize) -> Result<TaskEval> {
    Ok(TaskEval {
        task,
        rmse: rmse(&pred.mean(), targets)?,
        calib_err: calib_regression(pred, targets, levels)?,
        n_test: targets.len(),
        accuracy: None,
    })
}

/// Probability RMSE, ECE and accuracy of a class predictive.
pub fn evaluate_classification(task: usize, pred: &ClassPredictive, labels: &[usize], levels: usize) -> Result<TaskEval> {
    if pred.probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: pred.probs.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("evaluation of no points"));
    }
    let (predictions, confidences): (Vec<usize>, Vec<f64>) = pred.argmax().into_iter().unzip();
    let sq: f64 = pred
        .probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            p.iter()
                .enumerate()
                .map(|(c, &v)| if c == l { (1.0 - v).powi(2) } else { v * v })
                .sum::<f64>()
        })
        .sum();
    let m = labels.len() as f64;
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(TaskEval {
        task,
        rmse: (sq / m).sqrt(),
        calib_err: ece_classification(&confidences, &predictions, labels, levels)?,
        n_test: labels.len(),
        accuracy: Some(correct as f64 / m),
    })
}
