//! Per-task datasets.

use serde::{Deserialize, Serialize};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, classes: usize },
}

/// One task sample: `m` inputs of dimension `d` with their targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Matrix,
    targets: Targets,
}

impl Dataset {
    pub fn regression(x: Matrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::LengthMismatch {
                left: x.rows(),
                right: y.len(),
            });
        }
        if x.as_slice().iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset entries must be finite".into()));
        }
        Ok(Self {
            x,
            targets: Targets::Regression(y),
        })
    }

    pub fn classification(x: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                left: x.rows(),
                right: labels.len(),
            });
        }
        if classes < 2 {
            return Err(Error::InvalidArgument("classification needs at least 2 classes".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} classes")));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset entries must be finite".into()));
        }
        Ok(Self {
            x,
            targets: Targets::Classification { labels, classes },
        })
    }

    /// Empty regression dataset with `d` input columns.
    pub fn empty(d: usize) -> Self {
        Self {
            x: Matrix::zeros(0, d),
            targets: Targets::Regression(Vec::new()),
        }
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn is_regression(&self) -> bool {
        matches!(self.targets, Targets::Regression(_))
    }

    /// Regression targets, or `InvalidArgument` for a classification set.
    pub fn y(&self) -> Result<&[f64]> {
        match &self.targets {
            Targets::Regression(y) => Ok(y),
            Targets::Classification { .. } => {
                Err(Error::InvalidArgument("expected a regression dataset".into()))
            }
        }
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let x = self.x.select_rows(idx);
        let targets = match &self.targets {
            Targets::Regression(y) => Targets::Regression(idx.iter().map(|&i| y[i]).collect()),
            Targets::Classification { labels, classes } => Targets::Classification {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                classes: *classes,
            },
        };
        Self { x, targets }
    }

    /// Concatenates two datasets of the same kind and dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Schema(format!(
                "cannot join datasets of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let targets = match (&self.targets, &other.targets) {
            (Targets::Regression(a), Targets::Regression(b)) => {
                Targets::Regression(a.iter().chain(b).copied().collect())
            }
            (
                Targets::Classification { labels: a, classes: ca },
                Targets::Classification { labels: b, classes: cb },
            ) if ca == cb => Targets::Classification {
                labels: a.iter().chain(b).copied().collect(),
                classes: *ca,
            },
            _ => return Err(Error::Schema("cannot join datasets of different kinds".into())),
        };
        Ok(Self {
            x: self.x.vstack(&other.x),
            targets,
        })
    }
}
