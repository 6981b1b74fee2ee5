use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::{Matrix, ParamVector};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Fully connected network shape. Hidden layers use `activation`; the output
/// layer is linear.
///
/// Parameters are laid out layer by layer as the `in×out` weight matrix
/// (row-major) followed by the `out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize) -> Result<Self> {
        let cfg = Self {
            input_dim,
            hidden_layers,
            output_dim,
            activation: Activation::Tanh,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.contains(&0) {
            return Err(Error::InvalidArgument("MLP dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every layer in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Batched forward pass over the rows of `x` with parameters taken from a
    /// flat slice.
    pub fn forward_batch(&self, params: &[f64], x: &Matrix) -> Result<Matrix> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "MLP expects {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if x.cols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "MLP input has {} columns, expected {}",
                x.cols(),
                self.input_dim
            )));
        }
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut h = x.clone();
        let mut off = 0;
        for (layer, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
            let w = Matrix::from_raw(fan_in, fan_out, params[off..off + fan_in * fan_out].to_vec());
            off += fan_in * fan_out;
            let b = &params[off..off + fan_out];
            off += fan_out;
            h = h.matmul(&w);
            for i in 0..h.rows() {
                for (v, bias) in h.row_mut(i).iter_mut().zip(b) {
                    *v += bias;
                    if layer != last {
                        *v = self.activation.apply(*v);
                    }
                }
            }
        }
        Ok(h)
    }

    /// Records the forward pass on a tape. `params` is a node whose flattened
    /// entries starting at `offset` hold this network's parameters; `x` is an
    /// `m×input_dim` node.
    pub fn forward_on_tape(&self, tape: &Tape, params: Var, offset: usize, x: Var) -> Var {
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut h = x;
        let mut off = offset;
        for (layer, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
            let w = tape.slice(params, off, fan_in, fan_out);
            off += fan_in * fan_out;
            let b = tape.slice(params, off, 1, fan_out);
            off += fan_out;
            h = tape.add_row(tape.matmul(h, w), b);
            if layer != last {
                h = match self.activation {
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        h
    }
}

/// Evaluates the network at a single input.
pub fn mlp_forward(config: &MlpConfig, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    if x.len() != config.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input length {} != input_dim {}",
            x.len(),
            config.input_dim
        )));
    }
    Ok(config
        .forward_batch(params.values(), &Matrix::row_vector(x))?
        .into_vec())
}
