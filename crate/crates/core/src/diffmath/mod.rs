//! Dense linear algebra, stable reductions, MLP evaluation, and reverse-mode
//! gradients of scalar objectives.

mod linalg;
mod matrix;
mod mlp;
mod params;
mod tape;

pub use linalg::{
    cholesky, logsumexp, tri_solve, tri_solve_upper_t, Cholesky, DEFAULT_JITTER_SCHEDULE,
    SYMMETRY_TOL,
};
pub use matrix::Matrix;
pub use mlp::{mlp_forward, Activation, MlpConfig};
pub use params::{ParamVector, Segment};
pub use tape::{grad, GradientEvaluation, Gradients, Tape, Var};
