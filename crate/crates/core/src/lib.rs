//! PAC-Bayesian meta-learning of Gaussian-process and Bayesian-neural-network
//! priors.

pub mod bandit;
pub mod bnn;
pub mod bounds;
pub mod data;
pub mod diffmath;
pub mod envs;
pub mod error;
pub mod eval;
pub mod gp;
pub mod meta;
pub mod predictive;
pub mod rng;
pub mod runner;
pub mod svgd;

pub use data::{Dataset, Targets};
pub use error::{Error, Result};
