//! Random finite instances shared by the bound tests.
#![allow(dead_code)]

use pacoh::bounds::{
    kl_categorical, level2_bound, meta_bound_gibbs, meta_bound_uniform, pacoh_finite, BoundSpec,
    FiniteHypothesisSpace, LossModel,
};
use pacoh::rng::Rng;
use rand::Rng as _;

/// Strictly positive weights summing to 1.
pub fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

pub struct Instance {
    pub space: FiniteHypothesisSpace,
    pub grid: Vec<Vec<f64>>,
    pub hyper: Vec<f64>,
    pub spec: BoundSpec,
}

/// `n ∈ 2..=4` tasks of a common size `m ∈ 3..=8`, up to six hypotheses with
/// losses in `[0, 1]`, and a grid of up to five priors.
pub fn random_instance(rng: &mut Rng) -> Instance {
    let n = rng.random_range(2..=4);
    let m = rng.random_range(3..=8);
    let h = rng.random_range(2..=6);
    let table = (0..n)
        .map(|_| (0..h).map(|_| (0..m).map(|_| rng.random_range(0.0..1.0)).collect()).collect())
        .collect();
    let space = FiniteHypothesisSpace::new(table, random_simplex(rng, h)).unwrap();
    let g = rng.random_range(2..=5);
    let grid = (0..g).map(|_| random_simplex(rng, h)).collect();
    let hyper = random_simplex(rng, g);
    let spec = BoundSpec::standard(n, m, 0.05, LossModel::Bounded { a: 0.0, b: 1.0 });
    Instance { space, grid, hyper, spec }
}

/// `(meta_bound_gibbs(q), meta_bound_uniform(q, arbitrary task posteriors))`.
pub fn gibbs_and_uniform(inst: &Instance, q: &[f64], rng: &mut Rng) -> (f64, f64) {
    let post = pacoh_finite(&inst.space, &inst.grid, &inst.hyper, &inst.spec).unwrap();
    let kl_hyper = kl_categorical(q, &inst.hyper).unwrap();
    let gibbs = meta_bound_gibbs(&post.expected_ln_z(q).unwrap(), kl_hyper, &inst.spec).unwrap();
    let n = inst.space.tasks();
    let h = inst.space.hypotheses();
    let mut empirical = 0.0;
    let mut kl_tasks = vec![0.0; n];
    for i in 0..n {
        let g = inst.space.empirical_losses(i);
        for (j, prior) in inst.grid.iter().enumerate() {
            let qi = random_simplex(rng, h);
            empirical += q[j] * qi.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / n as f64;
            kl_tasks[i] += q[j] * kl_categorical(&qi, prior).unwrap();
        }
    }
    let uniform = meta_bound_uniform(empirical, kl_hyper, &kl_tasks, &inst.spec).unwrap().total;
    (gibbs, uniform)
}

pub fn level2(inst: &Instance) -> (f64, Vec<f64>) {
    let post = pacoh_finite(&inst.space, &inst.grid, &inst.hyper, &inst.spec).unwrap();
    (level2_bound(post.ln_z2, &inst.spec).unwrap(), post.weights)
}
