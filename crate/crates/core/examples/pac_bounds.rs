//! Bound arithmetic: the constant term, a full decomposition, and the
//! closed-form hyper-posterior over a finite prior grid.

use pacoh::bounds::{
    c_term, level2_bound, meta_bound_uniform, pacoh_finite, BoundSpec, FiniteHypothesisSpace, LossModel,
};

fn main() -> pacoh::Result<()> {
    let spec = BoundSpec::standard(20, 5, 0.05, LossModel::Bounded { a: 0.0, b: 1.0 });
    println!("constant term (n=20, m=5, δ=0.05): {:.10}", c_term(&spec)?);
    let report = meta_bound_uniform(0.21, 3.0, &[1.5; 20], &spec)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    // three hypotheses, two tasks of four points, two candidate priors
    let table = vec![
        vec![vec![0.1, 0.2, 0.0, 0.1], vec![0.9, 0.8, 1.0, 0.7], vec![0.5, 0.4, 0.6, 0.5]],
        vec![vec![0.2, 0.1, 0.1, 0.0], vec![0.8, 1.0, 0.9, 0.9], vec![0.4, 0.5, 0.5, 0.6]],
    ];
    let space = FiniteHypothesisSpace::new(table, vec![1.0 / 3.0; 3])?;
    let grid = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1]];
    let spec = BoundSpec::standard(2, 4, 0.05, LossModel::Bounded { a: 0.0, b: 1.0 });
    let post = pacoh_finite(&space, &grid, &[0.5, 0.5], &spec)?;
    println!("hyper-posterior weights {:?}", post.weights);
    println!("bound at the optimal hyper-posterior {:.6}", level2_bound(post.ln_z2, &spec)?);
    Ok(())
}
