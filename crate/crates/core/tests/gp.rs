use pacoh::diffmath::{cholesky, grad, Matrix, DEFAULT_JITTER_SCHEDULE};
use pacoh::gp::{gp_mll, gp_mll_on_tape, gp_predict, kernel_matrix, GpConfig, GpPrior};
use pacoh::Dataset;
use proptest::prelude::*;

fn cfg(d: usize) -> GpConfig {
    GpConfig {
        mean_hidden: vec![8],
        feature_hidden: vec![8],
        ..GpConfig::new(d)
    }
}

fn prior_from(d: usize, raw: &[f64], ln_sigma: f64) -> GpPrior {
    let c = cfg(d);
    let n = c.param_count().unwrap();
    let mut v: Vec<f64> = raw.iter().cycle().take(n).copied().collect();
    v[n - 1] = ln_sigma;
    GpPrior::from_values(&c, v).unwrap()
}

fn dataset(d: usize, xs: &[f64], ys: &[f64]) -> Dataset {
    let m = ys.len();
    Dataset::regression(Matrix::new(m, d, xs[..m * d].to_vec()).unwrap(), ys.to_vec()).unwrap()
}

fn raw() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kernel_is_symmetric_and_psd(w in raw(), xs in prop::collection::vec(-3.0f64..3.0, 20)) {
        let p = prior_from(2, &w, -1.0);
        let x = Matrix::new(10, 2, xs).unwrap();
        let k = kernel_matrix(&p, &x, &x).unwrap();
        prop_assert!(k.max_abs_asymmetry() <= 1e-12);
        prop_assert!(cholesky(&k, &DEFAULT_JITTER_SCHEDULE).is_ok());
    }

    #[test]
    fn mll_is_permutation_invariant(
        w in raw(),
        xs in prop::collection::vec(-3.0f64..3.0, 8),
        ys in prop::collection::vec(-2.0f64..2.0, 8),
        shift in 1usize..8,
    ) {
        let p = prior_from(1, &w, -1.5);
        let data = dataset(1, &xs, &ys);
        let perm: Vec<usize> = (0..8).map(|i| (i * 3 + shift) % 8).collect();
        let a = gp_mll(&p, &data).unwrap();
        let b = gp_mll(&p, &data.select(&perm)).unwrap();
        prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn predictive_variance_at_least_noise(
        w in raw(),
        xs in prop::collection::vec(-3.0f64..3.0, 6),
        ys in prop::collection::vec(-2.0f64..2.0, 6),
        q in prop::collection::vec(-4.0f64..4.0, 10),
        ln_sigma in -3.0f64..0.0,
    ) {
        let p = prior_from(1, &w, ln_sigma);
        let pred = gp_predict(&p, &dataset(1, &xs, &ys), &Matrix::column(&q)).unwrap();
        let s2 = p.noise_variance();
        for v in pred.variance {
            prop_assert!(v >= s2 * (1.0 - 1e-6));
        }
    }

    #[test]
    fn duplicate_point_never_increases_variance(
        w in raw(),
        xs in prop::collection::vec(-3.0f64..3.0, 5),
        ys in prop::collection::vec(-2.0f64..2.0, 5),
        pick in 0usize..5,
    ) {
        let p = prior_from(1, &w, -1.0);
        let data = dataset(1, &xs, &ys);
        let xq = Matrix::column(&[xs[pick]]);
        let before = gp_predict(&p, &data, &xq).unwrap().variance[0];
        let dup = data.concat(&data.select(&[pick])).unwrap();
        let after = gp_predict(&p, &dup, &xq).unwrap().variance[0];
        prop_assert!(after <= before * (1.0 + 1e-9), "{after} > {before}");
    }
}

#[test]
fn mll_gradient_matches_central_differences() {
    use rand::Rng as _;
    let mut rng = pacoh::rng::substream(7, "gp_fd", &[]);
    let h = 1e-5;
    for _ in 0..20 {
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = prior_from(1, &w, rng.random_range(-1.5..0.0));
        let data = dataset(1, &xs, &ys);
        let g = grad(|t, v| gp_mll_on_tape(t, v, &p, &data), &p.phi).unwrap();
        assert!((g.value - gp_mll(&p, &data).unwrap()).abs() < 1e-10);
        let n = p.phi.len();
        let feature_dim = cfg(1).feature_dim;
        // the kernel depends on feature differences only, so the feature
        // net's output biases have an exactly zero gradient
        let translation = (n - 1 - feature_dim)..(n - 1);
        for j in 0..n {
            let eval = |delta: f64| {
                let mut v = p.phi.values().to_vec();
                v[j] += delta;
                gp_mll(&GpPrior::from_values(&cfg(1), v).unwrap(), &data).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            if translation.contains(&j) {
                assert!(g.grad[j].abs() < 1e-12 && fd.abs() < 1e-8, "component {j}: {} vs {fd}", g.grad[j]);
                continue;
            }
            let rel = (g.grad[j] - fd).abs() / (g.grad[j].abs() + 1e-8);
            assert!(rel < 1e-4, "component {j}: {} vs {fd}", g.grad[j]);
        }
    }
}

#[test]
fn unit_variance_single_point_mll() {
    // zero nets give k(x, x) = 0.5; σ² = 0.5 makes K̃ = 1
    let mut p = GpPrior::zeros(&cfg(1)).unwrap();
    p.phi.segment_mut("ln_noise_sigma").unwrap()[0] = 0.5 * 0.5f64.ln();
    let at = |y: f64| gp_mll(&p, &dataset(1, &[0.3], &[y])).unwrap();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    assert!((at(0.0) + half_ln_2pi).abs() < 1e-12);
    assert!((at(1.3) - (-0.5 * 1.3 * 1.3 - half_ln_2pi)).abs() < 1e-12);
}
