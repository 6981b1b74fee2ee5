use pacoh::envs::{
    cauchy_mean, clip_input, generate, load_csv_env, write_csv_env, CauchyTask, EnvConfig, EnvKind, SinusoidTask,
    CAUCHY_CLIP, SINUSOID_NOISE, SINUSOID_X_RANGE,
};
use pacoh::predictive::normal_cdf;
use pacoh::rng::substream;
use pacoh::diffmath::Matrix;
use pacoh::error::Error;

fn cauchy_cfg(n: usize, m: usize, seed: u64) -> EnvConfig {
    EnvConfig {
        kind: EnvKind::Cauchy,
        ..EnvConfig::sinusoid(n, m, m, seed)
    }
}

#[test]
fn same_seed_same_environment() {
    for cfg in [EnvConfig::sinusoid(6, 5, 7, 3), cauchy_cfg(4, 6, 3)] {
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&EnvConfig { seed: 4, ..cfg.clone() }).unwrap();
        assert_ne!(a.meta_train[0].train, c.meta_train[0].train);
        assert_ne!(a.meta_train[0].train, a.meta_test[0].train);
    }
}

#[test]
fn sinusoid_residuals_pass_ks_test() {
    let env = generate(&EnvConfig::sinusoid(2000, 5, 0, 17)).unwrap();
    let mut r: Vec<f64> = env
        .meta_train
        .iter()
        .flat_map(|t| {
            let task: SinusoidTask = serde_json::from_value(t.meta.clone()).unwrap();
            let x = t.train.x().as_slice().to_vec();
            let y = t.train.y().unwrap().to_vec();
            x.into_iter().zip(y).map(move |(xi, yi)| yi - task.f(xi))
        })
        .collect();
    assert_eq!(r.len(), 10_000);
    r.sort_by(f64::total_cmp);
    let n = r.len() as f64;
    let d = r
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let f = normal_cdf(v / SINUSOID_NOISE);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn cauchy_far_points_are_uncorrelated() {
    let x = Matrix::new(2, 2, vec![-3.0, -3.0, 2.0, 2.0]).unwrap();
    let draws: Vec<Vec<f64>> = (0..1000u64)
        .map(|i| CauchyTask::sample_perturbation(&x, &mut substream(21, "far", &[i])).unwrap())
        .collect();
    let mean = |j: usize| draws.iter().map(|d| d[j]).sum::<f64>() / 1000.0;
    let (m0, m1) = (mean(0), mean(1));
    let cov: f64 = draws.iter().map(|d| (d[0] - m0) * (d[1] - m1)).sum();
    let v0: f64 = draws.iter().map(|d| (d[0] - m0).powi(2)).sum();
    let v1: f64 = draws.iter().map(|d| (d[1] - m1).powi(2)).sum();
    let rho = cov / (v0 * v1).sqrt();
    assert!(rho.abs() < 0.05, "rho {rho}");
}

#[test]
fn inputs_stay_in_support() {
    let env = generate(&EnvConfig::sinusoid(50, 20, 20, 5)).unwrap();
    for t in env.meta_train.iter().chain(&env.meta_test) {
        for d in [&t.train, &t.test] {
            assert!(d.x().as_slice().iter().all(|v| (SINUSOID_X_RANGE.0..=SINUSOID_X_RANGE.1).contains(v)));
        }
    }
    let env = generate(&cauchy_cfg(30, 20, 5)).unwrap();
    for t in env.meta_train.iter().chain(&env.meta_test) {
        assert_eq!(t.train.dim(), 2);
        for d in [&t.train, &t.test] {
            assert!(d.x().as_slice().iter().all(|v| (CAUCHY_CLIP.0..=CAUCHY_CLIP.1).contains(v)));
        }
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, cfg) in [("sin", EnvConfig::sinusoid(12, 4, 6, 8)), ("cau", cauchy_cfg(3, 5, 8))] {
        let env = generate(&cfg).unwrap();
        let path = dir.path().join(sub);
        write_csv_env(&path, &env.meta_train).unwrap();
        let back = load_csv_env(&path).unwrap();
        assert_eq!(back.len(), env.meta_train.len());
        for (a, b) in env.meta_train.iter().zip(&back) {
            assert_eq!(a.train, b.train);
            assert_eq!(a.test, b.test);
        }
    }
}

#[test]
fn csv_dir_environment_loads_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let env = generate(&EnvConfig::sinusoid(3, 4, 4, 1)).unwrap();
    write_csv_env(&dir.path().join("meta_train"), &env.meta_train).unwrap();
    write_csv_env(&dir.path().join("meta_test"), &env.meta_test).unwrap();
    let cfg = EnvConfig {
        kind: EnvKind::CsvDir { path: dir.path().to_path_buf() },
        ..EnvConfig::sinusoid(0, 0, 0, 0)
    };
    let back = generate(&cfg).unwrap();
    assert_eq!(back.meta_test[2].test, env.meta_test[2].test);
}

#[test]
fn malformed_csv_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let env = generate(&EnvConfig::sinusoid(1, 3, 3, 1)).unwrap();
    write_csv_env(dir.path(), &env.meta_train).unwrap();
    std::fs::write(dir.path().join("task_000_train.csv"), "x0,y\n1.0,2.0,3.0\n").unwrap();
    assert!(matches!(load_csv_env(dir.path()), Err(Error::Schema(_))));
    std::fs::write(dir.path().join("task_000_train.csv"), "x0,y\n").unwrap();
    assert!(matches!(load_csv_env(dir.path()), Err(Error::EmptyTask(_))));
    std::fs::write(dir.path().join("task_000_train.csv"), "a,y\n1.0,2.0\n").unwrap();
    assert!(matches!(load_csv_env(dir.path()), Err(Error::Schema(_))));
}

#[test]
fn amplitude_mean_obeys_clt() {
    let n = 10_000;
    let mut rng = substream(31, "amplitude", &[]);
    let mean = (0..n).map(|_| SinusoidTask::sample(&mut rng).amplitude).sum::<f64>() / n as f64;
    let sigma = 0.6 / 12f64.sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sigma / (n as f64).sqrt(), "{mean}");
}

#[test]
fn worked_values() {
    let t = SinusoidTask {
        amplitude: 1.0,
        phase: 0.0,
        offset: 5.0,
        slope: 0.5,
        noise: SINUSOID_NOISE,
    };
    assert_eq!(t.f(0.0), 5.0);
    assert!((cauchy_mean(&[-1.0, -1.0]) - 1.960).abs() < 1e-3);
    assert_eq!(clip_input(5.0), 2.0);
    assert_eq!(clip_input(-7.0), -3.0);
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(generate(&EnvConfig::sinusoid(0, 5, 5, 0)).is_err());
    assert!(generate(&EnvConfig { noise: Some(-1.0), ..EnvConfig::sinusoid(2, 5, 5, 0) }).is_err());
}
