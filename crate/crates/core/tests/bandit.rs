use std::cell::RefCell;

use pacoh::bandit::{
    run_bandit, ts_select, ucb_select, ArmFamily, ArmPool, ArmPosterior, BanditTrace, GpSurrogate, Policy, Surrogate,
    DEFAULT_KAPPA,
};
use pacoh::diffmath::Matrix;
use pacoh::error::Result;
use pacoh::gp::{GpConfig, GpPrior};
use pacoh::rng::{substream, Rng};
use pacoh::Dataset;
use rand::Rng as _;
use rand_distr::StandardNormal;

struct Fixed {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl ArmPosterior for Fixed {
    fn mean_std(&self, _: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.mean.clone(), self.std.clone()))
    }
    fn sample_joint(&self, _: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

/// Records every dataset it is fitted on.
struct Recording<'a> {
    inner: &'a GpSurrogate,
    seen: RefCell<Vec<Dataset>>,
}

impl Surrogate for Recording<'_> {
    type Posterior = <GpSurrogate as Surrogate>::Posterior;
    fn fit(&self, observed: &Dataset) -> Result<Self::Posterior> {
        self.seen.borrow_mut().push(observed.clone());
        self.inner.fit(observed)
    }
}

fn gp_surrogate(seed: u64) -> GpSurrogate {
    let cfg = GpConfig {
        mean_hidden: vec![6],
        feature_hidden: vec![6],
        ..GpConfig::new(2)
    };
    let n = cfg.param_count().unwrap();
    let mut rng = substream(seed, "bandit_prior", &[]);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.7..0.7)).collect();
    v[n - 1] = -2.0;
    GpSurrogate {
        priors: vec![GpPrior::from_values(&cfg, v).unwrap()],
    }
}

fn pool(seed: u64) -> ArmPool {
    ArmFamily::default().sample_pool(60, &mut substream(seed, "bandit_pool", &[])).unwrap()
}

fn check_trace(tr: &BanditTrace, pool: &ArmPool) {
    let best = pool.best_reward();
    for t in 0..tr.len() {
        assert_eq!(tr.rewards[t], pool.reward(tr.chosen[t]));
        let mean = tr.rewards[..=t].iter().sum::<f64>() / (t + 1) as f64;
        assert!((tr.avg_regret[t] - (best - mean)).abs() < 1e-12);
        let top = tr.rewards[..=t].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((tr.simple_regret[t] - (best - top)).abs() < 1e-12);
        if t > 0 {
            assert!(tr.simple_regret[t] <= tr.simple_regret[t - 1]);
        }
    }
}

#[test]
fn regrets_are_recomputable_and_simple_regret_nonincreasing() {
    let gp = gp_surrogate(1);
    for s in 0..3 {
        let p = pool(s);
        for policy in [Policy::Thompson, Policy::Ucb { kappa: DEFAULT_KAPPA }, Policy::Random] {
            let tr = run_bandit(&gp, &p, 12, policy, &mut substream(s, "bandit_policy", &[])).unwrap();
            assert_eq!(tr.len(), 12);
            check_trace(&tr, &p);
        }
    }
}

#[test]
fn replay_with_same_seed_is_identical() {
    let gp = gp_surrogate(2);
    let p = pool(3);
    let run = |t| run_bandit(&gp, &p, t, Policy::Thompson, &mut substream(9, "bandit_policy", &[])).unwrap();
    let a = run(10);
    assert_eq!(a, run(10));
    assert_eq!(a.to_csv(), run(10).to_csv());
    let short = run(6);
    assert_eq!(short.chosen[..], a.chosen[..6]);
}

#[test]
fn refits_only_see_past_rewards() {
    let gp = gp_surrogate(3);
    let rec = Recording {
        inner: &gp,
        seen: RefCell::new(Vec::new()),
    };
    let p = pool(4);
    let tr = run_bandit(&rec, &p, 8, Policy::Ucb { kappa: 1.0 }, &mut substream(0, "bandit_policy", &[])).unwrap();
    let seen = rec.seen.into_inner();
    assert_eq!(seen.len(), 8);
    for (t, d) in seen.iter().enumerate() {
        assert_eq!(*d, p.observed(&tr.chosen[..t]));
    }
}

#[test]
fn symmetric_two_arm_thompson_is_fair() {
    let p = ArmPool::new(Matrix::column(&[0.0, 1.0]), vec![0.0, 1.0]).unwrap();
    let post = Fixed {
        mean: vec![0.3, 0.3],
        std: vec![1.0, 1.0],
    };
    let mut rng = substream(5, "ts_symmetry", &[]);
    let first = (0..10_000).filter(|_| ts_select(&post, &p, &mut rng).unwrap() == 0).count();
    let freq = first as f64 / 1e4;
    assert!((freq - 0.5).abs() < 0.05, "{freq}");
}

#[test]
fn thompson_is_reproducible_for_fixed_seed() {
    let p = pool(6);
    let post = Fixed {
        mean: vec![0.0; p.len()],
        std: vec![1.0; p.len()],
    };
    let pick = || ts_select(&post, &p, &mut substream(7, "ts_fixed", &[])).unwrap();
    assert_eq!(pick(), pick());
}

#[test]
fn ucb_hand_built_posterior() {
    let p = ArmPool::new(Matrix::column(&[0.0, 1.0, 2.0]), vec![0.0, 0.0, 0.0]).unwrap();
    let post = Fixed {
        mean: vec![0.0, 1.0, 0.0],
        std: vec![1.0, 0.0, 2.0],
    };
    assert_eq!(ucb_select(&post, &p, 1.0).unwrap(), 2);
    assert_eq!(ucb_select(&post, &p, 0.0).unwrap(), 1);
}

#[test]
fn random_policy_regret_averages_one_half() {
    let p = ArmPool::new(Matrix::column(&[0.0, 1.0]), vec![0.0, 1.0]).unwrap();
    let gp = gp_surrogate(0);
    let reps = 4000;
    let total: f64 = (0..reps as u64)
        .map(|r| {
            let tr = run_bandit(&gp, &p, 5, Policy::Random, &mut substream(8, "random_policy", &[r])).unwrap();
            *tr.avg_regret.last().unwrap()
        })
        .sum();
    let mean = total / reps as f64;
    assert!((mean - 0.5).abs() < 0.02, "{mean}");
}

#[test]
fn oracle_policy_has_zero_regret() {
    let p = pool(9);
    let tr = run_bandit(&gp_surrogate(0), &p, 7, Policy::Oracle, &mut substream(0, "oracle", &[])).unwrap();
    assert!(tr.avg_regret.iter().chain(&tr.simple_regret).all(|&r| r == 0.0));
}

#[test]
fn zero_rounds_is_an_error() {
    assert!(run_bandit(&gp_surrogate(0), &pool(0), 0, Policy::Oracle, &mut substream(0, "x", &[])).is_err());
}

#[test]
fn pool_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.csv");
    let p = pool(10);
    p.write_csv(&path).unwrap();
    assert_eq!(ArmPool::read_csv(&path).unwrap(), p);
    std::fs::write(&path, "x0,r\n1,2\n3,4\n").unwrap();
    assert!(ArmPool::read_csv(&path).is_err());
    std::fs::write(&path, "x0,reward\n1,2\n").unwrap();
    assert!(ArmPool::read_csv(&path).is_err());
}

#[test]
fn pool_rewards_follow_the_family() {
    let fam = ArmFamily { d: 3, w_scale: 0.5 };
    let mut a = substream(11, "family", &[]);
    let mut b = substream(11, "family", &[]);
    let task = fam.sample_task(&mut a).unwrap();
    let x = fam.sample_features(20, &mut a);
    let p = fam.sample_pool(20, &mut b).unwrap();
    assert!(x.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    for i in 0..20 {
        assert_eq!(p.reward(i), task.reward(x.row(i)));
    }
    assert!(ArmFamily { d: 0, w_scale: 0.5 }.sample_task(&mut a).is_err());
}
