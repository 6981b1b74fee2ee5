//! Meta-learns BNN priors on Sinusoid tasks and compares them with a
//! standard-normal prior on held-out tasks.

use pacoh::bnn::{target_train, BnnArch, BnnPrior, TargetTrainConfig};
use pacoh::envs::{generate, EnvConfig};
use pacoh::eval::{evaluate_regression, DEFAULT_LEVELS};
use pacoh::meta::{meta_predict, meta_train, BaseLearner, BetaRule, HyperPrior, MetaConfig, MetaTestConfig};
use pacoh::svgd::{Optimizer, SvgdConfig};

fn main() -> pacoh::Result<()> {
    let env = generate(&EnvConfig {
        n_test_tasks: Some(5),
        ..EnvConfig::sinusoid(20, 5, 100, 1)
    })?;
    let arch = BnnArch::regression(1)?;
    let adaptive = |steps| SvgdConfig {
        steps,
        step_size: 1e-2,
        optimizer: Optimizer::AdaptivePerCoordinate { decay: 0.9 },
        ..SvgdConfig::default()
    };
    let cfg = MetaConfig {
        lambda_rule: Default::default(),
        beta_rule: BetaRule::M,
        k: 3,
        l: 5,
        task_batch: None,
        point_batch: None,
        svgd: adaptive(5000),
        seed: 1,
        disable_hyper_prior: false,
        fixed_eps: false,
    };
    let tasks: Vec<_> = env.meta_train.iter().map(|t| t.train.clone()).collect();
    let res = meta_train(&tasks, &BaseLearner::Bnn(arch.clone()), &HyperPrior { variance: 10.0 }, &cfg)?;
    let test = MetaTestConfig {
        beta_rule: BetaRule::M,
        target: TargetTrainConfig {
            particles_per_prior: 5,
            svgd: adaptive(300),
            seed: 1,
        },
    };
    let standard = vec![BnnPrior::standard(arch)?; 3];
    for (i, t) in env.meta_test.iter().enumerate() {
        let y = t.test.y()?;
        let p = meta_predict(&res, &t.train, t.test.x(), &test)?;
        let meta = evaluate_regression(i, p.regression()?, y, DEFAULT_LEVELS)?;
        let post = target_train(&standard, &t.train, t.train.len() as f64, &test.target)?;
        let v = evaluate_regression(i, post.predict(t.test.x())?.regression()?, y, DEFAULT_LEVELS)?;
        println!(
            "task {i}: meta-learned RMSE {:.3} calib {:.3} | standard prior RMSE {:.3} calib {:.3}",
            meta.rmse, meta.calib_err, v.rmse, v.calib_err
        );
    }
    Ok(())
}
