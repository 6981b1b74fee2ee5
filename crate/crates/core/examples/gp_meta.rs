//! Meta-learns GP priors on Sinusoid tasks and compares them with the
//! untrained initial priors on held-out tasks.

use pacoh::bnn::TargetTrainConfig;
use pacoh::envs::{generate, EnvConfig, TaskSample};
use pacoh::eval::{evaluate_regression, DEFAULT_LEVELS};
use pacoh::gp::GpConfig;
use pacoh::meta::{meta_predict, meta_train, BaseLearner, BetaRule, HyperPrior, MetaConfig, MetaTestConfig, MetaTrainResult};
use pacoh::svgd::{Optimizer, SvgdConfig};

fn score(res: &MetaTrainResult, tasks: &[TaskSample]) -> pacoh::Result<(f64, f64)> {
    let test = MetaTestConfig {
        beta_rule: BetaRule::M,
        target: TargetTrainConfig {
            particles_per_prior: 1,
            svgd: SvgdConfig::default(),
            seed: 0,
        },
    };
    let (mut rmse, mut calib) = (0.0, 0.0);
    for (i, t) in tasks.iter().enumerate() {
        let p = meta_predict(res, &t.train, t.test.x(), &test)?;
        let e = evaluate_regression(i, p.regression()?, t.test.y()?, DEFAULT_LEVELS)?;
        rmse += e.rmse / tasks.len() as f64;
        calib += e.calib_err / tasks.len() as f64;
    }
    Ok((rmse, calib))
}

fn main() -> pacoh::Result<()> {
    let env = generate(&EnvConfig {
        n_test_tasks: Some(10),
        ..EnvConfig::sinusoid(10, 5, 100, 0)
    })?;
    let tasks: Vec<_> = env.meta_train.iter().map(|t| t.train.clone()).collect();
    let base = BaseLearner::Gp(GpConfig::new(1));
    for steps in [0, 1000] {
        let cfg = MetaConfig {
            lambda_rule: Default::default(),
            beta_rule: BetaRule::M,
            k: 3,
            l: 5,
            task_batch: None,
            point_batch: None,
            svgd: SvgdConfig {
                steps,
                step_size: 1e-2,
                optimizer: Optimizer::AdaptivePerCoordinate { decay: 0.9 },
                ..SvgdConfig::default()
            },
            seed: 0,
            disable_hyper_prior: false,
            fixed_eps: false,
        };
        let res = meta_train(&tasks, &base, &HyperPrior::default(), &cfg)?;
        let (rmse, calib) = score(&res, &env.meta_test)?;
        println!("{steps:>5} meta-training steps: meta-test RMSE {rmse:.3}, calibration error {calib:.3}");
    }
    Ok(())
}
