//! Thompson sampling on a synthetic arm pool with a meta-learned BNN prior
//! and with a standard-normal prior.

use pacoh::bandit::{run_bandit, ArmFamily, BnnSurrogate, Policy};
use pacoh::bnn::{BnnArch, BnnPrior, Likelihood, TargetTrainConfig};
use pacoh::meta::{meta_train, BaseLearner, BetaRule, HyperPrior, MetaConfig};
use pacoh::rng::substream;
use pacoh::svgd::{Optimizer, SvgdConfig};

fn main() -> pacoh::Result<()> {
    let seed = 2;
    let fam = ArmFamily { d: 4, w_scale: 0.5 };
    let arch = BnnArch::new(fam.d, vec![16, 16], Likelihood::GaussianRegression)?;
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
        svgd: adaptive(1000),
        seed,
        disable_hyper_prior: false,
        fixed_eps: false,
    };
    let res = meta_train(&fam.meta_train_tasks(20, 10, seed)?, &BaseLearner::Bnn(arch.clone()), &HyperPrior::default(), &cfg)?;
    let target = TargetTrainConfig {
        particles_per_prior: 5,
        svgd: adaptive(100),
        seed,
    };
    let pool = fam.sample_pool(300, &mut substream(seed, "bandit_pool", &[]))?;
    let surrogates = [
        ("meta-learned prior", res.bnn_priors()?),
        ("standard prior", vec![BnnPrior::standard(arch)?; 3]),
    ];
    for (name, priors) in surrogates {
        let s = BnnSurrogate {
            priors,
            beta_rule: BetaRule::M,
            target: target.clone(),
        };
        let trace = run_bandit(&s, &pool, 20, Policy::Thompson, &mut substream(seed, "bandit_policy", &[]))?;
        println!(
            "{name}: simple regret {:.3}, average regret {:.3} after {} rounds",
            trace.simple_regret.last().unwrap(),
            trace.avg_regret.last().unwrap(),
            trace.len()
        );
    }
    Ok(())
}
