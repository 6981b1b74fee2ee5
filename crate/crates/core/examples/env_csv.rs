//! Samples Sinusoid and Cauchy environments, writes them as CSV task
//! directories and reads them back.

use pacoh::envs::{generate, load_csv_env, write_csv_env, EnvConfig, EnvKind};

fn main() -> pacoh::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| pacoh::Error::io(std::env::temp_dir(), e))?;
    let configs = [
        ("sinusoid", EnvConfig::sinusoid(5, 8, 20, 0)),
        (
            "cauchy",
            EnvConfig {
                kind: EnvKind::Cauchy,
                ..EnvConfig::sinusoid(5, 8, 20, 0)
            },
        ),
    ];
    for (name, cfg) in configs {
        let env = generate(&cfg)?;
        let path = dir.path().join(name);
        write_csv_env(&path, &env.meta_train)?;
        let back = load_csv_env(&path)?;
        let same = back.iter().zip(&env.meta_train).all(|(a, b)| a.train == b.train && a.test == b.test);
        println!(
            "{name}: {} tasks, d = {}, round trip exact: {same}",
            back.len(),
            back[0].train.dim()
        );
        println!("  first task parameters {}", env.meta_train[0].meta);
    }
    Ok(())
}
