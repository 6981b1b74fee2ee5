use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pacoh::bnn::{BnnArch, Likelihood, TargetTrainConfig};
use pacoh::bounds::{BoundSpec, LossModel};
use pacoh::envs::EnvConfig;
use pacoh::eval::{EvalReport, TaskEval};
use pacoh::gp::GpConfig;
use pacoh::meta::{BaseLearner, BetaRule, MetaConfig, MetaTestConfig};
use pacoh::runner::{mean_std, EvalTable};
use pacoh::svgd::{Optimizer, SvgdConfig};
use serde_json::{json, Value};

fn pacoh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pacoh"))
        .args(args)
        .env_remove("PACOH_SEED")
        .env_remove("PACOH_THREADS")
        .output()
        .unwrap()
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = pacoh(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap()
}

fn env_json(n: usize, m: usize) -> Value {
    serde_json::to_value(EnvConfig {
        n_test_tasks: Some(3),
        ..EnvConfig::sinusoid(n, m, 10, 0)
    })
    .unwrap()
}

fn svgd(steps: usize) -> SvgdConfig {
    SvgdConfig {
        steps,
        step_size: 1e-2,
        optimizer: Optimizer::AdaptivePerCoordinate { decay: 0.9 },
        ..SvgdConfig::default()
    }
}

fn meta_json(steps: usize) -> Value {
    serde_json::to_value(MetaConfig {
        k: 2,
        l: 3,
        task_batch: Some(2),
        point_batch: None,
        svgd: svgd(steps),
        seed: 0,
        disable_hyper_prior: false,
        fixed_eps: false,
        lambda_rule: Default::default(),
        beta_rule: BetaRule::M,
    })
    .unwrap()
}

fn test_json() -> Value {
    serde_json::to_value(MetaTestConfig {
        beta_rule: BetaRule::M,
        target: TargetTrainConfig {
            particles_per_prior: 2,
            svgd: svgd(30),
            seed: 0,
        },
    })
    .unwrap()
}

fn gp_base() -> Value {
    serde_json::to_value(BaseLearner::Gp(GpConfig {
        mean_hidden: vec![8],
        feature_hidden: vec![8],
        ..GpConfig::new(1)
    }))
    .unwrap()
}

fn bnn_base() -> Value {
    serde_json::to_value(BaseLearner::Bnn(BnnArch::new(1, vec![8], Likelihood::GaussianRegression).unwrap())).unwrap()
}

/// meta-train then meta-test into `out`; returns the eval report bytes.
fn train_and_test(dir: &Path, out: &Path, base: Value, seed: &str, threads: &str) -> Vec<u8> {
    let train = write_config(
        dir,
        "train.json",
        &json!({"env": env_json(4, 5), "base": base, "meta": meta_json(40)}),
    );
    run_ok("meta-train", &train, out, &["--seed", seed, "--threads", threads]);
    let test = write_config(
        dir,
        "test.json",
        &json!({"model": out.join("meta_train_result.json"), "env": env_json(4, 5), "test": test_json()}),
    );
    run_ok("meta-test", &test, out, &["--seed", seed, "--threads", threads]);
    fs::read(out.join("eval_report.json")).unwrap()
}

/// Every file under `dir` except manifests, keyed by relative path.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn env_gen_writes_forty_csvs_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let env = serde_json::to_value(EnvConfig {
        n_test_tasks: Some(0),
        ..EnvConfig::sinusoid(20, 5, 5, 0)
    })
    .unwrap();
    let cfg = write_config(dir.path(), "env.json", &json!({ "env": env }));
    let out = dir.path().join("out");
    run_ok("env-gen", &cfg, &out, &["--seed", "3"]);
    let names: Vec<String> = fs::read_dir(out.join("meta_train"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 40);
    assert!(names.contains(&"meta.json".to_string()));
    assert_eq!(names.len(), 41);
    assert!(!out.join("meta_test").exists());
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 41);
    for a in manifest["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"], pacoh::runner::sha256_hex(&bytes));
    }
}

#[test]
fn unknown_config_key_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", &json!({"env": env_json(2, 3), "colour": 1}));
    let o = pacoh(&["env-gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "ConfigError");
    assert!(err["message"].as_str().unwrap().contains("colour"));
    let missing = pacoh(&["env-gen", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn domain_error_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let pool = dir.path().join("pool.csv");
    fs::write(&pool, "a,b\n1,2\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "bandit.json",
        &json!({"pool": {"csv": pool}, "rounds": 3, "policy": "random", "prior": {"standard_bnn": {}}}),
    );
    let o = pacoh(&["bandit", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "SchemaError");
}

#[test]
fn meta_test_reproduces_report_under_same_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_and_test(dir.path(), &dir.path().join("a"), gp_base(), "7", "1");
    let b = train_and_test(dir.path(), &dir.path().join("b"), gp_base(), "7", "1");
    assert_eq!(a, b);
    let c = train_and_test(dir.path(), &dir.path().join("c"), gp_base(), "8", "1");
    assert_ne!(a, c);
    let report: EvalReport = serde_json::from_slice(&a).unwrap();
    assert_eq!((report.seed, report.per_task.len(), report.n_test), (7, 3, 30));
}

#[test]
fn eval_rescores_saved_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let report = train_and_test(dir.path(), &out, gp_base(), "2", "1");
    let cfg = write_config(
        dir.path(),
        "eval.json",
        &json!({"predictions": out.join("predictions.json"), "env": env_json(4, 5)}),
    );
    let again = dir.path().join("again");
    run_ok("eval", &cfg, &again, &["--seed", "2"]);
    assert_eq!(fs::read(again.join("eval_report.json")).unwrap(), report);
}

#[test]
fn seed_from_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "env.json", &json!({ "env": env_json(2, 3) }));
    run_ok("env-gen", &cfg, &dir.path().join("flag"), &["--seed", "11"]);
    let o = Command::new(env!("CARGO_BIN_EXE_pacoh"))
        .args(["env-gen", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("var").to_str().unwrap()])
        .env("PACOH_SEED", "11")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(artifacts(&dir.path().join("flag")), artifacts(&dir.path().join("var")));
}

fn eval_report(method: &str, seed: u64, rmse: f64, calib: f64) -> EvalReport {
    let t = TaskEval {
        task: 0,
        rmse,
        calib_err: calib,
        n_test: 10,
        accuracy: None,
    };
    EvalReport::from_tasks(method, "sinusoid", seed, 20, vec![t]).unwrap()
}

#[test]
fn report_aggregates_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let rmses = [0.5, 0.7, 0.4, 0.9, 0.6];
    let calibs = [0.1, 0.05, 0.2, 0.15, 0.12];
    let mut inputs = Vec::new();
    for s in 0..5 {
        let p = dir.path().join(format!("r{s}.json"));
        fs::write(&p, serde_json::to_string(&eval_report("PACOH-NN", s, rmses[s as usize], calibs[s as usize])).unwrap()).unwrap();
        inputs.push(p);
    }
    let single = write_config(dir.path(), "one.json", &json!({ "inputs": [inputs[0]] }));
    run_ok("report", &single, &dir.path().join("one"), &[]);
    let one: EvalTable = serde_json::from_slice(&fs::read(dir.path().join("one/report.json")).unwrap()).unwrap();
    assert_eq!(one.rows.len(), 1);

    let cfg = write_config(dir.path(), "rep.json", &json!({ "inputs": inputs }));
    let out = dir.path().join("out");
    run_ok("report", &cfg, &out, &[]);
    let table: EvalTable = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert_eq!(table.aggregates.len(), 1);
    let agg = &table.aggregates[0];
    let mean = rmses.iter().sum::<f64>() / 5.0;
    let std = (rmses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((agg.rmse_mean - mean).abs() < 1e-12 && (agg.rmse_std - std).abs() < 1e-12);
    assert_eq!(mean_std(&calibs), (agg.calib_err_mean, agg.calib_err_std));
    assert_eq!(agg.n_seeds, 5);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5 + 1);

    let bound = dir.path().join("bound.json");
    let spec = BoundSpec::standard(4, 5, 0.05, LossModel::Bounded { a: 0.0, b: 1.0 });
    let bcfg = write_config(dir.path(), "b.json", &json!({ "spec": spec, "empirical": 0.2 }));
    run_ok("bound", &bcfg, dir.path(), &[]);
    fs::rename(dir.path().join("bound_report.json"), &bound).unwrap();
    let mixed = write_config(dir.path(), "mixed.json", &json!({ "inputs": [inputs[0], bound] }));
    let o = pacoh(&["report", "--config", mixed.to_str().unwrap(), "--out", dir.path().join("m").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "SchemaError");
}

#[test]
fn bound_prints_report_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BoundSpec::standard(20, 5, 0.05, LossModel::Bounded { a: 0.0, b: 1.0 });
    let cfg = write_config(dir.path(), "b.json", &json!({ "spec": spec }));
    let o = pacoh(&["bound", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((report["total"].as_f64().unwrap() - 0.919_866_100_6).abs() < 1e-9);
    assert!(!Path::new(pacoh::runner::DEFAULT_OUT).exists());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn commands_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "env.json", &json!({ "env": env_json(2, 3) }));
    let before = fs::read(&cfg).unwrap();
    run_ok("env-gen", &cfg, &dir.path().join("o"), &["--seed", "1"]);
    assert_eq!(fs::read(&cfg).unwrap(), before);
}

#[test]
fn artifacts_match_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}"));
        train_and_test(dir.path(), &out.join("gp"), gp_base(), "5", threads);
        train_and_test(dir.path(), &out.join("bnn"), bnn_base(), "5", threads);
        let env = write_config(dir.path(), "env.json", &json!({ "env": env_json(3, 4) }));
        run_ok("env-gen", &env, &out.join("env"), &["--seed", "5", "--threads", threads]);
        let bandit = write_config(
            dir.path(),
            "bandit.json",
            &json!({
                "pool": {"family": {"family": {"d": 2, "w_scale": 0.5}, "arms": 40}},
                "rounds": 5,
                "policy": "thompson",
                "prior": {"standard_bnn": {"hidden_layers": [8], "copies": 2}},
                "target": {"particles_per_prior": 2, "svgd": svgd(20), "seed": 0}
            }),
        );
        run_ok("bandit", &bandit, &out.join("bandit"), &["--seed", "5", "--threads", threads]);
    }
    let a = artifacts(&dir.path().join("t1"));
    let b = artifacts(&dir.path().join("t2"));
    assert!(a.len() >= 15);
    assert_eq!(a.iter().map(|x| &x.0).collect::<Vec<_>>(), b.iter().map(|x| &x.0).collect::<Vec<_>>());
    for (x, y) in a.iter().zip(&b) {
        assert!(x.1 == y.1, "{} differs", x.0);
    }
}
