//! Config-driven pipelines behind the `pacoh` command line.
//!
//! Every command reads one JSON config, writes its artifacts plus a
//! `manifest.json` into the output directory and returns what should go to
//! stdout. Nested `seed` fields are overwritten by the global seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{self, ArmFamily, ArmPool, BanditTrace, BnnSurrogate, GpSurrogate, Policy};
use crate::bnn::{BnnArch, BnnPrior, Likelihood, TargetTrainConfig};
use crate::bounds::{self, BoundReport, BoundSpec};
use crate::data::{Dataset, Targets};
use crate::envs::{self, EnvConfig, TaskSample};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, TaskEval, DEFAULT_LEVELS, EVAL_CSV_HEADER};
use crate::meta::{self, BaseLearner, BetaRule, HyperPrior, MetaConfig, MetaTestConfig, MetaTrainResult};
use crate::predictive::Predictive;
use crate::rng::substream;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    EnvGen,
    MetaTrain,
    MetaTest,
    Eval,
    Bound,
    Bandit,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::EnvGen => "env-gen",
            Command::MetaTrain => "meta-train",
            Command::MetaTest => "meta-test",
            Command::Eval => "eval",
            Command::Bound => "bound",
            Command::Bandit => "bandit",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    /// Output directory; `bound` only writes files when this is set.
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// What a successful run leaves behind.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub stdout: Option<String>,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactChecksum {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<ArtifactChecksum>,
}

pub const DEFAULT_OUT: &str = "pacoh_out";

/// Runs one command end to end.
pub fn run(command: Command, opts: &RunOptions) -> Result<Outcome> {
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // the global pool can only be built once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let start = Instant::now();
    let text = fs::read_to_string(&opts.config)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", opts.config.display())))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", opts.config.display())))?;
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let (seed, written, stdout) = match command {
        Command::EnvGen => exec(&raw, opts, |c: EnvGenConfig| c.run(&out))?,
        Command::MetaTrain => exec(&raw, opts, |c: MetaTrainCommand| c.run(&out))?,
        Command::MetaTest => exec(&raw, opts, |c: MetaTestCommand| c.run(&out))?,
        Command::Eval => exec(&raw, opts, |c: EvalCommand| c.run(&out))?,
        Command::Bound => exec(&raw, opts, |c: BoundCommand| c.run(opts.out.as_deref()))?,
        Command::Bandit => exec(&raw, opts, |c: BanditCommand| c.run(&out))?,
        Command::Report => exec(&raw, opts, |c: ReportCommand| c.run(&out))?,
    };
    if command == Command::Bound && opts.out.is_none() {
        return Ok(Outcome {
            stdout,
            artifacts: written,
        });
    }
    let manifest = RunManifest {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config: raw,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        artifacts: written
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(ArtifactChecksum {
                    path: p.strip_prefix(&out).unwrap_or(p).to_string_lossy().replace('\\', "/"),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<Result<_>>()?,
    };
    write_atomic(&out.join(MANIFEST), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(Outcome {
        stdout,
        artifacts: written,
    })
}

type Ran = (u64, Vec<PathBuf>, Option<String>);

trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;
    fn validate(&self) -> Result<()>;
}

fn exec<C: DeserializeOwned + Seeded>(raw: &serde_json::Value, opts: &RunOptions, f: impl FnOnce(C) -> Result<(Vec<PathBuf>, Option<String>)>) -> Result<Ran> {
    let mut cfg: C = serde_json::from_value(raw.clone())
        .map_err(|e| Error::Config(format!("{}: {e}", opts.config.display())))?;
    if let Some(s) = opts.seed {
        *cfg.seed_mut() = s;
    }
    let seed = *cfg.seed_mut();
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    let (written, stdout) = f(cfg)?;
    Ok((seed, written, stdout))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    write_atomic(path, &(serde_json::to_string_pretty(value)? + "\n"))?;
    Ok(path.to_path_buf())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Which half of an environment to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    MetaTrain,
    #[default]
    MetaTest,
}

fn select_split(env: envs::Environment, split: Split) -> Vec<TaskSample> {
    match split {
        Split::MetaTrain => env.meta_train,
        Split::MetaTest => env.meta_test,
    }
}

fn env_label(env: &EnvConfig) -> String {
    match &env.kind {
        envs::EnvKind::Sinusoid => "sinusoid".into(),
        envs::EnvKind::Cauchy => "cauchy".into(),
        envs::EnvKind::CsvDir { path } => path
            .file_name()
            .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned()),
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvGenConfig {
    #[serde(default)]
    pub seed: u64,
    pub env: EnvConfig,
}

impl Seeded for EnvGenConfig {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        if matches!(self.env.kind, envs::EnvKind::CsvDir { .. }) {
            return Err(Error::InvalidArgument("env-gen needs a synthetic environment".into()));
        }
        self.env.validate()
    }
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

impl EnvGenConfig {
    fn run(mut self, out: &Path) -> Result<(Vec<PathBuf>, Option<String>)> {
        self.env.seed = self.seed;
        let env = envs::generate(&self.env)?;
        let mut written = Vec::new();
        for (name, tasks) in [("meta_train", &env.meta_train), ("meta_test", &env.meta_test)] {
            let dir = out.join(name);
            if tasks.is_empty() {
                continue;
            }
            envs::write_csv_env(&dir, tasks)?;
            written.extend(list_files(&dir)?);
        }
        Ok((written, None))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTrainCommand {
    #[serde(default)]
    pub seed: u64,
    pub env: EnvConfig,
    pub base: BaseLearner,
    #[serde(default)]
    pub hyper_prior: HyperPrior,
    pub meta: MetaConfig,
}

impl Seeded for MetaTrainCommand {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.hyper_prior.validate()?;
        self.base.param_count()?;
        self.meta.validate()
    }
}

impl MetaTrainCommand {
    fn run(mut self, out: &Path) -> Result<(Vec<PathBuf>, Option<String>)> {
        self.env.seed = self.seed;
        self.meta.seed = self.seed;
        let env = envs::generate(&self.env)?;
        let tasks: Vec<Dataset> = env.meta_train.into_iter().map(|t| t.train).collect();
        let result = meta::meta_train(&tasks, &self.base, &self.hyper_prior, &self.meta)?;
        let path = out.join("meta_train_result.json");
        write_atomic(&path, &(result.to_json()? + "\n"))?;
        Ok((vec![path], None))
    }
}

/// Per-task predictive distribution at the test inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub task: usize,
    pub predictive: Predictive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub method: String,
    pub environment: String,
    pub seed: u64,
    pub tasks: Vec<TaskPrediction>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTestCommand {
    #[serde(default)]
    pub seed: u64,
    /// `meta_train_result.json` from `meta-train`.
    pub model: PathBuf,
    pub env: EnvConfig,
    #[serde(default)]
    pub split: Split,
    pub test: MetaTestConfig,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub method: Option<String>,
}

fn default_levels() -> usize {
    DEFAULT_LEVELS
}

impl Seeded for MetaTestCommand {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        self.env.validate()?;
        check_levels(self.levels)?;
        self.test.target.svgd.validate()
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidArgument("levels must be >= 1".into()));
    }
    Ok(())
}

impl MetaTestCommand {
    fn run(mut self, out: &Path) -> Result<(Vec<PathBuf>, Option<String>)> {
        self.env.seed = self.seed;
        self.test.target.seed = self.seed;
        let text = fs::read_to_string(&self.model).map_err(|e| Error::io(&self.model, e))?;
        let model = MetaTrainResult::from_json(&text).map_err(|e| e.context(self.model.display().to_string()))?;
        let tasks = select_split(envs::generate(&self.env)?, self.split);
        let predictions = PredictionSet {
            method: self.method.clone().unwrap_or_else(|| default_method(&model.base)),
            environment: env_label(&self.env),
            seed: self.seed,
            tasks: tasks
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    Ok(TaskPrediction {
                        task: i,
                        predictive: meta::meta_predict(&model, &t.train, t.test.x(), &self.test)
                            .map_err(|e| e.context(format!("task {i}")))?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        let mut written = vec![write_json(&out.join("predictions.json"), &predictions)?];
        written.extend(write_evaluation(out, &predictions, &tasks, self.levels)?);
        Ok((written, None))
    }
}

fn default_method(base: &BaseLearner) -> String {
    match base {
        BaseLearner::Gp(_) => "PACOH-GP".into(),
        BaseLearner::Bnn(_) => "PACOH-NN".into(),
    }
}

/// Scores predictions against the test splits; writes the report (JSON and
/// CSV) and the calibration curves.
fn write_evaluation(out: &Path, preds: &PredictionSet, tasks: &[TaskSample], levels: usize) -> Result<Vec<PathBuf>> {
    if preds.tasks.len() != tasks.len() {
        return Err(Error::LengthMismatch {
            left: preds.tasks.len(),
            right: tasks.len(),
        });
    }
    let mut per_task: Vec<TaskEval> = Vec::new();
    let mut curve = String::from("task,q,q_hat\n");
    for (p, t) in preds.tasks.iter().zip(tasks) {
        let e = match (&p.predictive, t.test.targets()) {
            (Predictive::Regression(mix), Targets::Regression(y)) => {
                for (q, qh) in eval::calibration_curve(mix, y, levels)? {
                    curve.push_str(&format!("{},{q},{qh}\n", p.task));
                }
                eval::evaluate_regression(p.task, mix, y, levels)?
            }
            (Predictive::Classification(cp), Targets::Classification { labels, .. }) => {
                eval::evaluate_classification(p.task, cp, labels, levels)?
            }
            _ => return Err(Error::Schema(format!("task {}: prediction and targets disagree in kind", p.task))),
        };
        per_task.push(e);
    }
    let report = EvalReport::from_tasks(&preds.method, &preds.environment, preds.seed, levels, per_task)?;
    let csv_path = out.join("eval_report.csv");
    write_atomic(&csv_path, &format!("{EVAL_CSV_HEADER}\n{}\n", report.csv_row()))?;
    let curve_path = out.join("calibration.csv");
    write_atomic(&curve_path, &curve)?;
    Ok(vec![write_json(&out.join("eval_report.json"), &report)?, csv_path, curve_path])
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalCommand {
    #[serde(default)]
    pub seed: u64,
    /// `predictions.json` from `meta-test`.
    pub predictions: PathBuf,
    pub env: EnvConfig,
    #[serde(default)]
    pub split: Split,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

impl Seeded for EvalCommand {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        self.env.validate()?;
        check_levels(self.levels)
    }
}

impl EvalCommand {
    fn run(mut self, out: &Path) -> Result<(Vec<PathBuf>, Option<String>)> {
        self.env.seed = self.seed;
        let preds: PredictionSet = read_json(&self.predictions)?;
        let tasks = select_split(envs::generate(&self.env)?, self.split);
        Ok((write_evaluation(out, &preds, &tasks, self.levels)?, None))
    }
}

/// Bound terms; missing terms are zero.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCommand {
    #[serde(default)]
    pub seed: u64,
    pub spec: BoundSpec,
    #[serde(default)]
    pub empirical: f64,
    #[serde(default)]
    pub kl_hyper: f64,
    #[serde(default)]
    pub kl_tasks: Option<Vec<f64>>,
}

impl Seeded for BoundCommand {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        self.spec.validate()
    }
}

impl BoundCommand {
    fn run(self, out: Option<&Path>) -> Result<(Vec<PathBuf>, Option<String>)> {
        let kl_tasks = self.kl_tasks.clone().unwrap_or_else(|| vec![0.0; self.spec.n]);
        let report: BoundReport = bounds::meta_bound_uniform(self.empirical, self.kl_hyper, &kl_tasks, &self.spec)?;
        let text = serde_json::to_string_pretty(&report)?;
        let written = match out {
            Some(dir) => vec![write_json(&dir.join("bound_report.json"), &report)?],
            None => Vec::new(),
        };
        Ok((written, Some(text)))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSource {
    /// CSV with header `x0..x{d-1},reward`.
    Csv(PathBuf),
    /// A fresh task of the synthetic arm family.
    Family { family: ArmFamily, arms: usize },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSource {
    /// `copies` standard-normal BNN priors.
    StandardBnn {
        #[serde(default = "default_hidden")]
        hidden_layers: Vec<usize>,
        #[serde(default = "default_copies")]
        copies: usize,
    },
    /// Priors from a `meta-train` result.
    Model(PathBuf),
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_copies() -> usize {
    3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditCommand {
    #[serde(default)]
    pub seed: u64,
    pub pool: PoolSource,
    pub rounds: usize,
    pub policy: Policy,
    pub prior: PriorSource,
    /// Target training of BNN surrogates.
    #[serde(default)]
    pub target: Option<TargetTrainConfig>,
    #[serde(default)]
    pub beta_rule: BetaRule,
}

impl Seeded for BanditCommand {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if let PoolSource::Family { family, arms } = &self.pool {
            family.validate()?;
            if *arms < 2 {
                return Err(Error::InvalidArgument("a pool needs at least two arms".into()));
            }
        }
        if let PriorSource::StandardBnn { copies: 0, .. } = self.prior {
            return Err(Error::InvalidArgument("copies must be >= 1".into()));
        }
        if let Some(t) = &self.target {
            t.svgd.validate()?;
        }
        Ok(())
    }
}

fn default_target() -> TargetTrainConfig {
    TargetTrainConfig {
        particles_per_prior: 5,
        svgd: crate::svgd::SvgdConfig::default(),
        seed: 0,
    }
}

impl BanditCommand {
    fn run(self, out: &Path) -> Result<(Vec<PathBuf>, Option<String>)> {
        let pool = match &self.pool {
            PoolSource::Csv(p) => ArmPool::read_csv(p)?,
            PoolSource::Family { family, arms } => family.sample_pool(*arms, &mut substream(self.seed, "bandit_pool", &[]))?,
        };
        let mut target = self.target.clone().unwrap_or_else(default_target);
        target.seed = self.seed;
        let mut rng = substream(self.seed, "bandit_policy", &[]);
        let trace: BanditTrace = match &self.prior {
            PriorSource::StandardBnn { hidden_layers, copies } => {
                let arch = BnnArch::new(pool.dim(), hidden_layers.clone(), Likelihood::GaussianRegression)?;
                let s = BnnSurrogate {
                    priors: vec![BnnPrior::standard(arch)?; *copies],
                    beta_rule: self.beta_rule,
                    target,
                };
                bandit::run_bandit(&s, &pool, self.rounds, self.policy, &mut rng)?
            }
            PriorSource::Model(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let model = MetaTrainResult::from_json(&text).map_err(|e| e.context(path.display().to_string()))?;
                if model.base.input_dim() != pool.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "model expects d={}, pool has d={}",
                        model.base.input_dim(),
                        pool.dim()
                    )));
                }
                match model.base {
                    BaseLearner::Gp(_) => {
                        let s = GpSurrogate {
                            priors: model.gp_priors()?,
                        };
                        bandit::run_bandit(&s, &pool, self.rounds, self.policy, &mut rng)?
                    }
                    BaseLearner::Bnn(_) => {
                        let s = BnnSurrogate {
                            priors: model.bnn_priors()?,
                            beta_rule: self.beta_rule,
                            target,
                        };
                        bandit::run_bandit(&s, &pool, self.rounds, self.policy, &mut rng)?
                    }
                }
            }
        };
        let pool_path = out.join("pool.csv");
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        pool.write_csv(&pool_path)?;
        let trace_path = out.join("trace.csv");
        write_atomic(&trace_path, &trace.to_csv())?;
        Ok((vec![pool_path, trace_path, write_json(&out.join("trace.json"), &trace)?], None))
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportCommand {
    #[serde(default)]
    pub seed: u64,
    /// Homogeneous list of `eval_report.json` or `bound_report.json` files.
    pub inputs: Vec<PathBuf>,
}

impl Seeded for ReportCommand {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::EmptyList("report inputs"));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub environment: String,
    pub n_seeds: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub calib_err_mean: f64,
    pub calib_err_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<EvalReport>,
    pub aggregates: Vec<AggregateRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub source: String,
    #[serde(flatten)]
    pub report: BoundReport,
}

/// `(mean, sample std)`; the std of a single value is 0.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-seed rows plus one aggregate per `(method, environment)`.
pub fn eval_table(rows: Vec<EvalReport>) -> EvalTable {
    let mut groups: BTreeMap<(String, String), Vec<&EvalReport>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.method.clone(), r.environment.clone())).or_default().push(r);
    }
    let aggregates = groups
        .into_iter()
        .map(|((method, environment), rs)| {
            let (rmse_mean, rmse_std) = mean_std(&rs.iter().map(|r| r.rmse).collect::<Vec<_>>());
            let (calib_err_mean, calib_err_std) = mean_std(&rs.iter().map(|r| r.calib_err).collect::<Vec<_>>());
            AggregateRow {
                method,
                environment,
                n_seeds: rs.len(),
                rmse_mean,
                rmse_std,
                calib_err_mean,
                calib_err_std,
            }
        })
        .collect();
    EvalTable { rows, aggregates }
}

pub const REPORT_CSV_HEADER: &str = "method,environment,seed,rmse,rmse_std,calib_err,calib_err_std,n_seeds";

impl EvalTable {
    /// Per-seed rows have an empty std; aggregate rows use `seed = mean`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{},,{},,1\n", r.method, r.environment, r.seed, r.rmse, r.calib_err));
        }
        for a in &self.aggregates {
            s.push_str(&format!(
                "{},{},mean,{},{},{},{},{}\n",
                a.method, a.environment, a.rmse_mean, a.rmse_std, a.calib_err_mean, a.calib_err_std, a.n_seeds
            ));
        }
        s
    }
}

pub const BOUND_CSV_HEADER: &str = "source,empirical_term,kl_hyper,kl_task_avg,c_term,total";

enum ReportKind {
    Eval(EvalReport),
    Bound(BoundReport),
}

fn read_report(path: &Path) -> Result<ReportKind> {
    let v: serde_json::Value = read_json(path)?;
    let is_eval = v.get("rmse").is_some();
    let kind = if is_eval {
        serde_json::from_value(v).map(ReportKind::Eval)
    } else {
        serde_json::from_value(v).map(ReportKind::Bound)
    };
    kind.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

impl ReportCommand {
    fn run(self, out: &Path) -> Result<(Vec<PathBuf>, Option<String>)> {
        let mut evals = Vec::new();
        let mut bounds = Vec::new();
        for p in &self.inputs {
            match read_report(p)? {
                ReportKind::Eval(r) => evals.push(r),
                ReportKind::Bound(r) => bounds.push(BoundRow {
                    source: p.display().to_string(),
                    report: r,
                }),
            }
        }
        if !evals.is_empty() && !bounds.is_empty() {
            return Err(Error::Schema("report inputs mix evaluation and bound reports".into()));
        }
        let csv_path = out.join("report.csv");
        let json_path = out.join("report.json");
        if bounds.is_empty() {
            let levels = evals[0].levels;
            if evals.iter().any(|r| r.levels != levels) {
                return Err(Error::Schema("evaluation reports use different confidence levels".into()));
            }
            let table = eval_table(evals);
            write_atomic(&csv_path, &table.to_csv())?;
            write_json(&json_path, &table)?;
        } else {
            let mut s = format!("{BOUND_CSV_HEADER}\n");
            for b in &bounds {
                let r = &b.report;
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    b.source, r.empirical_term, r.kl_hyper, r.kl_task_avg, r.c_term, r.total
                ));
            }
            write_atomic(&csv_path, &s)?;
            write_json(&json_path, &bounds)?;
        }
        Ok((vec![csv_path, json_path], None))
    }
}

/// Exit status for a failed run: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Single-line JSON for stderr.
pub fn error_json(err: &Error) -> String {
    serde_json::json!({
        "error": err.root().kind(),
        "message": err.to_string(),
    })
    .to_string()
}
