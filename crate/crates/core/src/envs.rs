//! Synthetic task environments and the CSV task-directory format.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Targets};
use crate::diffmath::{cholesky, Matrix};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Train/test split of one task plus the parameters that generated it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub train: Dataset,
    pub test: Dataset,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub const SINUSOID_NOISE: f64 = 0.1;
pub const SINUSOID_X_RANGE: (f64, f64) = (-5.0, 5.0);

/// `f(x) = slope·x + amplitude·sin(1.5(x − phase)) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidTask {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub slope: f64,
    pub noise: f64,
}

impl SinusoidTask {
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            amplitude: Uniform::new(0.7, 1.3).expect("valid range").sample(rng),
            phase: 0.1 * rng.sample::<f64, _>(StandardNormal),
            offset: 5.0 + 0.1 * rng.sample::<f64, _>(StandardNormal),
            slope: 0.5 + 0.2 * rng.sample::<f64, _>(StandardNormal),
            noise: SINUSOID_NOISE,
        }
    }

    pub fn f(&self, x: f64) -> f64 {
        self.slope * x + self.amplitude * (1.5 * (x - self.phase)).sin() + self.offset
    }

    pub fn sample_points(&self, m: usize, rng: &mut Rng) -> Dataset {
        let ux = Uniform::new_inclusive(SINUSOID_X_RANGE.0, SINUSOID_X_RANGE.1).expect("valid range");
        let x: Vec<f64> = (0..m).map(|_| ux.sample(rng)).collect();
        let y = x
            .iter()
            .map(|&xi| self.f(xi) + self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Dataset::regression(Matrix::column(&x), y).expect("finite samples")
    }

    pub fn sample_split(&self, m_train: usize, m_test: usize, rng: &mut Rng) -> TaskSample {
        TaskSample {
            train: self.sample_points(m_train, rng),
            test: self.sample_points(m_test, rng),
            meta: serde_json::to_value(self).expect("plain struct"),
        }
    }
}

pub const CAUCHY_NOISE: f64 = 0.05;
pub const CAUCHY_LENGTHSCALE: f64 = 0.2;
pub const CAUCHY_CLIP: (f64, f64) = (-3.0, 2.0);
pub const CAUCHY_JITTER: f64 = 1e-10;
const CAUCHY_MU1: [f64; 2] = [-1.0, -1.0];
const CAUCHY_MU2: [f64; 2] = [2.0, 2.0];

/// Unnormalised two-component Cauchy mixture.
pub fn cauchy_mean(x: &[f64]) -> f64 {
    let d1: f64 = x.iter().zip(CAUCHY_MU1).map(|(a, b)| (a - b) * (a - b)).sum();
    let d2: f64 = x.iter().zip(CAUCHY_MU2).map(|(a, b)| (a - b) * (a - b)).sum();
    6.0 / (PI * (1.0 + d1)) + 3.0 / (PI * (1.0 + d2))
}

/// Squared-exponential kernel `exp(−‖x − x'‖²/(2l))` of the GP perturbation.
pub fn cauchy_kernel(x: &[f64], x2: &[f64]) -> f64 {
    let d: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d / (2.0 * CAUCHY_LENGTHSCALE)).exp()
}

pub fn clip_input(v: f64) -> f64 {
    v.clamp(CAUCHY_CLIP.0, CAUCHY_CLIP.1)
}

/// A Cauchy-environment task. The GP perturbation has no global
/// representation; it is drawn jointly at the inputs of a split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CauchyTask {
    pub noise: f64,
}

impl CauchyTask {
    pub fn new() -> Self {
        Self { noise: CAUCHY_NOISE }
    }

    pub fn sample_inputs(m: usize, rng: &mut Rng) -> Matrix {
        let n = Normal::new(0.0, 2.5).expect("valid sd");
        let data = (0..2 * m).map(|_| clip_input(n.sample(rng))).collect();
        Matrix::new(m, 2, data).expect("finite inputs")
    }

    /// Joint draw of `g` at the rows of `x`.
    pub fn sample_perturbation(x: &Matrix, rng: &mut Rng) -> Result<Vec<f64>> {
        let m = x.rows();
        let mut k = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                k[(i, j)] = cauchy_kernel(x.row(i), x.row(j));
            }
        }
        let l = cholesky(&k, &[CAUCHY_JITTER, 1e-8, 1e-6])?.factor;
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        Ok(l.matvec(&z))
    }

    pub fn sample_split(&self, m_train: usize, m_test: usize, rng: &mut Rng) -> Result<TaskSample> {
        let x = Self::sample_inputs(m_train + m_test, rng);
        let g = Self::sample_perturbation(&x, rng)?;
        let y: Vec<f64> = (0..x.rows())
            .map(|i| cauchy_mean(x.row(i)) + g[i] + self.noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let all = Dataset::regression(x, y)?;
        let train_idx: Vec<usize> = (0..m_train).collect();
        let test_idx: Vec<usize> = (m_train..m_train + m_test).collect();
        Ok(TaskSample {
            train: all.select(&train_idx),
            test: all.select(&test_idx),
            meta: serde_json::to_value(self).expect("plain struct"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sinusoid,
    Cauchy,
    CsvDir { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Unused for `CsvDir`.
    #[serde(default)]
    pub n_tasks: usize,
    #[serde(default)]
    pub m_train: usize,
    #[serde(default)]
    pub m_test: usize,
    /// Meta-test tasks; defaults to `n_tasks`.
    #[serde(default)]
    pub n_test_tasks: Option<usize>,
    /// Observation noise override.
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl EnvConfig {
    pub fn sinusoid(n_tasks: usize, m_train: usize, m_test: usize, seed: u64) -> Self {
        Self {
            kind: EnvKind::Sinusoid,
            n_tasks,
            m_train,
            m_test,
            n_test_tasks: None,
            noise: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.kind, EnvKind::CsvDir { .. }) {
            return Ok(());
        }
        if self.n_tasks == 0 || self.m_train == 0 {
            return Err(Error::InvalidArgument("n_tasks and m_train must be >= 1".into()));
        }
        if let Some(s) = self.noise {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument("noise must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Meta-train and meta-test task lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub meta_train: Vec<TaskSample>,
    pub meta_test: Vec<TaskSample>,
}

fn synthetic_task(cfg: &EnvConfig, role: &str, index: usize) -> Result<TaskSample> {
    let mut rng = substream(cfg.seed, role, &[index as u64]);
    match &cfg.kind {
        EnvKind::Sinusoid => {
            let mut t = SinusoidTask::sample(&mut rng);
            if let Some(s) = cfg.noise {
                t.noise = s;
            }
            Ok(t.sample_split(cfg.m_train, cfg.m_test, &mut rng))
        }
        EnvKind::Cauchy => {
            let mut t = CauchyTask::new();
            if let Some(s) = cfg.noise {
                t.noise = s;
            }
            t.sample_split(cfg.m_train, cfg.m_test, &mut rng)
        }
        EnvKind::CsvDir { .. } => unreachable!(),
    }
}

/// Generates both task lists; every task draws from its own stream.
///
/// For `CsvDir` the directory must contain `meta_train/` and `meta_test/`
/// task directories.
pub fn generate(cfg: &EnvConfig) -> Result<Environment> {
    cfg.validate()?;
    if let EnvKind::CsvDir { path } = &cfg.kind {
        return Ok(Environment {
            meta_train: load_csv_env(&path.join("meta_train"))?,
            meta_test: load_csv_env(&path.join("meta_test"))?,
        });
    }
    let n_test = cfg.n_test_tasks.unwrap_or(cfg.n_tasks);
    Ok(Environment {
        meta_train: (0..cfg.n_tasks)
            .map(|i| synthetic_task(cfg, "env_meta_train", i))
            .collect::<Result<_>>()?,
        meta_test: (0..n_test)
            .map(|i| synthetic_task(cfg, "env_meta_test", i))
            .collect::<Result<_>>()?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Regression,
    Classification,
}

/// `meta.json` of a task directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvMeta {
    pub d: usize,
    pub target: TargetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.x().row(i).iter().map(|v| v.to_string()).collect();
        rec.push(match data.targets() {
            Targets::Regression(y) => y[i].to_string(),
            Targets::Classification { labels, .. } => labels[i].to_string(),
        });
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_dataset(path: &Path, meta: &CsvMeta) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let mut expected: Vec<String> = (0..meta.d).map(|j| format!("x{j}")).collect();
    expected.push("y".into());
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Schema(format!(
            "{}: header must be {}",
            path.display(),
            expected.join(",")
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != meta.d + 1 {
            return Err(Error::Schema(format!(
                "{} row {}: {} columns, expected {}",
                path.display(),
                line + 1,
                rec.len(),
                meta.d + 1
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Schema(format!("{} row {}: bad number {field:?}", path.display(), line + 1))
            })?;
            if j < meta.d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyTask(path.display().to_string()));
    }
    let x = Matrix::new(ys.len(), meta.d, xs).map_err(|e| e.context(path.display().to_string()))?;
    match meta.target {
        TargetKind::Regression => Dataset::regression(x, ys),
        TargetKind::Classification => {
            let labels: Vec<usize> = ys
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Schema(format!("{}: label {v} is not a class index", path.display())))
                    }
                })
                .collect::<Result<_>>()?;
            let classes = meta
                .classes
                .unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
            Dataset::classification(x, labels, classes)
        }
    }
}

/// Writes `meta.json` plus `task_<idx>_{train,test}.csv` files.
pub fn write_csv_env(dir: &Path, tasks: &[TaskSample]) -> Result<()> {
    let first = tasks.first().ok_or(Error::EmptyList("no tasks to write"))?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CsvMeta {
        d: first.train.dim(),
        target: if first.train.is_regression() {
            TargetKind::Regression
        } else {
            TargetKind::Classification
        },
        classes: match first.train.targets() {
            Targets::Classification { classes, .. } => Some(*classes),
            Targets::Regression(_) => None,
        },
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))?;
    let width = tasks.len().saturating_sub(1).to_string().len().max(3);
    for (i, t) in tasks.iter().enumerate() {
        if t.train.dim() != meta.d || t.test.dim() != meta.d {
            return Err(Error::Schema(format!("task {i} has inconsistent dimension")));
        }
        write_dataset(&dir.join(format!("task_{i:0width$}_train.csv")), &t.train)?;
        write_dataset(&dir.join(format!("task_{i:0width$}_test.csv")), &t.test)?;
    }
    Ok(())
}

/// Reads a task directory; tasks are ordered by file name.
pub fn load_csv_env(dir: &Path) -> Result<Vec<TaskSample>> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CsvMeta = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", meta_path.display())))?;
    if meta.d == 0 {
        return Err(Error::Schema("meta.json: d must be >= 1".into()));
    }
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    names.retain(|n| n.starts_with("task_") && n.ends_with("_train.csv"));
    names.sort();
    if names.is_empty() {
        return Err(Error::Schema(format!("{}: no task files", dir.display())));
    }
    names
        .iter()
        .map(|n| {
            let stem = &n[..n.len() - "_train.csv".len()];
            let test_path = dir.join(format!("{stem}_test.csv"));
            Ok(TaskSample {
                train: read_dataset(&dir.join(n), &meta)?,
                test: read_dataset(&test_path, &meta)?,
                meta: serde_json::Value::Null,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sinusoid_reference_point() {
        let t = SinusoidTask {
            amplitude: 1.0,
            phase: 0.0,
            offset: 5.0,
            slope: 0.5,
            noise: 0.1,
        };
        assert_eq!(t.f(0.0), 5.0);
        let b = 0.3;
        let t = SinusoidTask { phase: b, ..t };
        assert!((t.f(b) - 0.5 * b - 5.0).abs() < 1e-15);
    }

    #[test]
    fn cauchy_mean_at_first_mode() {
        let want = 6.0 / PI + 3.0 / (PI * 19.0);
        assert!((cauchy_mean(&[-1.0, -1.0]) - want).abs() < 1e-15);
        assert!((want - 1.960).abs() < 1e-3);
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_input(5.0), 2.0);
        assert_eq!(clip_input(-7.0), -3.0);
        assert_eq!(clip_input(0.5), 0.5);
    }

    #[test]
    fn cauchy_perturbation_has_unit_variance_kernel() {
        assert_eq!(cauchy_kernel(&[0.3, 0.1], &[0.3, 0.1]), 1.0);
        let mut rng = Rng::seed_from_u64(1);
        let t = CauchyTask::new().sample_split(4, 3, &mut rng).unwrap();
        assert_eq!((t.train.len(), t.test.len(), t.train.dim()), (4, 3, 2));
    }

    #[test]
    fn table_sizes() {
        let env = generate(&EnvConfig::sinusoid(20, 5, 10, 0)).unwrap();
        assert_eq!(env.meta_train.len(), 20);
        assert!(env.meta_train.iter().all(|t| t.train.len() == 5));
    }
}
