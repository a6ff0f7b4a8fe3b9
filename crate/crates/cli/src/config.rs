//! Command configurations, flag overrides and data sources.
//!
//! Every command reads one JSON object. `--override a.b=v` replaces the value at
//! the dotted path before deserialization, where `v` is parsed as JSON when
//! possible and taken as a string otherwise. `--seed` is shorthand for
//! `--override seed=<n>`.

use std::path::{Path, PathBuf};

use rgm_core::convex::DEFAULT_MAX_ITERATIONS;
use rgm_core::experiments;
use rgm_core::gw::EntropicGwConfig;
use rgm_core::measure::{gen_circle, gen_gaussian, gen_segment_between, read_csv};
use rgm_core::objective::ObjectiveSpec;
use rgm_core::trainer::TrainConfig;
use rgm_core::{DatasetPair, EmpiricalMeasure, KernelSpec, Matrix, Rng};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Reads the config file (or starts from `{}`) and applies overrides.
pub fn load_value(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Value, CliError> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    if let Some(s) = seed {
        value["seed"] = Value::from(s);
    }
    Ok(value)
}

pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{}` is not an object", parts[..k].join("."))))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("key has at least one part")
}

pub fn parse<T: DeserializeOwned>(value: &Value) -> Result<T, CliError> {
    serde_json::from_value(value.clone()).map_err(|e| CliError::Config(e.to_string()))
}

/// A point cloud, read from a file or generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSource {
    File {
        path: PathBuf,
        #[serde(default)]
        header: bool,
    },
    /// `n` draws from `N(0, covariance)`; the identity when omitted.
    Gaussian {
        n: usize,
        #[serde(default)]
        covariance: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        seed: u64,
    },
    /// Equally spaced points; `(−1, −1)` to `(1, 1)` when the endpoints are omitted.
    Segment {
        n: usize,
        #[serde(default)]
        start: Option<Vec<f64>>,
        #[serde(default)]
        end: Option<Vec<f64>>,
    },
    Circle {
        n: usize,
    },
}

fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    Ok(Matrix::from_rows(rows)?)
}

impl PointSource {
    pub fn load(&self) -> Result<EmpiricalMeasure, CliError> {
        Ok(match self {
            PointSource::File { path, header } => read_csv(path, *header)?,
            PointSource::Gaussian { n, covariance, seed } => {
                let cov = match covariance {
                    Some(rows) => matrix_from_rows(rows)?,
                    None => Matrix::identity(2),
                };
                gen_gaussian(*n, &cov, &mut Rng::new(*seed))?
            }
            PointSource::Segment { n, start, end } => {
                let start = start.clone().unwrap_or_else(|| vec![-1.0, -1.0]);
                let end = end.clone().unwrap_or_else(|| vec![1.0, 1.0]);
                gen_segment_between(*n, &start, &end)?
            }
            PointSource::Circle { n } => gen_circle(*n)?,
        })
    }
}

fn default_segment_circle_n() -> usize {
    experiments::SEGMENT_CIRCLE_POINTS
}

fn default_gaussian_n() -> usize {
    experiments::GAUSSIAN_POINTS
}

/// Source and target clouds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Pair { source: PointSource, target: PointSource },
    /// Length-2 diagonal segment against the unit circle.
    SegmentCircle {
        #[serde(default = "default_segment_circle_n")]
        n: usize,
    },
    /// `N(0, I)` against `N(0, Σ)` with unit variances and correlation 0.7.
    Gaussian {
        #[serde(default = "default_gaussian_n")]
        n: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSpec {
    pub fn load(&self) -> Result<DatasetPair, CliError> {
        Ok(match self {
            DataSpec::Pair { source, target } => DatasetPair::new(source.load()?, target.load()?),
            DataSpec::SegmentCircle { n } => experiments::segment_circle_data(*n)?,
            DataSpec::Gaussian { n, seed } => experiments::gaussian_data(*n, *seed)?,
        })
    }
}

fn default_points_file() -> String {
    "points.csv".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub points: PointSource,
    /// File name inside the output directory.
    #[serde(default = "default_points_file")]
    pub output: String,
    /// Replaces the generator seed of a Gaussian source when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub data: DataSpec,
    pub train: TrainConfig,
    /// Replaces `train.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexInit {
    Zeros,
    /// Independent normal entries times `scale`, drawn from the run seed.
    Random { scale: f64 },
}

impl Default for ConvexInit {
    fn default() -> Self {
        ConvexInit::Zeros
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexRunConfig {
    pub data: DataSpec,
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
    pub lambda: [f64; 3],
    /// Relative gradient tolerance; [`rgm_core::convex::DEFAULT_TOLERANCE`] when omitted.
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub init: ConvexInit,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsRunConfig {
    pub data: DataSpec,
    pub cost_x: KernelSpec,
    pub cost_y: KernelSpec,
    #[serde(default)]
    pub entropic: EntropicGwConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRunConfig {
    pub data: DataSpec,
    pub objective: ObjectiveSpec,
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

fn default_pushed_file() -> String {
    "pushed.csv".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushRunConfig {
    pub checkpoint: PathBuf,
    pub input: PointSource,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default = "default_pushed_file")]
    pub output: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_plot_file() -> String {
    "plot.svg".into()
}

fn default_pairs() -> usize {
    40
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlotKind {
    /// Loss curves from a trace CSV.
    Trace {
        input: PathBuf,
        #[serde(default)]
        log_scale: bool,
    },
    /// First two coordinates of each cloud.
    Scatter { clouds: Vec<PointSource> },
    /// `(c_X(x_i, x_i'), c_Y(F(x_i), F(x_i')))` for the first `count` points,
    /// against the line `y = x`.
    CostAlignment {
        checkpoint: PathBuf,
        points: PointSource,
        cost_x: KernelSpec,
        cost_y: KernelSpec,
        #[serde(default = "default_pairs")]
        count: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotRunConfig {
    pub plot: PlotKind,
    #[serde(default = "default_plot_file")]
    pub output: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nested_and_typed() {
        let mut v = serde_json::json!({"a": {"b": 1}});
        apply_override(&mut v, "a.b=2.5").unwrap();
        apply_override(&mut v, "a.c=hello").unwrap();
        apply_override(&mut v, "d.e=[1,2]").unwrap();
        assert_eq!(v, serde_json::json!({"a": {"b": 2.5, "c": "hello"}, "d": {"e": [1, 2]}}));
        assert!(apply_override(&mut v, "a.b.c=1").is_err());
        assert!(apply_override(&mut v, "novalue").is_err());
        assert!(apply_override(&mut v, "a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let v = serde_json::json!({"points": {"type": "circle", "n": 4}, "bogus": 1});
        assert!(parse::<GenConfig>(&v).is_err());
        let v = serde_json::json!({"points": {"type": "circle", "n": 4, "radius": 2}});
        assert!(parse::<GenConfig>(&v).is_err());
    }
}
