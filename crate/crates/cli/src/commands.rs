//! One function per subcommand. Each returns the `results` section of the report.

use std::path::Path;

use rgm_core::convex::{ConvexProblem, ConvexVars, DEFAULT_TOLERANCE};
use rgm_core::experiments::gaussian_diagnostics;
use rgm_core::gw::{bounds, NetworkSpace};
use rgm_core::kernel::gram_self;
use rgm_core::measure::write_csv;
use rgm_core::trainer::{evaluate, pushforward, train, Checkpoint, LossTrace};
use rgm_core::{EmpiricalMeasure, Rng};
use serde_json::{json, Value};

use crate::config::{
    BoundsRunConfig, ConvexInit, ConvexRunConfig, DataSpec, Direction, EvalRunConfig, GenConfig, PlotKind,
    PlotRunConfig, PointSource, PushRunConfig, TrainRunConfig,
};
use crate::svg::{Chart, Series, Style};
use crate::CliError;

/// Seed recorded in the report and the results section.
pub struct Outcome {
    pub seed: u64,
    pub results: Value,
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Core(e.into()))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn gen(cfg: &GenConfig, out: &Path) -> Result<Outcome, CliError> {
    let mut points = cfg.points.clone();
    let mut seed = 0;
    if let PointSource::Gaussian { seed: s, .. } = &mut points {
        if let Some(over) = cfg.seed {
            *s = over;
        }
        seed = *s;
    }
    let cloud = points.load()?;
    let path = out.join(&cfg.output);
    write_csv(&cloud, &path)?;
    Ok(Outcome {
        seed,
        results: json!({ "rows": cloud.len(), "cols": cloud.dim(), "output": cfg.output }),
    })
}

pub fn train_cmd(cfg: &TrainRunConfig, out: &Path) -> Result<Outcome, CliError> {
    let data = cfg.data.load()?;
    let mut tc = cfg.train.clone();
    if let Some(s) = cfg.seed {
        tc.seed = s;
    }
    let result = train(&data, &tc)?;
    let final_loss = *result.trace.last().expect("trace ends with a final evaluation");
    let checkpoint = Checkpoint {
        forward: result.forward,
        backward: result.backward,
    };
    checkpoint.save(out.join("checkpoint.json"))?;
    write_text(&out.join("trace.csv"), &result.trace.to_csv())?;
    let mut results = json!({
        "final": final_loss.loss,
        "iterations": tc.iterations,
        "checkpoint": "checkpoint.json",
        "trace": "trace.csv",
    });
    if matches!(cfg.data, DataSpec::Gaussian { .. }) {
        if let Some(d) = gaussian_diagnostics(&checkpoint.forward, &checkpoint.backward) {
            results["gaussian_diagnostics"] = to_value(&d)?;
        }
    }
    Ok(Outcome { seed: tc.seed, results })
}

pub fn convex(cfg: &ConvexRunConfig, out: &Path) -> Result<Outcome, CliError> {
    let data = cfg.data.load()?;
    let problem = ConvexProblem::from_data(&cfg.kernel_x, &cfg.kernel_y, &data, cfg.lambda)?;
    let seed = cfg.seed.unwrap_or(0);
    let (m, n) = (problem.m(), problem.n());
    let init = match cfg.init {
        ConvexInit::Zeros => ConvexVars::zeros(m, n),
        ConvexInit::Random { scale } => ConvexVars::random(m, n, scale, &mut Rng::new(seed)),
    };
    let tol = cfg.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let sol = problem.solve(init, tol, cfg.max_iterations)?;
    write_text(
        &out.join("convex_solution.json"),
        &serde_json::to_string(&sol.vars).map_err(|e| CliError::Core(e.into()))?,
    )?;
    Ok(Outcome {
        seed,
        results: json!({
            "breakdown": sol.breakdown,
            "iterations": sol.iterations,
            "grad_norm": sol.grad_norm,
            "tolerance": tol,
            "solution": "convex_solution.json",
        }),
    })
}

pub fn bounds_cmd(cfg: &BoundsRunConfig) -> Result<Outcome, CliError> {
    let data = cfg.data.load()?;
    let a = NetworkSpace::new(data.source, cfg.cost_x.clone())?;
    let b = NetworkSpace::new(data.target, cfg.cost_y.clone())?;
    let report = bounds(&a, &b, &cfg.entropic)?;
    Ok(Outcome {
        seed: cfg.seed.unwrap_or(0),
        results: to_value(&report)?,
    })
}

pub fn eval(cfg: &EvalRunConfig) -> Result<Outcome, CliError> {
    let data = cfg.data.load()?;
    let c = Checkpoint::load(&cfg.checkpoint)?;
    let loss = evaluate(&c.forward, &c.backward, &data, &cfg.objective)?;
    Ok(Outcome {
        seed: cfg.seed.unwrap_or(0),
        results: json!({ "loss": loss }),
    })
}

pub fn push(cfg: &PushRunConfig, out: &Path) -> Result<Outcome, CliError> {
    let c = Checkpoint::load(&cfg.checkpoint)?;
    let mut input = cfg.input.clone();
    let mut seed = cfg.seed.unwrap_or(0);
    if let PointSource::Gaussian { seed: s, .. } = &mut input {
        if let Some(over) = cfg.seed {
            *s = over;
        }
        seed = *s;
    }
    let cloud = input.load()?;
    let map = match cfg.direction {
        Direction::Forward => &c.forward,
        Direction::Backward => &c.backward,
    };
    let pushed = pushforward(map, &cloud)?;
    write_csv(&pushed, out.join(&cfg.output))?;
    Ok(Outcome {
        seed,
        results: json!({ "rows": pushed.len(), "cols": pushed.dim(), "output": cfg.output }),
    })
}

fn first_two(cloud: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    (0..cloud.len())
        .map(|i| {
            let p = cloud.point(i);
            (p[0], p.get(1).copied().unwrap_or(0.0))
        })
        .collect()
}

pub fn plot(cfg: &PlotRunConfig, out: &Path) -> Result<Outcome, CliError> {
    let (chart, count) = match &cfg.plot {
        PlotKind::Trace { input, log_scale } => {
            let text = std::fs::read_to_string(input).map_err(|source| CliError::Io {
                path: input.clone(),
                source,
            })?;
            let trace = LossTrace::parse_csv(&text)?;
            if trace.entries.is_empty() {
                return Err(CliError::Config(format!("trace {} has no entries", input.display())));
            }
            let pick: [(&str, fn(&rgm_core::objective::LossBreakdown) -> f64); 5] = [
                ("C0", |l| l.c0),
                ("l1", |l| l.l1),
                ("l2", |l| l.l2),
                ("l3", |l| l.l3),
                ("L", |l| l.total),
            ];
            let series = pick
                .iter()
                .map(|(name, get)| Series {
                    label: name.to_string(),
                    points: trace
                        .entries
                        .iter()
                        .map(|e| {
                            let v = get(&e.loss);
                            (e.iteration as f64, if *log_scale { v.log10() } else { v })
                        })
                        .collect(),
                })
                .collect();
            let chart = Chart {
                title: "Training curves".into(),
                x_label: "iteration".into(),
                y_label: if *log_scale { "log10 value".into() } else { "value".into() },
                series,
                style: Style::Lines,
                diagonal: false,
            };
            (chart, trace.entries.len())
        }
        PlotKind::Scatter { clouds } => {
            if clouds.is_empty() {
                return Err(CliError::Config("scatter needs at least one cloud".into()));
            }
            let mut series = Vec::new();
            let mut total = 0;
            for (k, src) in clouds.iter().enumerate() {
                let c = src.load()?;
                total += c.len();
                series.push(Series {
                    label: format!("cloud {k}"),
                    points: first_two(&c),
                });
            }
            let chart = Chart {
                title: "Point clouds".into(),
                x_label: "coordinate 1".into(),
                y_label: "coordinate 2".into(),
                series,
                style: Style::Markers,
                diagonal: false,
            };
            (chart, total)
        }
        PlotKind::CostAlignment {
            checkpoint,
            points,
            cost_x,
            cost_y,
            count,
        } => {
            let c = Checkpoint::load(checkpoint)?;
            let cloud = points.load()?;
            let k = (*count).min(cloud.len());
            if k == 0 {
                return Err(CliError::Config("cost alignment needs at least one point".into()));
            }
            let idx: Vec<usize> = (0..k).collect();
            let sub = cloud.subset(&idx)?;
            let mapped = pushforward(&c.forward, &sub)?;
            let cx = gram_self(cost_x, sub.points())?;
            let cy = gram_self(cost_y, mapped.points())?;
            let pts: Vec<(f64, f64)> = cx.as_slice().iter().copied().zip(cy.as_slice().iter().copied()).collect();
            let chart = Chart {
                title: "Cost alignment".into(),
                x_label: "c_X(x, x')".into(),
                y_label: "c_Y(F(x), F(x'))".into(),
                series: vec![Series {
                    label: "pairs".into(),
                    points: pts,
                }],
                style: Style::Markers,
                diagonal: true,
            };
            (chart, k * k)
        }
    };
    let svg = chart
        .render()
        .ok_or_else(|| CliError::Config("nothing finite to plot".into()))?;
    write_text(&out.join(&cfg.output), &svg)?;
    Ok(Outcome {
        seed: cfg.seed.unwrap_or(0),
        results: json!({ "points": count, "output": cfg.output }),
    })
}
