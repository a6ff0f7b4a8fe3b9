//! Adam training of the forward and backward maps on the empirical Lagrangian.
//!
//! Each iteration evaluates the Lagrangian and its gradient with respect to the
//! mapped points, backpropagates through both maps and takes one Adam step on the
//! concatenated parameters `[θ_F, θ_B]`. With `batch_size = 0` every step uses all
//! points. Otherwise each side is visited in shuffled order without replacement,
//! reshuffled at the start of every epoch.
//!
//! The trace records the breakdown every `log_every` iterations (evaluated at the
//! parameters before that iteration's step) plus one final full-data evaluation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::maps::{MapModel, MapSpec};
use crate::measure::{DatasetPair, EmpiricalMeasure};
use crate::objective::{LossBreakdown, Objective, ObjectiveSpec};
use crate::rng::Rng;

fn default_log_every() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    /// 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub objective: ObjectiveSpec,
    pub forward_map: MapSpec,
    pub backward_map: MapSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.objective.validate()?;
        self.forward_map.validate()?;
        self.backward_map.validate()?;
        if self.log_every == 0 {
            return Err(Error::InvalidParameter("log_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// False when the values were computed on a minibatch.
    pub full_batch: bool,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub entries: Vec<TraceEntry>,
}

const TRACE_HEADER: &str = "iteration,C0,l1,l2,l3,L";

impl LossTrace {
    pub fn last(&self) -> Option<&TraceEntry> {
        self.entries.last()
    }

    /// CSV with header `iteration,C0,l1,l2,l3,L`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRACE_HEADER);
        s.push('\n');
        for e in &self.entries {
            let l = &e.loss;
            let _ = writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                e.iteration, l.c0, l.l1, l.l2, l.l3, l.total
            );
        }
        s
    }

    /// Parses the format written by [`LossTrace::to_csv`]. Entries are marked as full batch.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    column: 0,
                    message: format!("expected header {TRACE_HEADER:?}"),
                })
            }
        }
        let mut entries = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: line_no,
                    column: 0,
                    message: format!("expected 6 fields, found {}", fields.len()),
                });
            }
            let iteration: usize = fields[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                column: 1,
                message: format!("bad iteration {:?}", fields[0]),
            })?;
            let mut v = [0.0; 5];
            for (k, f) in fields[1..].iter().enumerate() {
                v[k] = f.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| Error::Parse {
                    line: line_no,
                    column: k + 2,
                    message: format!("bad value {f:?}"),
                })?;
            }
            entries.push(TraceEntry {
                iteration,
                full_batch: true,
                loss: LossBreakdown {
                    c0: v[0],
                    l1: v[1],
                    l2: v[2],
                    l3: v[3],
                    total: v[4],
                },
            });
        }
        Ok(LossTrace { entries })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub forward: MapModel,
    pub backward: MapModel,
    pub trace: LossTrace,
}

/// The pair of trained maps as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub forward: MapModel,
    pub backward: MapModel,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates both maps; the forward map's output dimension must be
    /// the backward map's input dimension and vice versa.
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        c.forward.validate()?;
        c.backward.validate()?;
        if c.forward.output_dim() != c.backward.input_dim() || c.backward.output_dim() != c.forward.input_dim() {
            return Err(Error::dim(format!(
                "forward map is {} -> {}, backward map is {} -> {}",
                c.forward.input_dim(),
                c.forward.output_dim(),
                c.backward.input_dim(),
                c.backward.output_dim()
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Trains freshly initialized maps. Deterministic given `cfg.seed`.
pub fn train(data: &DatasetPair, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let forward = MapModel::init(&cfg.forward_map, &mut rng)?;
    let backward = MapModel::init(&cfg.backward_map, &mut rng)?;
    train_from(data, cfg, forward, backward, &mut rng)
}

/// Cursor over one side of the data for minibatching.
struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
}

impl EpochSampler {
    fn new(n: usize, batch: usize, rng: &mut Rng) -> Self {
        EpochSampler {
            order: rng.permutation(n),
            pos: 0,
            batch: batch.min(n),
        }
    }

    fn next(&mut self, rng: &mut Rng) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        b
    }
}

fn rows(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.cols(), |r, c| m[(idx[r], c)])
}

/// Trains from given initial maps; `rng` drives minibatch sampling only.
pub fn train_from(
    data: &DatasetPair,
    cfg: &TrainConfig,
    mut forward: MapModel,
    mut backward: MapModel,
    rng: &mut Rng,
) -> Result<TrainOutput> {
    cfg.validate()?;
    forward.validate()?;
    backward.validate()?;
    check_maps(&forward, &backward, data)?;
    let objective = Objective::new(cfg.objective.clone(), data)?;
    let x = data.source.points();
    let y = data.target.points();
    let nf = forward.num_params();
    let mut state = AdamState::new(cfg.optimizer, nf + backward.num_params());
    let mut params = forward.params();
    params.extend(backward.params());
    let mut grads = vec![0.0; params.len()];

    let full = cfg.batch_size == 0;
    let mut samplers = (!full).then(|| {
        (
            EpochSampler::new(x.rows(), cfg.batch_size, rng),
            EpochSampler::new(y.rows(), cfg.batch_size, rng),
        )
    });
    let mut trace = LossTrace::default();

    for t in 0..cfg.iterations {
        let (loss, fx_trace, by_trace, grad) = match samplers.as_mut() {
            None => {
                let ft = forward.forward_trace(x)?;
                let bt = backward.forward_trace(y)?;
                let (loss, g) = objective.evaluate_with_grad(ft.output(), bt.output())?;
                (loss, ft, bt, g)
            }
            Some((sx, sy)) => {
                let xi = sx.next(rng);
                let yj = sy.next(rng);
                let ft = forward.forward_trace(&rows(x, &xi))?;
                let bt = backward.forward_trace(&rows(y, &yj))?;
                let (loss, g) = objective.evaluate_batch(&xi, &yj, ft.output(), bt.output(), true)?;
                (loss, ft, bt, g.expect("gradient requested"))
            }
        };
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: t });
        }
        if t % cfg.log_every == 0 {
            trace.entries.push(TraceEntry {
                iteration: t,
                full_batch: full,
                loss,
            });
        }
        let gf = forward.backward(&fx_trace, &grad.d_fx)?;
        let gb = backward.backward(&by_trace, &grad.d_by)?;
        grads[..nf].copy_from_slice(&gf.params);
        grads[nf..].copy_from_slice(&gb.params);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: t });
        }
        state.step(&mut params, &grads)?;
        forward.set_params(&params[..nf])?;
        backward.set_params(&params[nf..])?;
    }

    let final_loss = evaluate_with(&objective, &forward, &backward, data)
        .map_err(|e| match e {
            Error::NonFinite(_) => Error::Divergence {
                iteration: cfg.iterations,
            },
            other => other,
        })?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            iteration: cfg.iterations,
        });
    }
    trace.entries.push(TraceEntry {
        iteration: cfg.iterations,
        full_batch: true,
        loss: final_loss,
    });
    Ok(TrainOutput {
        forward,
        backward,
        trace,
    })
}

fn check_maps(forward: &MapModel, backward: &MapModel, data: &DatasetPair) -> Result<()> {
    let (dx, dy) = (data.source.dim(), data.target.dim());
    if forward.input_dim() != dx || forward.output_dim() != dy {
        return Err(Error::dim(format!(
            "forward map is {}→{}, data needs {dx}→{dy}",
            forward.input_dim(),
            forward.output_dim()
        )));
    }
    if backward.input_dim() != dy || backward.output_dim() != dx {
        return Err(Error::dim(format!(
            "backward map is {}→{}, data needs {dy}→{dx}",
            backward.input_dim(),
            backward.output_dim()
        )));
    }
    Ok(())
}

fn evaluate_with(
    objective: &Objective,
    forward: &MapModel,
    backward: &MapModel,
    data: &DatasetPair,
) -> Result<LossBreakdown> {
    let fx = forward.forward(data.source.points())?;
    let by = backward.forward(data.target.points())?;
    objective.evaluate(&fx, &by)
}

/// Full-data breakdown of the Lagrangian for the given maps.
pub fn evaluate(
    forward: &MapModel,
    backward: &MapModel,
    data: &DatasetPair,
    spec: &ObjectiveSpec,
) -> Result<LossBreakdown> {
    check_maps(forward, backward, data)?;
    let objective = Objective::new(spec.clone(), data)?;
    evaluate_with(&objective, forward, backward, data)
}

/// Applies `map` to every point of `samples`.
pub fn pushforward(map: &MapModel, samples: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
    pushforward_points(map, samples.points())
}

/// [`pushforward`] on a raw point matrix; zero rows is a size error.
pub fn pushforward_points(map: &MapModel, points: &Matrix) -> Result<EmpiricalMeasure> {
    if points.rows() == 0 {
        return Err(Error::Size("cannot push forward an empty cloud".into()));
    }
    EmpiricalMeasure::new(map.forward(points)?)
}
