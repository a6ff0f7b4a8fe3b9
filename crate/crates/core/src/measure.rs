//! Uniform empirical measures (point clouds), the synthetic clouds used in the
//! experiments, and the CSV point-cloud format.
//!
//! CSV format: one point per line, coordinates separated by commas, no quoting.
//! An optional single header line can be skipped. Blank lines are ignored. Values
//! are written in scientific notation with 17 significant digits, which is enough
//! for every finite `f64` to survive a write/read cycle unchanged.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{psd_power, Matrix};
use crate::rng::Rng;

/// Uniform discrete measure on `n >= 1` points of `R^dim`; each point has mass `1/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Matrix,
}

impl EmpiricalMeasure {
    /// Wraps an `n x dim` matrix whose rows are the support points.
    pub fn new(points: Matrix) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::Size("empirical measure needs at least one point".into()));
        }
        if points.cols() == 0 {
            return Err(Error::Size("points must have at least one coordinate".into()));
        }
        points.ensure_finite("point cloud")?;
        Ok(EmpiricalMeasure { points })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.rows()
    }

    /// Always false; present for API symmetry with collections.
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    #[inline]
    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn into_points(self) -> Matrix {
        self.points
    }

    /// Measure supported on the selected points (with repetition allowed).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Size(format!("index {i} out of range for {} points", self.len())));
            }
            data.extend_from_slice(self.point(i));
        }
        Self::new(Matrix::from_vec(indices.len(), d, data)?)
    }

    /// Sample mean of the points.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for p in self.points.row_iter() {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += pi;
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Population covariance `(1/n) Σ (p - mean)(p - mean)ᵀ`.
    pub fn covariance(&self) -> Matrix {
        let d = self.dim();
        let mean = self.mean();
        let mut c = Matrix::zeros(d, d);
        for p in self.points.row_iter() {
            for a in 0..d {
                for b in 0..d {
                    c[(a, b)] += (p[a] - mean[a]) * (p[b] - mean[b]);
                }
            }
        }
        c.scale(1.0 / self.len() as f64)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * self.dim() * 25);
        for p in self.points.row_iter() {
            for (k, v) in p.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Source and target samples; the two clouds may live in different dimensions.
#[derive(Clone, Debug)]
pub struct DatasetPair {
    pub source: EmpiricalMeasure,
    pub target: EmpiricalMeasure,
}

impl DatasetPair {
    pub fn new(source: EmpiricalMeasure, target: EmpiricalMeasure) -> Self {
        DatasetPair { source, target }
    }
}

/// `n` draws of `Σ^{1/2} z`, `z ~ N(0, I)`, with `Σ^{1/2}` the symmetric square root.
pub fn gen_gaussian(n: usize, covariance: &Matrix, rng: &mut Rng) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::Size("gaussian sample size must be positive".into()));
    }
    let d = covariance.rows();
    if !covariance.is_square() || d == 0 {
        return Err(Error::dim(format!(
            "covariance must be a non-empty square matrix, got {}x{}",
            covariance.rows(),
            covariance.cols()
        )));
    }
    let root = psd_power(covariance, 0.5)?;
    let mut points = Matrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = rng.standard_normal());
        let row = points.row_mut(i);
        for (a, out) in row.iter_mut().enumerate() {
            *out = root.row(a).iter().zip(&z).map(|(r, zi)| r * zi).sum();
        }
    }
    EmpiricalMeasure::new(points)
}

/// `n >= 2` equally spaced points from `start` to `end`, both endpoints included.
pub fn gen_segment_between(n: usize, start: &[f64], end: &[f64]) -> Result<EmpiricalMeasure> {
    if n < 2 {
        return Err(Error::Size(format!("segment needs at least 2 points, got {n}")));
    }
    if start.len() != end.len() || start.is_empty() {
        return Err(Error::dim("segment endpoints must share a positive dimension"));
    }
    let last = (n - 1) as f64;
    let points = Matrix::from_fn(n, start.len(), |k, a| {
        let t = k as f64 / last;
        // Blend form keeps both endpoints exact.
        (1.0 - t) * start[a] + t * end[a]
    });
    EmpiricalMeasure::new(points)
}

/// `n >= 2` equally spaced points on the segment from `(-1, -1)` to `(1, 1)`.
pub fn gen_segment(n: usize) -> Result<EmpiricalMeasure> {
    gen_segment_between(n, &[-1.0, -1.0], &[1.0, 1.0])
}

/// Points `(cos θ_k, sin θ_k)` with `θ_k = 2πk/n`, `k = 0..n`.
pub fn gen_circle(n: usize) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(Error::Size("circle needs at least one point".into()));
    }
    let points = Matrix::from_fn(n, 2, |k, a| {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        if a == 0 {
            theta.cos()
        } else {
            theta.sin()
        }
    });
    EmpiricalMeasure::new(points)
}

/// Parses the CSV point-cloud format. With `header`, the first line is skipped.
pub fn parse_csv(text: &str, header: bool) -> Result<EmpiricalMeasure> {
    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if header && idx == 0 {
            continue;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for (col, field) in line.split(',').enumerate() {
            let field = field.trim();
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                column: col + 1,
                message: format!("not a number: {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    column: col + 1,
                    message: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
            count += 1;
        }
        match dim {
            None => dim = Some(count),
            Some(d) if d != count => {
                return Err(Error::Parse {
                    line: line_no,
                    column: 0,
                    message: format!("row has {count} fields, expected {d}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let Some(d) = dim else {
        return Err(Error::Parse {
            line: 1,
            column: 0,
            message: "no data rows".into(),
        });
    };
    EmpiricalMeasure::new(Matrix::from_vec(rows, d, data)?)
}

pub fn read_csv(path: impl AsRef<Path>, header: bool) -> Result<EmpiricalMeasure> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, header)
}

pub fn write_csv(measure: &EmpiricalMeasure, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, measure.to_csv_string()).map_err(|e| Error::io(path, e))
}
