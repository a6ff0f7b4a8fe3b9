//! Squared maximum mean discrepancy between uniform empirical measures, on a
//! single space and on a product space with the tensor-product kernel.

use crate::error::{Error, Result};
use crate::kernel::{gram_points, KernelSpec};
use crate::linalg::{pairwise_sum, Matrix};
use crate::measure::EmpiricalMeasure;

/// Values in `[-MMD_FLOOR, 0)` are rounding noise and are reported as 0.
/// Anything more negative is returned unchanged so that logic errors (or a
/// non-PSD kernel) stay visible.
pub const MMD_FLOOR: f64 = 1e-12;

pub(crate) fn floor_rounding(v: f64) -> f64 {
    if (-MMD_FLOOR..0.0).contains(&v) {
        0.0
    } else {
        v
    }
}

/// A point of the product space `X × Y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ProductPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        ProductPoint { x, y }
    }
}

fn mean_of(m: &Matrix) -> f64 {
    pairwise_sum(m.as_slice()) / (m.rows() * m.cols()) as f64
}

/// `(1/m²)ΣK(p,p') + (1/n²)ΣK(q,q') − (2/mn)ΣK(p,q)` without the reporting floor.
pub fn mmd2_raw(spec: &KernelSpec, p: &Matrix, q: &Matrix) -> Result<f64> {
    let kpp = gram_points(spec, p, p)?;
    let kqq = gram_points(spec, q, q)?;
    let kpq = gram_points(spec, p, q)?;
    Ok(mean_of(&kpp) + mean_of(&kqq) - 2.0 * mean_of(&kpq))
}

/// Squared MMD between two uniform empirical measures.
pub fn mmd2(spec: &KernelSpec, p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<f64> {
    mmd2_raw(spec, p.points(), q.points()).map(floor_rounding)
}

fn split_product(points: &[ProductPoint]) -> Result<(Matrix, Matrix)> {
    let first = points
        .first()
        .ok_or_else(|| Error::Size("product measure needs at least one point".into()))?;
    let (dx, dy) = (first.x.len(), first.y.len());
    let mut xs = Vec::with_capacity(points.len() * dx);
    let mut ys = Vec::with_capacity(points.len() * dy);
    for (k, pt) in points.iter().enumerate() {
        if pt.x.len() != dx || pt.y.len() != dy {
            return Err(Error::dim(format!(
                "product point {k} has dims ({}, {}), expected ({dx}, {dy})",
                pt.x.len(),
                pt.y.len()
            )));
        }
        xs.extend_from_slice(&pt.x);
        ys.extend_from_slice(&pt.y);
    }
    Ok((
        Matrix::from_vec(points.len(), dx, xs)?,
        Matrix::from_vec(points.len(), dy, ys)?,
    ))
}

fn hadamard_mean(a: &Matrix, b: &Matrix) -> f64 {
    let prod: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| u * v).collect();
    pairwise_sum(&prod) / prod.len() as f64
}

/// Squared MMD on `X × Y` with kernel `K_X(x, x')·K_Y(y, y')`, unfloored.
/// Rows of `px`/`py` pair up into points of the first measure, likewise `qx`/`qy`.
pub fn mmd2_product_raw(
    kx: &KernelSpec,
    ky: &KernelSpec,
    px: &Matrix,
    py: &Matrix,
    qx: &Matrix,
    qy: &Matrix,
) -> Result<f64> {
    if px.rows() != py.rows() || qx.rows() != qy.rows() {
        return Err(Error::dim("product coordinates have different point counts"));
    }
    let pp = hadamard_mean(&gram_points(kx, px, px)?, &gram_points(ky, py, py)?);
    let qq = hadamard_mean(&gram_points(kx, qx, qx)?, &gram_points(ky, qy, qy)?);
    let pq = hadamard_mean(&gram_points(kx, px, qx)?, &gram_points(ky, py, qy)?);
    Ok(pp + qq - 2.0 * pq)
}

/// Squared MMD between two uniform measures on the product space.
pub fn mmd2_product(
    kx: &KernelSpec,
    ky: &KernelSpec,
    p: &[ProductPoint],
    q: &[ProductPoint],
) -> Result<f64> {
    let (px, py) = split_product(p)?;
    let (qx, qy) = split_product(q)?;
    mmd2_product_raw(kx, ky, &px, &py, &qx, &qy).map(floor_rounding)
}
