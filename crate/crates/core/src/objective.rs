//! The empirical RGM Lagrangian and its gradients with respect to the mapped points.
//!
//! With `f_i = F(x_i)` and `b_j = B(y_j)` the components are
//!
//! * `C0 = (1/mn) Σ_ij (c_X(x_i, b_j) − c_Y(f_i, y_j))²`
//! * `ℓ1` = penalty between `{(x_i, f_i)}` and `{(b_j, y_j)}` on `X × Y`
//! * `ℓ2` = penalty between `{x_i}` and `{b_j}` on `X`
//! * `ℓ3` = penalty between `{f_i}` and `{y_j}` on `Y`
//!
//! where the penalty is the squared MMD (with `K_X ⊗ K_Y` for `ℓ1`) or the Sinkhorn
//! divergence with squared Euclidean cost. Gram matrices `K_X(x_i, x_i')` and
//! `K_Y(y_j, y_j')` do not depend on the maps and are cached.

use serde::{Deserialize, Serialize};

use crate::discrepancy::floor_rounding;
use crate::error::{Error, Result};
use crate::kernel::{gram_self, KernelSpec};
use crate::linalg::Matrix;
use crate::measure::DatasetPair;
use crate::sinkhorn::{sinkhorn_divergence_points, SinkhornConfig};

/// Clouds larger than this are not given a cached full Gram matrix; batches then
/// compute their Gram blocks on the fly.
const GRAM_CACHE_LIMIT: usize = 4096;

/// Where `λ1` sits in the total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingConvention {
    /// `C0 + λ1 ℓ1 + λ2 ℓ2 + λ3 ℓ3`.
    #[default]
    Eq1,
    /// `λ1 C0 + ℓ1 + λ2 ℓ2 + λ3 ℓ3`.
    AppendixF,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangeWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    #[serde(default)]
    pub convention: WeightingConvention,
}

impl LagrangeWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        LagrangeWeights {
            lambda1,
            lambda2,
            lambda3,
            convention: WeightingConvention::Eq1,
        }
    }

    /// All three multipliers equal to `lambda`.
    pub fn uniform(lambda: f64) -> Self {
        Self::new(lambda, lambda, lambda)
    }

    pub fn with_convention(mut self, convention: WeightingConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be nonnegative, got {v}")));
            }
        }
        Ok(())
    }

    /// Coefficients of `(C0, ℓ1, ℓ2, ℓ3)` in the total.
    pub fn coefficients(&self) -> [f64; 4] {
        match self.convention {
            WeightingConvention::Eq1 => [1.0, self.lambda1, self.lambda2, self.lambda3],
            WeightingConvention::AppendixF => [self.lambda1, 1.0, self.lambda2, self.lambda3],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Penalty {
    #[default]
    Mmd,
    Sinkhorn(SinkhornConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "C0")]
    pub c0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    #[serde(rename = "L")]
    pub total: f64,
}

impl LossBreakdown {
    fn combine(c0: f64, l1: f64, l2: f64, l3: f64, weights: &LagrangeWeights) -> Self {
        let [w0, w1, w2, w3] = weights.coefficients();
        LossBreakdown {
            c0,
            l1,
            l2,
            l3,
            total: w0 * c0 + w1 * l1 + w2 * l2 + w3 * l3,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.c0, self.l1, self.l2, self.l3, self.total].iter().all(|v| v.is_finite())
    }
}

/// Costs, kernels, weights and penalty of the Lagrangian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub cost_x: KernelSpec,
    pub cost_y: KernelSpec,
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
    pub weights: LagrangeWeights,
    #[serde(default)]
    pub penalty: Penalty,
}

impl ObjectiveSpec {
    pub fn validate(&self) -> Result<()> {
        self.cost_x.validate()?;
        self.cost_y.validate()?;
        self.kernel_x.validate()?;
        self.kernel_y.validate()?;
        self.weights.validate()?;
        if let Penalty::Sinkhorn(cfg) = &self.penalty {
            cfg.validate()?;
        }
        Ok(())
    }

    fn check_dims(&self, dx: usize, dy: usize) -> Result<()> {
        self.cost_x.check_dim(dx)?;
        self.kernel_x.check_dim(dx)?;
        self.cost_y.check_dim(dy)?;
        self.kernel_y.check_dim(dy)
    }
}

/// Gradients of the total with respect to `F(x_i)` (rows of `d_fx`) and `B(y_j)`.
#[derive(Clone, Debug)]
pub struct MappedGradient {
    pub d_fx: Matrix,
    pub d_by: Matrix,
}

/// The Lagrangian bound to a dataset, with cached Gram matrices.
#[derive(Clone, Debug)]
pub struct Objective {
    spec: ObjectiveSpec,
    x: Matrix,
    y: Matrix,
    gram_x: Option<Matrix>,
    gram_y: Option<Matrix>,
}

impl Objective {
    pub fn new(spec: ObjectiveSpec, data: &DatasetPair) -> Result<Self> {
        spec.validate()?;
        let x = data.source.points().clone();
        let y = data.target.points().clone();
        spec.check_dims(x.cols(), y.cols())?;
        let gram_x = if x.rows() <= GRAM_CACHE_LIMIT {
            Some(gram_self(&spec.kernel_x, &x)?)
        } else {
            None
        };
        let gram_y = if y.rows() <= GRAM_CACHE_LIMIT {
            Some(gram_self(&spec.kernel_y, &y)?)
        } else {
            None
        };
        Ok(Objective {
            spec,
            x,
            y,
            gram_x,
            gram_y,
        })
    }

    pub fn spec(&self) -> &ObjectiveSpec {
        &self.spec
    }

    pub fn source_len(&self) -> usize {
        self.x.rows()
    }

    pub fn target_len(&self) -> usize {
        self.y.rows()
    }

    /// Full-data breakdown for mapped points `fx = F(X)` and `by = B(Y)`.
    pub fn evaluate(&self, fx: &Matrix, by: &Matrix) -> Result<LossBreakdown> {
        self.eval_full(fx, by, false).map(|(l, _)| l)
    }

    /// Full-data breakdown and gradient.
    pub fn evaluate_with_grad(&self, fx: &Matrix, by: &Matrix) -> Result<(LossBreakdown, MappedGradient)> {
        let (l, g) = self.eval_full(fx, by, true)?;
        Ok((l, g.expect("gradient requested")))
    }

    fn eval_full(&self, fx: &Matrix, by: &Matrix, grad: bool) -> Result<(LossBreakdown, Option<MappedGradient>)> {
        match (&self.gram_x, &self.gram_y) {
            (Some(gx), Some(gy)) => {
                let parts = Parts {
                    x: &self.x,
                    y: &self.y,
                    gram_x: gx,
                    gram_y: gy,
                };
                evaluate_parts(&self.spec, &parts, fx, by, grad)
            }
            _ => {
                let xi: Vec<usize> = (0..self.x.rows()).collect();
                let yj: Vec<usize> = (0..self.y.rows()).collect();
                self.evaluate_batch(&xi, &yj, fx, by, grad)
            }
        }
    }

    /// Breakdown on the sub-sample `X[xi]`, `Y[yj]`; row `k` of `fx` is `F(x_{xi[k]})`
    /// and row `k` of `by` is `B(y_{yj[k]})`. Penalties use only the batch.
    pub fn evaluate_batch(
        &self,
        xi: &[usize],
        yj: &[usize],
        fx: &Matrix,
        by: &Matrix,
        grad: bool,
    ) -> Result<(LossBreakdown, Option<MappedGradient>)> {
        let x = select_rows(&self.x, xi)?;
        let y = select_rows(&self.y, yj)?;
        let gx = match &self.gram_x {
            Some(g) => select_block(g, xi),
            None => gram_self(&self.spec.kernel_x, &x)?,
        };
        let gy = match &self.gram_y {
            Some(g) => select_block(g, yj),
            None => gram_self(&self.spec.kernel_y, &y)?,
        };
        let parts = Parts {
            x: &x,
            y: &y,
            gram_x: &gx,
            gram_y: &gy,
        };
        evaluate_parts(&self.spec, &parts, fx, by, grad)
    }
}

fn select_rows(m: &Matrix, idx: &[usize]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(idx.len() * m.cols());
    for &i in idx {
        if i >= m.rows() {
            return Err(Error::Size(format!("batch index {i} out of range for {} points", m.rows())));
        }
        data.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(idx.len(), m.cols(), data)
}

fn select_block(g: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), idx.len(), |a, b| g[(idx[a], idx[b])])
}

struct Parts<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    gram_x: &'a Matrix,
    gram_y: &'a Matrix,
}

#[inline]
fn kernel_term(spec: &KernelSpec, a: &[f64], b: &[f64], coef: f64, out: &mut [f64], grad: bool) -> f64 {
    if grad {
        spec.value_and_grad_y(a, b, coef, out)
    } else {
        spec.eval_unchecked(a, b)
    }
}

fn evaluate_parts(
    spec: &ObjectiveSpec,
    p: &Parts<'_>,
    fx: &Matrix,
    by: &Matrix,
    grad: bool,
) -> Result<(LossBreakdown, Option<MappedGradient>)> {
    let (m, n) = (p.x.rows(), p.y.rows());
    let (dx, dy) = (p.x.cols(), p.y.cols());
    if m == 0 || n == 0 {
        return Err(Error::Size("objective needs at least one point on each side".into()));
    }
    if fx.shape() != (m, dy) {
        return Err(Error::dim(format!("F(X) has shape {:?}, expected ({m}, {dy})", fx.shape())));
    }
    if by.shape() != (n, dx) {
        return Err(Error::dim(format!("B(Y) has shape {:?}, expected ({n}, {dx})", by.shape())));
    }
    fx.ensure_finite("F(X)")?;
    by.ensure_finite("B(Y)")?;

    let [w0, w1, w2, w3] = spec.weights.coefficients();
    let mmd = matches!(spec.penalty, Penalty::Mmd);
    let (mf, nf) = (m as f64, n as f64);
    let mn = mf * nf;

    let mut d_fx = Matrix::zeros(m, dy);
    let mut d_by = Matrix::zeros(n, dx);
    let mut tb = vec![0.0; dx];
    let mut tf = vec![0.0; dy];
    let mut tb2 = vec![0.0; dx];
    let mut tf2 = vec![0.0; dy];

    // Cross terms over the (i, j) grid.
    let mut c0 = 0.0;
    let mut cross_xb = 0.0; // Σ K_X(x_i, b_j)
    let mut cross_fy = 0.0; // Σ K_Y(f_i, y_j)
    let mut cross_prod = 0.0; // Σ K_X(x_i, b_j) K_Y(f_i, y_j)
    for i in 0..m {
        let xi = p.x.row(i);
        let fi = fx.row(i);
        for j in 0..n {
            let yj = p.y.row(j);
            let bj = by.row(j);
            if grad {
                tb.iter_mut().for_each(|v| *v = 0.0);
                tf.iter_mut().for_each(|v| *v = 0.0);
            }
            let cx = kernel_term(&spec.cost_x, xi, bj, 1.0, &mut tb, grad);
            // c_Y is symmetric: ∂c_Y(f, y)/∂f = ∂₂c_Y(y, f).
            let cy = kernel_term(&spec.cost_y, yj, fi, 1.0, &mut tf, grad);
            let r = cx - cy;
            c0 += r * r;
            if grad {
                let s = w0 * 2.0 * r / mn;
                let gb = d_by.row_mut(j);
                for (o, t) in gb.iter_mut().zip(&tb) {
                    *o += s * t;
                }
                let gf = d_fx.row_mut(i);
                for (o, t) in gf.iter_mut().zip(&tf) {
                    *o -= s * t;
                }
            }
            if mmd {
                if grad {
                    tb2.iter_mut().for_each(|v| *v = 0.0);
                    tf2.iter_mut().for_each(|v| *v = 0.0);
                }
                let kxb = kernel_term(&spec.kernel_x, xi, bj, 1.0, &mut tb2, grad);
                let kfy = kernel_term(&spec.kernel_y, yj, fi, 1.0, &mut tf2, grad);
                cross_xb += kxb;
                cross_fy += kfy;
                cross_prod += kxb * kfy;
                if grad {
                    let sb = -2.0 / mn * (w2 + w1 * kfy);
                    let gb = d_by.row_mut(j);
                    for (o, t) in gb.iter_mut().zip(&tb2) {
                        *o += sb * t;
                    }
                    let sf = -2.0 / mn * (w3 + w1 * kxb);
                    let gf = d_fx.row_mut(i);
                    for (o, t) in gf.iter_mut().zip(&tf2) {
                        *o += sf * t;
                    }
                }
            }
        }
    }
    c0 /= mn;

    let (l1, l2, l3) = if mmd {
        // Self terms on the mapped points.
        let mut ff = 0.0;
        let mut ff_weighted = 0.0;
        for k in 0..m {
            let fk = fx.row(k);
            for i in 0..m {
                let gxik = p.gram_x[(i, k)];
                let coef = 2.0 / (mf * mf) * (w3 + w1 * gxik);
                let v = kernel_term(&spec.kernel_y, fx.row(i), fk, coef, d_fx.row_mut(k), grad);
                ff += v;
                ff_weighted += gxik * v;
            }
        }
        let mut bb = 0.0;
        let mut bb_weighted = 0.0;
        for k in 0..n {
            let bk = by.row(k);
            for j in 0..n {
                let gyjk = p.gram_y[(j, k)];
                let coef = 2.0 / (nf * nf) * (w2 + w1 * gyjk);
                let v = kernel_term(&spec.kernel_x, by.row(j), bk, coef, d_by.row_mut(k), grad);
                bb += v;
                bb_weighted += gyjk * v;
            }
        }
        let sum_gx: f64 = p.gram_x.as_slice().iter().sum();
        let sum_gy: f64 = p.gram_y.as_slice().iter().sum();
        let l1 = ff_weighted / (mf * mf) + bb_weighted / (nf * nf) - 2.0 * cross_prod / mn;
        let l2 = sum_gx / (mf * mf) + bb / (nf * nf) - 2.0 * cross_xb / mn;
        let l3 = ff / (mf * mf) + sum_gy / (nf * nf) - 2.0 * cross_fy / mn;
        (l1, l2, l3)
    } else {
        let Penalty::Sinkhorn(cfg) = &spec.penalty else {
            unreachable!()
        };
        sinkhorn_terms(cfg, p, fx, by, [w1, w2, w3], grad, &mut d_fx, &mut d_by)?
    };

    let breakdown = LossBreakdown::combine(
        c0,
        floor_rounding(l1),
        floor_rounding(l2),
        floor_rounding(l3),
        &spec.weights,
    );
    let gradient = grad.then_some(MappedGradient { d_fx, d_by });
    Ok((breakdown, gradient))
}

#[allow(clippy::too_many_arguments)]
fn sinkhorn_terms(
    cfg: &SinkhornConfig,
    p: &Parts<'_>,
    fx: &Matrix,
    by: &Matrix,
    [w1, w2, w3]: [f64; 3],
    grad: bool,
    d_fx: &mut Matrix,
    d_by: &mut Matrix,
) -> Result<(f64, f64, f64)> {
    let (m, n) = (p.x.rows(), p.y.rows());
    let (dx, dy) = (p.x.cols(), p.y.cols());
    let joint_p = Matrix::from_fn(m, dx + dy, |i, a| if a < dx { p.x[(i, a)] } else { fx[(i, a - dx)] });
    let joint_q = Matrix::from_fn(n, dx + dy, |j, a| if a < dx { by[(j, a)] } else { p.y[(j, a - dx)] });
    let (l1, g1) = sinkhorn_divergence_points(&joint_p, &joint_q, cfg, grad)?;
    let (l2, g2) = sinkhorn_divergence_points(p.x, by, cfg, grad)?;
    let (l3, g3) = sinkhorn_divergence_points(fx, p.y, cfg, grad)?;
    if let (Some((gp1, gq1)), Some((_, gq2)), Some((gp3, _))) = (g1, g2, g3) {
        for i in 0..m {
            for a in 0..dy {
                d_fx[(i, a)] += w1 * gp1[(i, dx + a)] + w3 * gp3[(i, a)];
            }
        }
        for j in 0..n {
            for a in 0..dx {
                d_by[(j, a)] += w1 * gq1[(j, a)] + w2 * gq2[(j, a)];
            }
        }
    }
    Ok((l1, l2, l3))
}

/// `(1/mn) Σ_ij (c_X(x_i, B(y_j)) − c_Y(F(x_i), y_j))²`.
pub fn c0(
    cost_x: &KernelSpec,
    cost_y: &KernelSpec,
    x: &Matrix,
    by: &Matrix,
    fx: &Matrix,
    y: &Matrix,
) -> Result<f64> {
    if x.rows() != fx.rows() || y.rows() != by.rows() {
        return Err(Error::dim("mapped clouds must match their sources in size"));
    }
    if x.cols() != by.cols() || y.cols() != fx.cols() {
        return Err(Error::dim("mapped clouds must match the target dimensions"));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Size("c0 needs at least one point on each side".into()));
    }
    cost_x.check_dim(x.cols())?;
    cost_y.check_dim(y.cols())?;
    let mut s = 0.0;
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            let r = cost_x.eval_unchecked(x.row(i), by.row(j)) - cost_y.eval_unchecked(fx.row(i), y.row(j));
            s += r * r;
        }
    }
    Ok(s / (x.rows() * y.rows()) as f64)
}

/// One-shot Lagrangian evaluation (no caching across calls).
pub fn lagrangian(spec: &ObjectiveSpec, data: &DatasetPair, fx: &Matrix, by: &Matrix) -> Result<LossBreakdown> {
    Objective::new(spec.clone(), data)?.evaluate(fx, by)
}

/// One-shot gradient of the total with respect to the mapped points.
pub fn grad_wrt_mapped(
    spec: &ObjectiveSpec,
    data: &DatasetPair,
    fx: &Matrix,
    by: &Matrix,
) -> Result<MappedGradient> {
    Objective::new(spec.clone(), data)?
        .evaluate_with_grad(fx, by)
        .map(|(_, g)| g)
}
