//! Entropic optimal transport between uniform measures and the debiased
//! Sinkhorn divergence.
//!
//! Iterations run on the dual potentials in the log domain. The regularizer is the
//! relative entropy of the coupling against the product of the marginals, so the
//! reported value is `Σ γ_ij (c_ij + ε log(γ_ij · m n))`. For one-point measures it
//! equals the cost exactly. Large `cost / ε` ratios are handled by warm-starting from
//! a geometric sequence of larger regularizations that ends at the requested `ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, Matrix};
use crate::measure::EmpiricalMeasure;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Bound on the L¹ violation of the row marginal (columns are exact on return).
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_max_iterations() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    1e-9
}

impl SinkhornConfig {
    pub fn new(epsilon: f64) -> Self {
        SinkhornConfig {
            epsilon,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sinkhorn epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sinkhorn tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// Result of [`entropic_ot`].
#[derive(Clone, Debug)]
pub struct EntropicOt {
    pub value: f64,
    pub coupling: Matrix,
    /// Dual potential on the rows.
    pub f: Vec<f64>,
    /// Dual potential on the columns.
    pub g: Vec<f64>,
    /// Iterations spent at the target `ε`.
    pub iterations: usize,
    pub marginal_violation: f64,
}

/// Warm-up stages stop at this row violation or after this many iterations.
const STAGE_TOLERANCE: f64 = 1e-4;
const STAGE_MAX_ITERATIONS: usize = 500;
/// Warm-up starts when the cost range exceeds this multiple of `ε`.
const SCALING_RATIO: f64 = 50.0;

struct Solver<'a> {
    cost: &'a Matrix,
    cost_t: Matrix,
    log_a: f64,
    log_b: f64,
    f: Vec<f64>,
    g: Vec<f64>,
    scratch: Vec<f64>,
    /// Self-transport of one cloud: a single potential updated by averaging.
    symmetric: bool,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl<'a> Solver<'a> {
    fn new(cost: &'a Matrix, symmetric: bool) -> Self {
        let (m, n) = cost.shape();
        Solver {
            symmetric,
            cost,
            cost_t: if symmetric { Matrix::zeros(0, 0) } else { cost.transpose() },
            log_a: -(m as f64).ln(),
            log_b: -(n as f64).ln(),
            f: vec![0.0; m],
            g: vec![0.0; n],
            scratch: Vec::with_capacity(m.max(n)),
        }
    }

    /// `g_j = -ε log Σ_i a_i exp((f_i - c_ij)/ε)`.
    fn update_g(&mut self, eps: f64) {
        for j in 0..self.g.len() {
            self.scratch.clear();
            let col = self.cost_t.row(j);
            self.scratch
                .extend(col.iter().zip(&self.f).map(|(c, fi)| (fi - c) / eps));
            self.g[j] = -eps * (self.log_a + log_sum_exp(&self.scratch));
        }
    }

    /// New row potential from the current `g`, and the L¹ row-marginal violation of
    /// the coupling defined by the current `(f, g)`.
    fn next_f(&mut self, eps: f64) -> (Vec<f64>, f64) {
        let m = self.f.len();
        let mut next = vec![0.0; m];
        let mut violation = 0.0;
        for i in 0..m {
            self.scratch.clear();
            let row = self.cost.row(i);
            self.scratch
                .extend(row.iter().zip(&self.g).map(|(c, gj)| (gj - c) / eps));
            next[i] = -eps * (self.log_b + log_sum_exp(&self.scratch));
            // Row sum of the current coupling is a_i exp((f_i - next_i)/ε).
            violation += (((self.f[i] - next[i]) / eps).exp() - 1.0).abs() / m as f64;
        }
        (next, violation)
    }

    /// Runs to `tol` or `max_iter`; returns (iterations, violation, converged).
    fn run(&mut self, eps: f64, tol: f64, max_iter: usize) -> (usize, f64, bool) {
        if self.symmetric {
            return self.run_symmetric(eps, tol, max_iter);
        }
        self.update_g(eps);
        let mut violation = f64::INFINITY;
        for it in 0..max_iter {
            let (next, v) = self.next_f(eps);
            violation = v;
            if !v.is_finite() {
                return (it, v, false);
            }
            if v < tol {
                return (it, v, true);
            }
            self.f = next;
            self.update_g(eps);
        }
        (max_iter, violation, false)
    }

    /// Alternating updates oscillate on self-transport problems and converge very
    /// slowly; the averaged fixed-point iteration `f ← (f + T f)/2` does not.
    fn run_symmetric(&mut self, eps: f64, tol: f64, max_iter: usize) -> (usize, f64, bool) {
        let mut violation = f64::INFINITY;
        for it in 0..max_iter {
            self.g.clone_from(&self.f);
            let (next, v) = self.next_f(eps);
            violation = v;
            if !v.is_finite() {
                return (it, v, false);
            }
            if v < tol {
                return (it, v, true);
            }
            for (fi, ni) in self.f.iter_mut().zip(&next) {
                *fi = 0.5 * (*fi + ni);
            }
        }
        self.g.clone_from(&self.f);
        (max_iter, violation, false)
    }

    fn coupling(&self, eps: f64) -> Matrix {
        let base = self.log_a + self.log_b;
        Matrix::from_fn(self.f.len(), self.g.len(), |i, j| {
            (base + (self.f[i] + self.g[j] - self.cost[(i, j)]) / eps).exp()
        })
    }
}

/// Entropic OT between uniform measures with the given `m × n` cost matrix.
pub fn entropic_ot(cost: &Matrix, cfg: &SinkhornConfig) -> Result<EntropicOt> {
    solve(cost, cfg, false)
}

/// Entropic OT of a uniform measure with itself. `cost` must be square and symmetric;
/// the returned coupling is symmetric and `f = g`.
pub fn entropic_ot_self(cost: &Matrix, cfg: &SinkhornConfig) -> Result<EntropicOt> {
    if !cost.is_square() {
        return Err(Error::dim("self-transport needs a square cost matrix"));
    }
    cost.ensure_symmetric()?;
    solve(cost, cfg, true)
}

fn solve(cost: &Matrix, cfg: &SinkhornConfig, symmetric: bool) -> Result<EntropicOt> {
    cfg.validate()?;
    if cost.rows() == 0 || cost.cols() == 0 {
        return Err(Error::Size("cost matrix must be non-empty".into()));
    }
    cost.ensure_finite("sinkhorn cost")?;
    let mut solver = Solver::new(cost, symmetric);

    let (lo, hi) = cost
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &c| (l.min(c), h.max(c)));
    let range = hi - lo;
    if range > SCALING_RATIO * cfg.epsilon {
        let mut eps = range;
        while eps > cfg.epsilon {
            solver.run(eps, STAGE_TOLERANCE, STAGE_MAX_ITERATIONS);
            eps *= 0.5;
        }
    }

    let (iterations, violation, converged) = solver.run(cfg.epsilon, cfg.tolerance, cfg.max_iterations);
    if !converged {
        return Err(Error::Convergence {
            method: "sinkhorn",
            iterations,
            residual: violation,
        });
    }
    let coupling = solver.coupling(cfg.epsilon);
    let mut value = 0.0;
    for i in 0..coupling.rows() {
        let fi = solver.f[i];
        for (gij, gj) in coupling.row(i).iter().zip(&solver.g) {
            // c + ε log(γ m n) = f_i + g_j on the support of γ.
            value += gij * (fi + gj);
        }
    }
    Ok(EntropicOt {
        value,
        coupling,
        f: solver.f,
        g: solver.g,
        iterations,
        marginal_violation: violation,
    })
}

/// Matrix of squared Euclidean distances between rows.
pub fn squared_euclidean_cost(p: &Matrix, q: &Matrix) -> Result<Matrix> {
    if p.cols() != q.cols() {
        return Err(Error::dim(format!(
            "cost between clouds of dimensions {} and {}",
            p.cols(),
            q.cols()
        )));
    }
    Ok(Matrix::from_fn(p.rows(), q.rows(), |i, j| squared_distance(p.row(i), q.row(j))))
}

/// Value and point gradients of `OT_ε(P, Q)` with squared Euclidean cost.
/// The gradient uses the optimal coupling (envelope theorem): `∂/∂c_ij = γ_ij`.
fn ot_with_grad(p: &Matrix, q: &Matrix, cfg: &SinkhornConfig, want_grad: bool) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    let cost = squared_euclidean_cost(p, q)?;
    let ot = if std::ptr::eq(p, q) {
        entropic_ot_self(&cost, cfg)?
    } else {
        entropic_ot(&cost, cfg)?
    };
    if !want_grad {
        return Ok((ot.value, None));
    }
    let d = p.cols();
    let mut gp = Matrix::zeros(p.rows(), d);
    let mut gq = Matrix::zeros(q.rows(), d);
    for i in 0..p.rows() {
        for j in 0..q.rows() {
            let w = 2.0 * ot.coupling[(i, j)];
            for a in 0..d {
                let diff = w * (p[(i, a)] - q[(j, a)]);
                gp[(i, a)] += diff;
                gq[(j, a)] -= diff;
            }
        }
    }
    Ok((ot.value, Some((gp, gq))))
}

/// Sinkhorn divergence with squared Euclidean cost and, optionally, its gradients
/// with respect to the points of `p` and `q`.
///
/// The cross term is always solved with the two clouds in a canonical order, which
/// makes the result exactly symmetric in its arguments.
pub fn sinkhorn_divergence_points(
    p: &Matrix,
    q: &Matrix,
    cfg: &SinkhornConfig,
    want_grad: bool,
) -> Result<(f64, Option<(Matrix, Matrix)>)> {
    if p.cols() != q.cols() {
        return Err(Error::dim(format!(
            "sinkhorn divergence between dimensions {} and {}",
            p.cols(),
            q.cols()
        )));
    }
    let swap = canonical_order(p, q) == std::cmp::Ordering::Greater;
    let (cross, cross_grad) = if swap {
        let (v, g) = ot_with_grad(q, p, cfg, want_grad)?;
        (v, g.map(|(gq, gp)| (gp, gq)))
    } else {
        ot_with_grad(p, q, cfg, want_grad)?
    };
    let (pp, pp_grad) = ot_with_grad(p, p, cfg, want_grad)?;
    let (qq, qq_grad) = ot_with_grad(q, q, cfg, want_grad)?;
    let value = cross - 0.5 * pp - 0.5 * qq;
    let grads = match (cross_grad, pp_grad, qq_grad) {
        (Some((mut gp, mut gq)), Some((a1, a2)), Some((b1, b2))) => {
            // Both arguments of a self term move together.
            gp.add_scaled(-0.5, &a1)?;
            gp.add_scaled(-0.5, &a2)?;
            gq.add_scaled(-0.5, &b1)?;
            gq.add_scaled(-0.5, &b2)?;
            Some((gp, gq))
        }
        _ => None,
    };
    Ok((value, grads))
}

fn canonical_order(p: &Matrix, q: &Matrix) -> std::cmp::Ordering {
    p.rows()
        .cmp(&q.rows())
        .then_with(|| {
            let a = p.as_slice().iter().map(|v| v.to_bits());
            let b = q.as_slice().iter().map(|v| v.to_bits());
            a.cmp(b)
        })
}

/// `OT_ε(P, Q) − ½ OT_ε(P, P) − ½ OT_ε(Q, Q)` with squared Euclidean cost.
pub fn sinkhorn_divergence(p: &EmpiricalMeasure, q: &EmpiricalMeasure, cfg: &SinkhornConfig) -> Result<f64> {
    sinkhorn_divergence_points(p.points(), q.points(), cfg, false).map(|(v, _)| v)
}
