//! Gromov-Wasserstein comparison of network spaces.
//!
//! A network space is a point cloud with uniform weights and a cost function on
//! pairs of its points. This module provides the eccentricity and pairwise-cost
//! lower bounds (FLB, SLB) computed by exact one-dimensional optimal transport,
//! an entropic estimator of the GW objective and an exhaustive Gromov-Monge
//! search for tiny instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_self, KernelSpec};
use crate::linalg::Matrix;
use crate::measure::EmpiricalMeasure;
use crate::sinkhorn::{entropic_ot, SinkhornConfig};

/// Weight sums may differ from one by at most this much.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
/// Largest instance accepted by [`gm2_oracle`].
pub const GM_ORACLE_LIMIT: usize = 9;
/// Default entropic regularization relative to the variance of squared cost differences.
pub const DEFAULT_EPS_FACTOR: f64 = 1e-3;
pub const DEFAULT_OUTER_ITERATIONS: usize = 50;

#[derive(Clone, Debug)]
pub struct NetworkSpace {
    pub measure: EmpiricalMeasure,
    pub cost: KernelSpec,
}

impl NetworkSpace {
    pub fn new(measure: EmpiricalMeasure, cost: KernelSpec) -> Result<Self> {
        cost.validate()?;
        cost.check_dim(measure.dim())?;
        Ok(NetworkSpace { measure, cost })
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    /// `c(x_i, x_j)` for all pairs.
    pub fn cost_matrix(&self) -> Result<Matrix> {
        gram_self(&self.cost, self.measure.points())
    }
}

/// A coupling of two uniform measures.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling(Matrix);

impl Coupling {
    pub const MARGINAL_TOLERANCE: f64 = 1e-8;

    /// Checks nonnegativity and the uniform marginals.
    pub fn new(gamma: Matrix) -> Result<Self> {
        let (m, n) = gamma.shape();
        if m == 0 || n == 0 {
            return Err(Error::Size("coupling must be non-empty".into()));
        }
        gamma.ensure_finite("coupling")?;
        if let Some(v) = gamma.as_slice().iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidParameter(format!("coupling has negative entry {v}")));
        }
        for i in 0..m {
            let s: f64 = gamma.row(i).iter().sum();
            if (s - 1.0 / m as f64).abs() > Self::MARGINAL_TOLERANCE {
                return Err(Error::Normalization { sum: s * m as f64 });
            }
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| gamma[(i, j)]).sum();
            if (s - 1.0 / n as f64).abs() > Self::MARGINAL_TOLERANCE {
                return Err(Error::Normalization { sum: s * n as f64 });
            }
        }
        Ok(Coupling(gamma))
    }

    /// `γ_ij = 1/mn`.
    pub fn independent(m: usize, n: usize) -> Self {
        Coupling(Matrix::from_fn(m, n, |_, _| 1.0 / (m * n) as f64))
    }

    /// `γ_{i σ(i)} = 1/n`.
    pub fn from_permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        let mut g = Matrix::zeros(n, n);
        for (i, &j) in perm.iter().enumerate() {
            if j >= n {
                return Err(Error::InvalidParameter(format!("permutation entry {j} out of range")));
            }
            g[(i, j)] = 1.0 / n as f64;
        }
        Coupling::new(g)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

/// Root-mean-square of each row of the cost matrix.
pub fn eccentricity(space: &NetworkSpace) -> Result<Vec<f64>> {
    Ok(eccentricity_of(&space.cost_matrix()?))
}

fn eccentricity_of(c: &Matrix) -> Vec<f64> {
    let m = c.cols() as f64;
    c.row_iter()
        .map(|row| (row.iter().map(|v| v * v).sum::<f64>() / m).sqrt())
        .collect()
}

/// Squared 2-Wasserstein distance between two weighted sets of reals, given as
/// `(position, weight)` atoms.
///
/// Atoms are sorted by position (stable, so ties keep input order) and matched
/// by sweeping the two cumulative distribution functions together.
pub fn w2_1d(a: &[(f64, f64)], b: &[(f64, f64)]) -> Result<f64> {
    let a = sorted_atoms(a, "first")?;
    let b = sorted_atoms(b, "second")?;
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let t = ra.min(rb);
        let d = a[i].0 - b[j].0;
        total += t * d * d;
        ra -= t;
        rb -= t;
        // `t` equals one of the two remainders, so that side is now exactly zero.
        if ra == 0.0 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb == 0.0 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    Ok(total.max(0.0))
}

fn sorted_atoms(atoms: &[(f64, f64)], side: &str) -> Result<Vec<(f64, f64)>> {
    if atoms.is_empty() {
        return Err(Error::Size(format!("{side} atom list is empty")));
    }
    let mut sum = 0.0;
    for &(x, w) in atoms {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("{side} atom position {x}")));
        }
        if !(w.is_finite() && w > 0.0) {
            return Err(Error::InvalidParameter(format!("{side} atom weight must be positive, got {w}")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::Normalization { sum });
    }
    let mut sorted = atoms.to_vec();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(sorted)
}

/// [`w2_1d`] between uniform measures on the given positions.
pub fn w2_1d_uniform(a: &[f64], b: &[f64]) -> Result<f64> {
    w2_1d(&uniform_atoms(a), &uniform_atoms(b))
}

fn uniform_atoms(v: &[f64]) -> Vec<(f64, f64)> {
    let w = 1.0 / v.len() as f64;
    v.iter().map(|&x| (x, w)).collect()
}

/// First lower bound: `W₂²` between the eccentricity distributions.
pub fn flb2(a: &NetworkSpace, b: &NetworkSpace) -> Result<f64> {
    flb2_of(&a.cost_matrix()?, &b.cost_matrix()?)
}

fn flb2_of(ca: &Matrix, cb: &Matrix) -> Result<f64> {
    w2_1d_uniform(&eccentricity_of(ca), &eccentricity_of(cb))
}

/// Second lower bound: `W₂²` between the distributions of all pairwise costs.
pub fn slb2(a: &NetworkSpace, b: &NetworkSpace) -> Result<f64> {
    slb2_of(&a.cost_matrix()?, &b.cost_matrix()?)
}

fn slb2_of(ca: &Matrix, cb: &Matrix) -> Result<f64> {
    w2_1d_uniform(ca.as_slice(), cb.as_slice())
}

/// `Q(γ) = Σ_{i,i',j,j'} (c_X(x_i,x_i') − c_Y(y_j,y_j'))² γ_ij γ_i'j'`.
pub fn gw_objective(cx: &Matrix, cy: &Matrix, gamma: &Matrix) -> Result<f64> {
    check_costs(cx, cy, gamma)?;
    let l = linearized_cost(cx, cy, gamma);
    Ok(l.frobenius_dot(gamma)?.max(0.0))
}

fn check_costs(cx: &Matrix, cy: &Matrix, gamma: &Matrix) -> Result<()> {
    if !cx.is_square() || !cy.is_square() || gamma.shape() != (cx.rows(), cy.rows()) {
        return Err(Error::dim(format!(
            "costs {:?} and {:?} with coupling {:?}",
            cx.shape(),
            cy.shape(),
            gamma.shape()
        )));
    }
    Ok(())
}

/// `L_ij = Σ_{i',j'} (c_X(x_i,x_i') − c_Y(y_j,y_j'))² γ_i'j'`, expanded as
/// `(c_X² p)_i + (c_Y² q)_j − 2 (c_X γ c_Yᵀ)_ij` with `p`, `q` the marginals of `γ`.
fn linearized_cost(cx: &Matrix, cy: &Matrix, gamma: &Matrix) -> Matrix {
    let (m, n) = gamma.shape();
    let p: Vec<f64> = gamma.row_iter().map(|r| r.iter().sum()).collect();
    let mut q = vec![0.0; n];
    for r in gamma.row_iter() {
        for (qj, g) in q.iter_mut().zip(r) {
            *qj += g;
        }
    }
    let row_term: Vec<f64> = cx
        .row_iter()
        .map(|r| r.iter().zip(&p).map(|(c, pi)| c * c * pi).sum())
        .collect();
    let col_term: Vec<f64> = cy
        .row_iter()
        .map(|r| r.iter().zip(&q).map(|(c, qj)| c * c * qj).sum())
        .collect();
    let cross = cx.mul_unchecked(gamma).mul_unchecked(&cy.transpose());
    Matrix::from_fn(m, n, |i, j| row_term[i] + col_term[j] - 2.0 * cross[(i, j)])
}

/// Variance of `(c_X(x_i,x_i') − c_Y(y_j,y_j'))²` over all index quadruples.
pub fn squared_cost_variance(cx: &Matrix, cy: &Matrix) -> f64 {
    let moments = |c: &Matrix| {
        let n = c.as_slice().len() as f64;
        let mut mo = [0.0; 5];
        for &v in c.as_slice() {
            let mut p = 1.0;
            for m in mo.iter_mut() {
                *m += p / n;
                p *= v;
            }
        }
        mo
    };
    let a = moments(cx);
    let b = moments(cy);
    // With X, Y independent, E(X−Y)^k expands binomially.
    let e2 = a[2] - 2.0 * a[1] * b[1] + b[2];
    let e4 = a[4] - 4.0 * a[3] * b[1] + 6.0 * a[2] * b[2] - 4.0 * a[1] * b[3] + b[4];
    (e4 - e2 * e2).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropicGwConfig {
    /// Regularization; `None` picks `1e-3 ×` [`squared_cost_variance`].
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_outer")]
    pub outer_iterations: usize,
    #[serde(default = "default_inner_tolerance")]
    pub inner_tolerance: f64,
    #[serde(default = "default_inner_max")]
    pub inner_max_iterations: usize,
}

fn default_outer() -> usize {
    DEFAULT_OUTER_ITERATIONS
}

fn default_inner_tolerance() -> f64 {
    1e-6
}

fn default_inner_max() -> usize {
    100_000
}

impl Default for EntropicGwConfig {
    fn default() -> Self {
        EntropicGwConfig {
            epsilon: None,
            outer_iterations: DEFAULT_OUTER_ITERATIONS,
            inner_tolerance: default_inner_tolerance(),
            inner_max_iterations: default_inner_max(),
        }
    }
}

impl EntropicGwConfig {
    pub fn with_epsilon(epsilon: f64, outer_iterations: usize) -> Self {
        EntropicGwConfig {
            epsilon: Some(epsilon),
            outer_iterations,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct EntropicGw {
    /// Unregularized `Q(γ)` of the final coupling.
    pub q_value: f64,
    pub coupling: Coupling,
    pub epsilon: f64,
}

/// Alternates between building the linearized cost of the current coupling and
/// solving an entropic OT problem with it, starting from the independent coupling.
pub fn entropic_gw(a: &NetworkSpace, b: &NetworkSpace, cfg: &EntropicGwConfig) -> Result<EntropicGw> {
    entropic_gw_costs(&a.cost_matrix()?, &b.cost_matrix()?, cfg)
}

pub fn entropic_gw_costs(cx: &Matrix, cy: &Matrix, cfg: &EntropicGwConfig) -> Result<EntropicGw> {
    let (m, n) = (cx.rows(), cy.rows());
    if m == 0 || n == 0 {
        return Err(Error::Size("network spaces must be non-empty".into()));
    }
    let mut gamma = Coupling::independent(m, n).into_matrix();
    check_costs(cx, cy, &gamma)?;
    cx.ensure_finite("source cost")?;
    cy.ensure_finite("target cost")?;
    let epsilon = match cfg.epsilon {
        Some(e) => e,
        None => {
            let v = DEFAULT_EPS_FACTOR * squared_cost_variance(cx, cy);
            // Constant costs make every coupling optimal; any positive value works.
            if v > 0.0 {
                v
            } else {
                DEFAULT_EPS_FACTOR
            }
        }
    };
    let sink = SinkhornConfig {
        epsilon,
        max_iterations: cfg.inner_max_iterations,
        tolerance: cfg.inner_tolerance,
    };
    sink.validate()?;
    for _ in 0..cfg.outer_iterations {
        let l = linearized_cost(cx, cy, &gamma);
        gamma = entropic_ot(&l, &sink)?.coupling;
    }
    round_to_uniform_marginals(&mut gamma);
    let q_value = gw_objective(cx, cy, &gamma)?;
    Ok(EntropicGw {
        q_value,
        coupling: Coupling(gamma),
        epsilon,
    })
}

/// Moves a nonnegative matrix onto the couplings of the uniform marginals: rows,
/// then columns, are scaled down to their targets and the remaining deficit is
/// filled with a rank-one correction (Altschuler, Weed and Rigollet, 2017).
fn round_to_uniform_marginals(g: &mut Matrix) {
    let (m, n) = g.shape();
    let (r, c) = (1.0 / m as f64, 1.0 / n as f64);
    for i in 0..m {
        let s: f64 = g.row(i).iter().sum();
        if s > r {
            for v in g.row_mut(i) {
                *v *= r / s;
            }
        }
    }
    let mut col = vec![0.0; n];
    for row in g.row_iter() {
        for (cj, v) in col.iter_mut().zip(row) {
            *cj += v;
        }
    }
    let scale: Vec<f64> = col.iter().map(|&s| if s > c { c / s } else { 1.0 }).collect();
    for i in 0..m {
        for (v, k) in g.row_mut(i).iter_mut().zip(&scale) {
            *v *= k;
        }
    }
    let row_def: Vec<f64> = g.row_iter().map(|row| (r - row.iter().sum::<f64>()).max(0.0)).collect();
    let mut col_def = vec![c; n];
    for row in g.row_iter() {
        for (d, v) in col_def.iter_mut().zip(row) {
            *d -= v;
        }
    }
    let total: f64 = row_def.iter().sum();
    if total > 0.0 {
        for i in 0..m {
            for (v, d) in g.row_mut(i).iter_mut().zip(&col_def) {
                *v += row_def[i] * d.max(0.0) / total;
            }
        }
    }
}

/// Exhaustive Gromov-Monge search over permutations of two equal-size spaces with
/// `n ≤ 9` points. Returns `(1/n²) Σ_{i,j} (c_X(x_i,x_j) − c_Y(y_σi,y_σj))²` at
/// the first minimizing `σ` in lexicographic order.
pub fn gm2_oracle(a: &NetworkSpace, b: &NetworkSpace) -> Result<(f64, Vec<usize>)> {
    if a.len() != b.len() {
        return Err(Error::dim(format!(
            "Gromov-Monge search needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() > GM_ORACLE_LIMIT {
        return Err(Error::SizeLimit {
            size: a.len(),
            limit: GM_ORACLE_LIMIT,
        });
    }
    gm2_oracle_costs(&a.cost_matrix()?, &b.cost_matrix()?)
}

pub fn gm2_oracle_costs(cx: &Matrix, cy: &Matrix) -> Result<(f64, Vec<usize>)> {
    let n = cx.rows();
    if !cx.is_square() || cy.shape() != (n, n) {
        return Err(Error::dim(format!("cost shapes {:?} and {:?}", cx.shape(), cy.shape())));
    }
    if n > GM_ORACLE_LIMIT {
        return Err(Error::SizeLimit {
            size: n,
            limit: GM_ORACLE_LIMIT,
        });
    }
    if n == 0 {
        return Err(Error::Size("network spaces must be non-empty".into()));
    }
    let mut search = Search {
        cx,
        cy,
        n,
        perm: Vec::with_capacity(n),
        used: vec![false; n],
        best: f64::INFINITY,
        best_perm: Vec::new(),
    };
    search.descend(0.0);
    Ok((search.best / (n * n) as f64, search.best_perm))
}

struct Search<'a> {
    cx: &'a Matrix,
    cy: &'a Matrix,
    n: usize,
    perm: Vec<usize>,
    used: Vec<bool>,
    best: f64,
    best_perm: Vec<usize>,
}

impl Search<'_> {
    fn descend(&mut self, partial: f64) {
        let k = self.perm.len();
        if k == self.n {
            if partial < self.best {
                self.best = partial;
                self.best_perm.clone_from(&self.perm);
            }
            return;
        }
        for j in 0..self.n {
            if self.used[j] {
                continue;
            }
            // Terms added by assigning k ↦ j: the diagonal pair and both orders of
            // every pair with an earlier index.
            let mut add = (self.cx[(k, k)] - self.cy[(j, j)]).powi(2);
            for (i, &pj) in self.perm.iter().enumerate() {
                add += (self.cx[(i, k)] - self.cy[(pj, j)]).powi(2);
                add += (self.cx[(k, i)] - self.cy[(j, pj)]).powi(2);
            }
            let next = partial + add;
            // Every remaining term is nonnegative, so this branch cannot improve.
            if next >= self.best {
                continue;
            }
            self.used[j] = true;
            self.perm.push(j);
            self.descend(next);
            self.perm.pop();
            self.used[j] = false;
        }
    }
}

/// Bounds report written by the command-line tool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub flb2: f64,
    pub slb2: f64,
    pub gw2_entropic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gm2_oracle: Option<f64>,
}

/// FLB², SLB², the entropic GW estimate and, when both spaces have the same size
/// of at most nine points, the Gromov-Monge value.
pub fn bounds(a: &NetworkSpace, b: &NetworkSpace, cfg: &EntropicGwConfig) -> Result<BoundsReport> {
    let ca = a.cost_matrix()?;
    let cb = b.cost_matrix()?;
    let gm2_oracle = if ca.rows() == cb.rows() && ca.rows() <= GM_ORACLE_LIMIT {
        Some(gm2_oracle_costs(&ca, &cb)?.0)
    } else {
        None
    };
    Ok(BoundsReport {
        flb2: flb2_of(&ca, &cb)?,
        slb2: slb2_of(&ca, &cb)?,
        gw2_entropic: entropic_gw_costs(&ca, &cb, cfg)?.q_value,
        gm2_oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_space(rng: &mut Rng, n: usize) -> NetworkSpace {
        let pts = Matrix::from_fn(n, 2, |_, _| rng.standard_normal());
        NetworkSpace::new(EmpiricalMeasure::new(pts).unwrap(), KernelSpec::rbf(1.0)).unwrap()
    }

    #[test]
    fn eccentricity_trivial_cases() {
        let one = NetworkSpace::new(EmpiricalMeasure::from_rows(&[[0.3, 0.4]]).unwrap(), KernelSpec::inner_product()).unwrap();
        assert!((eccentricity(&one).unwrap()[0] - 0.25).abs() < 1e-15);
        let c = Matrix::from_fn(4, 4, |_, _| 1.0);
        assert_eq!(eccentricity_of(&c), vec![1.0; 4]);
    }

    #[test]
    fn eccentricity_matches_loop() {
        let mut rng = Rng::new(1);
        let s = random_space(&mut rng, 6);
        let e = eccentricity(&s).unwrap();
        for i in 0..6 {
            let mut acc = 0.0;
            for k in 0..6 {
                let d: f64 = (0..2).map(|t| (s.measure.point(i)[t] - s.measure.point(k)[t]).powi(2)).sum();
                acc += (-d).exp().powi(2);
            }
            assert!((e[i] - (acc / 6.0).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn w2_trivial_cases() {
        assert_eq!(w2_1d_uniform(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(w2_1d_uniform(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(matches!(w2_1d(&[(0.0, 0.5)], &[(1.0, 1.0)]), Err(Error::Normalization { .. })));
        assert!(w2_1d(&[], &[(1.0, 1.0)]).is_err());
    }

    /// Transport on the common refinement: both measures become uniform over the
    /// same quantile cells, and each cell sends its mass from the quantile of `a` to
    /// the quantile of `b`. Compared with the minimum over all assignments of the
    /// refined atoms, which is the LP optimum for equal-weight atoms.
    #[test]
    fn w2_matches_assignment_on_refinement() {
        let mut rng = Rng::new(2);
        for _ in 0..3 {
            // 5 vs 8 uniform atoms refine to 40 equal cells.
            let a: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
            let b: Vec<f64> = (0..8).map(|_| 2.0 * rng.uniform()).collect();
            let ra: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat(x).take(8)).collect();
            let rb: Vec<f64> = b.iter().flat_map(|&x| std::iter::repeat(x).take(5)).collect();
            let lp = assignment_min(&ra, &rb) / 40.0;
            let got = w2_1d_uniform(&a, &b).unwrap();
            assert!((got - lp).abs() < 1e-10, "{got} vs {lp}");
        }
    }

    /// Exact min-cost perfect matching by the Hungarian algorithm.
    fn assignment_min(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let cost = |i: usize, j: usize| (a[i] - b[j]).powi(2);
        let inf = f64::INFINITY;
        let mut u = vec![0.0; n + 1];
        let mut v = vec![0.0; n + 1];
        let mut p = vec![0usize; n + 1];
        let mut way = vec![0usize; n + 1];
        for i in 1..=n {
            p[0] = i;
            let mut j0 = 0;
            let mut minv = vec![inf; n + 1];
            let mut used = vec![false; n + 1];
            loop {
                used[j0] = true;
                let i0 = p[j0];
                let mut delta = inf;
                let mut j1 = 0;
                for j in 1..=n {
                    if !used[j] {
                        let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                        if cur < minv[j] {
                            minv[j] = cur;
                            way[j] = j0;
                        }
                        if minv[j] < delta {
                            delta = minv[j];
                            j1 = j;
                        }
                    }
                }
                for j in 0..=n {
                    if used[j] {
                        u[p[j]] += delta;
                        v[j] -= delta;
                    } else {
                        minv[j] -= delta;
                    }
                }
                j0 = j1;
                if p[j0] == 0 {
                    break;
                }
            }
            loop {
                let j1 = way[j0];
                p[j0] = p[j1];
                j0 = j1;
                if j0 == 0 {
                    break;
                }
            }
        }
        (1..=n).map(|j| cost(p[j] - 1, j - 1)).sum()
    }

    #[test]
    fn w2_unequal_weights() {
        // 0.7 δ₀ + 0.3 δ₂ against δ₁: every unit of mass moves distance 1.
        let v = w2_1d(&[(0.0, 0.7), (2.0, 0.3)], &[(1.0, 1.0)]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        // 0.5 δ₀ + 0.5 δ₁ against 0.25 δ₀ + 0.75 δ₁: 0.25 moves distance 1.
        let v = w2_1d(&[(0.0, 0.5), (1.0, 0.5)], &[(1.0, 0.75), (0.0, 0.25)]).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identical_spaces() {
        let mut rng = Rng::new(3);
        let s = random_space(&mut rng, 6);
        let pts = s.measure.points().scale(2.0);
        // Spread-out points keep distinct points' cost rows far apart, so the
        // alternating scheme settles on the diagonal coupling.
        let s = NetworkSpace::new(EmpiricalMeasure::new(pts).unwrap(), KernelSpec::rbf(1.0)).unwrap();
        assert!(flb2(&s, &s).unwrap() < 1e-15);
        assert!(slb2(&s, &s).unwrap() < 1e-15);
        let (v, p) = gm2_oracle(&s, &s).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(p, (0..6).collect::<Vec<_>>());
        let e = entropic_gw(&s, &s, &EntropicGwConfig::with_epsilon(1e-3, 50)).unwrap();
        assert!(e.q_value <= 1e-6, "{}", e.q_value);
    }

    #[test]
    fn gm_single_point() {
        let a = NetworkSpace::new(EmpiricalMeasure::from_rows(&[[1.0, 2.0]]).unwrap(), KernelSpec::inner_product()).unwrap();
        let b = NetworkSpace::new(EmpiricalMeasure::from_rows(&[[0.5, 0.0]]).unwrap(), KernelSpec::inner_product()).unwrap();
        let (v, p) = gm2_oracle(&a, &b).unwrap();
        assert!((v - (5.0f64 - 0.25).powi(2)).abs() < 1e-12);
        assert_eq!(p, vec![0]);
    }

    /// Every permutation by Heap's algorithm, which visits them in a different order.
    fn all_perms_min(cx: &Matrix, cy: &Matrix) -> f64 {
        let n = cx.rows();
        let value = |p: &[usize]| {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += (cx[(i, j)] - cy[(p[i], p[j])]).powi(2);
                }
            }
            s / (n * n) as f64
        };
        let mut p: Vec<usize> = (0..n).rev().collect();
        let mut c = vec![0; n];
        let mut best = value(&p);
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    p.swap(0, i);
                } else {
                    p.swap(c[i], i);
                }
                best = best.min(value(&p));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn gm_matches_second_enumeration() {
        let mut rng = Rng::new(4);
        for n in [2, 3, 4, 5] {
            let a = random_space(&mut rng, n);
            let b = random_space(&mut rng, n);
            let (v, p) = gm2_oracle(&a, &b).unwrap();
            let ca = a.cost_matrix().unwrap();
            let cb = b.cost_matrix().unwrap();
            assert!((v - all_perms_min(&ca, &cb)).abs() < 1e-14);
            let q = gw_objective(&ca, &cb, Coupling::from_permutation(&p).unwrap().matrix()).unwrap();
            assert!((q - v).abs() < 1e-12);
        }
    }

    #[test]
    fn gm_size_limit() {
        let mut rng = Rng::new(5);
        let a = random_space(&mut rng, 10);
        assert!(matches!(gm2_oracle(&a, &a), Err(Error::SizeLimit { size: 10, limit: 9 })));
        let b = random_space(&mut rng, 3);
        assert!(matches!(gm2_oracle(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn lower_bounds_below_gm() {
        let mut rng = Rng::new(6);
        for n in [3, 5, 7] {
            let a = random_space(&mut rng, n);
            let b = random_space(&mut rng, n);
            let (g, _) = gm2_oracle(&a, &b).unwrap();
            assert!(flb2(&a, &b).unwrap() <= g + 1e-9);
            assert!(slb2(&a, &b).unwrap() <= g + 1e-9);
        }
    }

    #[test]
    fn objective_matches_quadruple_sum() {
        let mut rng = Rng::new(7);
        let a = random_space(&mut rng, 3);
        let b = random_space(&mut rng, 4);
        let ca = a.cost_matrix().unwrap();
        let cb = b.cost_matrix().unwrap();
        let g = Matrix::from_fn(3, 4, |i, j| (1 + i + 2 * j) as f64);
        let total: f64 = g.as_slice().iter().sum();
        let g = g.scale(1.0 / total);
        let mut want = 0.0;
        for i in 0..3 {
            for k in 0..3 {
                for j in 0..4 {
                    for l in 0..4 {
                        want += (ca[(i, k)] - cb[(j, l)]).powi(2) * g[(i, j)] * g[(k, l)];
                    }
                }
            }
        }
        assert!((gw_objective(&ca, &cb, &g).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn variance_matches_enumeration() {
        let mut rng = Rng::new(8);
        let ca = random_space(&mut rng, 3).cost_matrix().unwrap();
        let cb = random_space(&mut rng, 4).cost_matrix().unwrap();
        let vals: Vec<f64> = ca
            .as_slice()
            .iter()
            .flat_map(|x| cb.as_slice().iter().map(move |y| (x - y).powi(2)))
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((squared_cost_variance(&ca, &cb) - var).abs() < 1e-14);
    }

    #[test]
    fn entropic_coupling_is_valid_and_above_bounds() {
        let mut rng = Rng::new(9);
        let a = random_space(&mut rng, 7);
        let b = random_space(&mut rng, 9);
        let e = entropic_gw(&a, &b, &EntropicGwConfig::default()).unwrap();
        Coupling::new(e.coupling.matrix().clone()).unwrap();
        let lb = flb2(&a, &b).unwrap().max(slb2(&a, &b).unwrap());
        assert!(e.q_value >= lb - 1e-9);
    }

    #[test]
    fn rounding_restores_marginals() {
        let mut rng = Rng::new(10);
        let mut g = Matrix::from_fn(4, 6, |_, _| rng.uniform() / 20.0);
        round_to_uniform_marginals(&mut g);
        Coupling::new(g).unwrap();
    }

    #[test]
    fn coupling_validation() {
        assert!(Coupling::new(Matrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap()).is_ok());
        assert!(Coupling::new(Matrix::from_rows(&[[0.5, 0.1], [0.0, 0.4]]).unwrap()).is_err());
        assert!(Coupling::new(Matrix::from_rows(&[[0.6, -0.1], [-0.1, 0.6]]).unwrap()).is_err());
        assert!(Coupling::from_permutation(&[0, 2]).is_err());
    }
}
