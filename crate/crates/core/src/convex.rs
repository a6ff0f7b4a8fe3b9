//! The finite-dimensional convex representer program.
//!
//! Unknowns are `F ∈ R^{m×n}` and `B ∈ R^{n×m}`. With kernel matrices `K_X`
//! (`m×m`), `K_Y` (`n×n`), uniform weights `a = 1/m`, `b = 1/n` and
//!
//! ```text
//! c0 = (1/mn) ‖K_Y B K_X − K_Y Fᵀ K_X‖²
//! m1 = ‖(1/m) K_X^{3/2} F K_Y^{1/2} − (1/n) K_X^{1/2} Bᵀ K_Y^{3/2}‖²
//! m2 = ‖K_X^{1/2} (a − Bᵀ K_Y b)‖²
//! m3 = ‖K_Y^{1/2} (b − Fᵀ K_X a)‖²
//! ```
//!
//! the objective is `ω = c0 + λ1 m1 + λ2 m2 + λ3 m3`, a convex quadratic.
//! It is minimized by conjugate gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gram_self, KernelSpec};
use crate::linalg::{psd_powers, Matrix};
use crate::measure::DatasetPair;
use crate::rng::Rng;

/// Default iteration budget of [`ConvexProblem::solve`].
pub const DEFAULT_MAX_ITERATIONS: usize = 100_000;

/// Default relative gradient tolerance of [`ConvexProblem::solve`].
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexVars {
    /// `m × n`.
    pub f: Matrix,
    /// `n × m`.
    pub b: Matrix,
}

impl ConvexVars {
    pub fn zeros(m: usize, n: usize) -> Self {
        ConvexVars {
            f: Matrix::zeros(m, n),
            b: Matrix::zeros(n, m),
        }
    }

    /// Independent standard normal entries scaled by `scale`.
    pub fn random(m: usize, n: usize, scale: f64, rng: &mut Rng) -> Self {
        ConvexVars {
            f: Matrix::from_fn(m, n, |_, _| scale * rng.standard_normal()),
            b: Matrix::from_fn(n, m, |_, _| scale * rng.standard_normal()),
        }
    }

    fn scale(&self, s: f64) -> ConvexVars {
        ConvexVars {
            f: self.f.scale(s),
            b: self.b.scale(s),
        }
    }

    fn axpy(&self, s: f64, d: &ConvexVars) -> ConvexVars {
        let mut out = self.clone();
        out.f.add_scaled(s, &d.f).expect("same shape");
        out.b.add_scaled(s, &d.b).expect("same shape");
        out
    }

    pub fn norm_squared(&self) -> f64 {
        let f = self.f.frobenius_norm();
        let b = self.b.frobenius_norm();
        f * f + b * b
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexBreakdown {
    pub c0: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub omega: f64,
}

#[derive(Clone, Debug)]
pub struct ConvexProblem {
    kx: Matrix,
    ky: Matrix,
    kx_half: Matrix,
    kx_three_halves: Matrix,
    ky_half: Matrix,
    ky_three_halves: Matrix,
    /// `(K_X^{1/2})²`, equal to `K_X` up to the eigenvalue clamp.
    hx: Matrix,
    hy: Matrix,
    lambda: [f64; 3],
}

impl ConvexProblem {
    /// Builds the problem from symmetric PSD kernel matrices and `(λ1, λ2, λ3)`.
    pub fn new(kx: Matrix, ky: Matrix, lambda: [f64; 3]) -> Result<Self> {
        for (k, l) in lambda.iter().enumerate() {
            if !(l.is_finite() && *l >= 0.0) {
                return Err(Error::InvalidParameter(format!("lambda{} must be nonnegative, got {l}", k + 1)));
            }
        }
        if kx.rows() == 0 || ky.rows() == 0 {
            return Err(Error::Size("kernel matrices must be non-empty".into()));
        }
        let px = psd_powers(&kx, &[0.5, 1.5])?;
        let py = psd_powers(&ky, &[0.5, 1.5])?;
        let [kx_half, kx_three_halves]: [Matrix; 2] = px.try_into().expect("two powers");
        let [ky_half, ky_three_halves]: [Matrix; 2] = py.try_into().expect("two powers");
        let hx = kx_half.mul_unchecked(&kx_half);
        let hy = ky_half.mul_unchecked(&ky_half);
        Ok(ConvexProblem {
            kx,
            ky,
            kx_half,
            kx_three_halves,
            ky_half,
            ky_three_halves,
            hx,
            hy,
            lambda,
        })
    }

    /// Kernel matrices of the two clouds under `kernel_x`, `kernel_y`.
    pub fn from_data(
        kernel_x: &KernelSpec,
        kernel_y: &KernelSpec,
        data: &DatasetPair,
        lambda: [f64; 3],
    ) -> Result<Self> {
        kernel_x.validate()?;
        kernel_y.validate()?;
        let kx = gram_self(kernel_x, data.source.points())?;
        let ky = gram_self(kernel_y, data.target.points())?;
        Self::new(kx, ky, lambda)
    }

    pub fn m(&self) -> usize {
        self.kx.rows()
    }

    pub fn n(&self) -> usize {
        self.ky.rows()
    }

    pub fn lambda(&self) -> [f64; 3] {
        self.lambda
    }

    pub fn kx(&self) -> &Matrix {
        &self.kx
    }

    pub fn ky(&self) -> &Matrix {
        &self.ky
    }

    pub fn kx_half(&self) -> &Matrix {
        &self.kx_half
    }

    pub fn ky_half(&self) -> &Matrix {
        &self.ky_half
    }

    pub fn kx_three_halves(&self) -> &Matrix {
        &self.kx_three_halves
    }

    pub fn ky_three_halves(&self) -> &Matrix {
        &self.ky_three_halves
    }

    /// Same kernel matrices with different multipliers.
    pub fn with_lambda(&self, lambda: [f64; 3]) -> Result<Self> {
        for (k, l) in lambda.iter().enumerate() {
            if !(l.is_finite() && *l >= 0.0) {
                return Err(Error::InvalidParameter(format!("lambda{} must be nonnegative, got {l}", k + 1)));
            }
        }
        let mut p = self.clone();
        p.lambda = lambda;
        Ok(p)
    }

    fn check(&self, v: &ConvexVars) -> Result<()> {
        let (m, n) = (self.m(), self.n());
        if v.f.shape() != (m, n) || v.b.shape() != (n, m) {
            return Err(Error::dim(format!(
                "variables have shapes F {:?}, B {:?}; expected F ({m}, {n}), B ({n}, {m})",
                v.f.shape(),
                v.b.shape()
            )));
        }
        Ok(())
    }

    fn residuals(&self, v: &ConvexVars) -> Residuals {
        let (m, n) = (self.m() as f64, self.n() as f64);
        let diff = v.b.sub(&v.f.transpose()).expect("checked shapes");
        let r = self.ky.mul_unchecked(&diff).mul_unchecked(&self.kx);
        let s1 = self
            .kx_three_halves
            .mul_unchecked(&v.f)
            .mul_unchecked(&self.ky_half)
            .scale(1.0 / m);
        let s2 = self
            .kx_half
            .mul_unchecked(&v.b.transpose())
            .mul_unchecked(&self.ky_three_halves)
            .scale(1.0 / n);
        let s = s1.sub(&s2).expect("same shape");
        let w: Vec<f64> = (0..self.n()).map(|j| self.ky.row(j).iter().sum::<f64>() / n).collect();
        let z: Vec<f64> = (0..self.m()).map(|i| self.kx.row(i).iter().sum::<f64>() / m).collect();
        let btw = v.b.matvec_t(&w).expect("checked shapes");
        let u: Vec<f64> = btw.iter().map(|x| 1.0 / m - x).collect();
        let ftz = v.f.matvec_t(&z).expect("checked shapes");
        let vv: Vec<f64> = ftz.iter().map(|x| 1.0 / n - x).collect();
        Residuals { r, s, w, z, u, v: vv }
    }

    fn breakdown_of(&self, res: &Residuals) -> ConvexBreakdown {
        let (m, n) = (self.m() as f64, self.n() as f64);
        let rn = res.r.frobenius_norm();
        let c0 = rn * rn / (m * n);
        let sn = res.s.frobenius_norm();
        let m1 = sn * sn;
        let m2 = norm_sq(&self.kx_half.matvec(&res.u).expect("shape"));
        let m3 = norm_sq(&self.ky_half.matvec(&res.v).expect("shape"));
        let [l1, l2, l3] = self.lambda;
        ConvexBreakdown {
            c0,
            m1,
            m2,
            m3,
            omega: c0 + l1 * m1 + l2 * m2 + l3 * m3,
        }
    }

    pub fn omega(&self, v: &ConvexVars) -> Result<ConvexBreakdown> {
        self.check(v)?;
        Ok(self.breakdown_of(&self.residuals(v)))
    }

    pub fn omega_grad(&self, v: &ConvexVars) -> Result<ConvexVars> {
        self.check(v)?;
        Ok(self.grad_of(&self.residuals(v)))
    }

    fn grad_of(&self, res: &Residuals) -> ConvexVars {
        let (m, n) = (self.m() as f64, self.n() as f64);
        let [l1, l2, l3] = self.lambda;
        let kr_k = self.ky.mul_unchecked(&res.r).mul_unchecked(&self.kx);
        // ∂c0/∂B = (2/mn) K_Y R K_X and ∂c0/∂F = −(2/mn) K_X Rᵀ K_Y = −(∂c0/∂B)ᵀ.
        let mut gb = kr_k.scale(2.0 / (m * n));
        let mut gf = kr_k.transpose().scale(-2.0 / (m * n));
        if l1 != 0.0 {
            let df = self
                .kx_three_halves
                .mul_unchecked(&res.s)
                .mul_unchecked(&self.ky_half);
            gf.add_scaled(l1 * 2.0 / m, &df).expect("shape");
            let db = self
                .ky_three_halves
                .mul_unchecked(&res.s.transpose())
                .mul_unchecked(&self.kx_half);
            gb.add_scaled(-l1 * 2.0 / n, &db).expect("shape");
        }
        if l2 != 0.0 {
            let hu = self.hx.matvec(&res.u).expect("shape");
            for j in 0..self.n() {
                let row = gb.row_mut(j);
                for (o, h) in row.iter_mut().zip(&hu) {
                    *o -= l2 * 2.0 * res.w[j] * h;
                }
            }
        }
        if l3 != 0.0 {
            let hv = self.hy.matvec(&res.v).expect("shape");
            for i in 0..self.m() {
                let row = gf.row_mut(i);
                for (o, h) in row.iter_mut().zip(&hv) {
                    *o -= l3 * 2.0 * res.z[i] * h;
                }
            }
        }
        ConvexVars { f: gf, b: gb }
    }

    /// `H d` for the (constant) Hessian `H` of `ω`, as `∇ω(d) − ∇ω(0)`.
    fn hessian_times(&self, d: &ConvexVars, grad_at_zero: &ConvexVars) -> ConvexVars {
        let g = self.grad_of(&self.residuals(d));
        g.axpy(-1.0, grad_at_zero)
    }

    /// Conjugate gradients on the quadratic `ω` with exact step lengths and the
    /// Polak-Ribière+ update. The residual is recomputed from scratch every
    /// [`RESIDUAL_REFRESH`] iterations. Stops when `‖∇ω‖_F ≤ tol · max(1, |ω|)`.
    pub fn solve(&self, init: ConvexVars, tol: f64, max_iters: usize) -> Result<ConvexSolution> {
        if !(tol.is_finite() && tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
        }
        self.check(&init)?;
        let (m, n) = (self.m(), self.n());
        let g0 = self.grad_of(&self.residuals(&ConvexVars::zeros(m, n)));
        let mut x = init;
        let mut g = self.grad_of(&self.residuals(&x));
        let mut p = g.scale(-1.0);
        let mut grad_norm = f64::INFINITY;
        for it in 0..=max_iters {
            let g2 = g.norm_squared();
            grad_norm = g2.sqrt();
            if !grad_norm.is_finite() {
                return Err(Error::NonFinite("convex solver gradient".into()));
            }
            let value = self.breakdown_of(&self.residuals(&x));
            if grad_norm <= tol * value.omega.abs().max(1.0) {
                // Confirm against the exact gradient before accepting.
                let exact = self.grad_of(&self.residuals(&x));
                let exact_norm = exact.norm_squared().sqrt();
                if exact_norm <= tol * value.omega.abs().max(1.0) {
                    return Ok(ConvexSolution {
                        vars: x,
                        breakdown: value,
                        iterations: it,
                        grad_norm: exact_norm,
                    });
                }
                g = exact;
                p = g.scale(-1.0);
                continue;
            }
            if it == max_iters {
                break;
            }
            let hp = self.hessian_times(&p, &g0);
            let curvature = dot_vars(&p, &hp);
            if !(curvature > 0.0) {
                // p lies in the null space of H; fall back to steepest descent.
                p = g.scale(-1.0);
                continue;
            }
            let alpha = -dot_vars(&g, &p) / curvature;
            x = x.axpy(alpha, &p);
            let g_new = if (it + 1) % RESIDUAL_REFRESH == 0 {
                self.grad_of(&self.residuals(&x))
            } else {
                g.axpy(alpha, &hp)
            };
            let beta = ((g_new.norm_squared() - dot_vars(&g_new, &g)) / g2).max(0.0);
            p = g_new.scale(-1.0).axpy(beta, &p);
            g = g_new;
        }
        Err(Error::Convergence {
            method: "convex conjugate gradients",
            iterations: max_iters,
            residual: grad_norm,
        })
    }
}

/// Iterations between exact gradient evaluations in [`ConvexProblem::solve`].
const RESIDUAL_REFRESH: usize = 50;

fn dot_vars(a: &ConvexVars, b: &ConvexVars) -> f64 {
    a.f.frobenius_dot(&b.f).expect("same shape") + a.b.frobenius_dot(&b.b).expect("same shape")
}

struct Residuals {
    r: Matrix,
    s: Matrix,
    w: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Clone, Debug)]
pub struct ConvexSolution {
    pub vars: ConvexVars,
    pub breakdown: ConvexBreakdown,
    pub iterations: usize,
    pub grad_norm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(rng: &mut Rng, n: usize) -> Matrix {
        let pts = Matrix::from_fn(n, 2, |_, _| rng.standard_normal());
        gram_self(&KernelSpec::rbf(1.0), &pts).unwrap()
    }

    fn problem(rng: &mut Rng, m: usize, n: usize, lambda: [f64; 3]) -> ConvexProblem {
        ConvexProblem::new(random_psd(rng, m), random_psd(rng, n), lambda).unwrap()
    }

    /// Kernel-sum form: expands every term as sums of kernel evaluations at the
    /// represented points, independently of the Frobenius form.
    fn expanded_omega(p: &ConvexProblem, v: &ConvexVars) -> f64 {
        let (m, n) = (p.m(), p.n());
        let (mf, nf) = (m as f64, n as f64);
        let kx = p.kx();
        let ky = p.ky();
        // K_X(x_i, B y_j) = (K_Y B K_X)_{ji}, K_Y(F x_i, y_j) = (K_X F K_Y)_{ij}
        let kxb = ky.matmul(&v.b).unwrap().matmul(kx).unwrap();
        let kfy = kx.matmul(&v.f).unwrap().matmul(ky).unwrap();
        let mut c0 = 0.0;
        for i in 0..m {
            for j in 0..n {
                c0 += (kxb[(j, i)] - kfy[(i, j)]).powi(2);
            }
        }
        c0 /= mf * nf;
        // K_X(B y_j, B y_j') = (K_Y B K_X Bᵀ K_Y)_{jj'}, K_Y(F x_i, F x_i') = (K_X F K_Y Fᵀ K_X)_{ii'}
        let kbb = ky.matmul(&v.b).unwrap().matmul(kx).unwrap().matmul(&v.b.transpose()).unwrap().matmul(ky).unwrap();
        let kff = kx.matmul(&v.f).unwrap().matmul(ky).unwrap().matmul(&v.f.transpose()).unwrap().matmul(kx).unwrap();
        let mut sxx = 0.0;
        let mut sbb = 0.0;
        let mut sxb = 0.0;
        let mut sff = 0.0;
        let mut syy = 0.0;
        let mut sfy = 0.0;
        let mut jpp = 0.0;
        let mut jqq = 0.0;
        let mut jpq = 0.0;
        for i in 0..m {
            for i2 in 0..m {
                sxx += kx[(i, i2)];
                sff += kff[(i, i2)];
                jpp += kx[(i, i2)] * kff[(i, i2)];
            }
            for j in 0..n {
                sxb += kxb[(j, i)];
                sfy += kfy[(i, j)];
                jpq += kxb[(j, i)] * kfy[(i, j)];
            }
        }
        for j in 0..n {
            for j2 in 0..n {
                sbb += kbb[(j, j2)];
                syy += ky[(j, j2)];
                jqq += kbb[(j, j2)] * ky[(j, j2)];
            }
        }
        let m1 = jpp / (mf * mf) + jqq / (nf * nf) - 2.0 * jpq / (mf * nf);
        let m2 = sxx / (mf * mf) + sbb / (nf * nf) - 2.0 * sxb / (mf * nf);
        let m3 = sff / (mf * mf) + syy / (nf * nf) - 2.0 * sfy / (mf * nf);
        let [l1, l2, l3] = p.lambda();
        c0 + l1 * m1 + l2 * m2 + l3 * m3
    }

    #[test]
    fn frobenius_form_equals_expanded_form() {
        let mut rng = Rng::new(1);
        for _ in 0..5 {
            let p = problem(&mut rng, 4, 5, [0.7, 1.3, 0.4]);
            let v = ConvexVars::random(4, 5, 1.0, &mut rng);
            let a = p.omega(&v).unwrap().omega;
            let b = expanded_omega(&p, &v);
            assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn scalar_case() {
        let p = ConvexProblem::new(Matrix::from_diag(&[4.0]), Matrix::from_diag(&[9.0]), [1.0, 2.0, 3.0]).unwrap();
        let v = ConvexVars {
            f: Matrix::from_diag(&[0.5]),
            b: Matrix::from_diag(&[0.25]),
        };
        let o = p.omega(&v).unwrap();
        let c0 = (9.0 * 0.25 * 4.0 - 9.0 * 0.5 * 4.0f64).powi(2);
        let m1 = (8.0 * 0.5 * 3.0 - 2.0 * 0.25 * 27.0f64).powi(2);
        let m2 = 4.0 * (1.0 - 0.25 * 9.0f64).powi(2);
        let m3 = 9.0 * (1.0 - 0.5 * 4.0f64).powi(2);
        assert!((o.c0 - c0).abs() < 1e-12);
        assert!((o.m1 - m1).abs() < 1e-12);
        assert!((o.m2 - m2).abs() < 1e-12);
        assert!((o.m3 - m3).abs() < 1e-12);
        assert!((o.omega - (c0 + m1 + 2.0 * m2 + 3.0 * m3)).abs() < 1e-10);
    }

    #[test]
    fn doubly_stochastic_transpose_pair_is_optimal() {
        // With identity kernels, B = Fᵀ and doubly stochastic F cancel every term.
        let p = ConvexProblem::new(Matrix::identity(3), Matrix::identity(3), [2.0, 5.0, 7.0]).unwrap();
        let f = Matrix::from_rows(&[[0.5, 0.3, 0.2], [0.1, 0.6, 0.3], [0.4, 0.1, 0.5]]).unwrap();
        let v = ConvexVars {
            b: f.transpose(),
            f,
        };
        let o = p.omega(&v).unwrap();
        assert!(o.omega < 1e-24, "{o:?}");
        assert!(p.omega_grad(&v).unwrap().norm_squared() < 1e-24);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(2);
        let p = problem(&mut rng, 5, 6, [0.8, 1.5, 0.6]);
        let v = ConvexVars::random(5, 6, 1.0, &mut rng);
        let g = p.omega_grad(&v).unwrap();
        let h = 1e-6;
        for which in 0..2 {
            let (r, c) = if which == 0 { (5, 6) } else { (6, 5) };
            for i in 0..r {
                for j in 0..c {
                    let mut plus = v.clone();
                    let mut minus = v.clone();
                    let (pm, mm, an) = if which == 0 {
                        (&mut plus.f, &mut minus.f, g.f[(i, j)])
                    } else {
                        (&mut plus.b, &mut minus.b, g.b[(i, j)])
                    };
                    pm[(i, j)] += h;
                    mm[(i, j)] -= h;
                    let fd = (p.omega(&plus).unwrap().omega - p.omega(&minus).unwrap().omega) / (2.0 * h);
                    assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn zero_gradient_at_origin_without_marginal_terms() {
        let mut rng = Rng::new(3);
        let p = problem(&mut rng, 4, 3, [1.0, 0.0, 0.0]);
        let g = p.omega_grad(&ConvexVars::zeros(4, 3)).unwrap();
        assert_eq!(g.norm_squared(), 0.0);
    }

    #[test]
    fn gradient_linear_in_lambda() {
        let mut rng = Rng::new(4);
        let base = problem(&mut rng, 4, 5, [0.0, 0.0, 0.0]);
        let v = ConvexVars::random(4, 5, 1.0, &mut rng);
        let g0 = base.omega_grad(&v).unwrap();
        let g1 = base.with_lambda([0.3, 0.6, 0.9]).unwrap().omega_grad(&v).unwrap();
        let g2 = base.with_lambda([0.6, 1.2, 1.8]).unwrap().omega_grad(&v).unwrap();
        // grad(2λ) − 2 grad(λ) = −grad(0), the c0 part.
        let lhs = g2.f.sub(&g1.f.scale(2.0)).unwrap();
        assert!(lhs.add(&g0.f).unwrap().max_abs() < 1e-12);
        let lhs = g2.b.sub(&g1.b.scale(2.0)).unwrap();
        assert!(lhs.add(&g0.b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn solver_reaches_zero_without_penalties() {
        let mut rng = Rng::new(5);
        let p = problem(&mut rng, 4, 4, [0.0, 0.0, 0.0]);
        let init = ConvexVars::random(4, 4, 1.0, &mut rng);
        let s = p.solve(init, 1e-7, 200_000).unwrap();
        assert!(s.breakdown.omega < 1e-10, "{:?}", s.breakdown);
    }

    #[test]
    fn solver_reports_non_convergence() {
        let mut rng = Rng::new(6);
        let p = problem(&mut rng, 4, 4, [1.0, 1.0, 1.0]);
        let init = ConvexVars::random(4, 4, 1.0, &mut rng);
        assert!(matches!(p.solve(init, 1e-12, 2), Err(Error::Convergence { .. })));
    }

    #[test]
    fn shape_errors() {
        let mut rng = Rng::new(7);
        let p = problem(&mut rng, 3, 4, [1.0, 1.0, 1.0]);
        assert!(p.omega(&ConvexVars::zeros(4, 3)).is_err());
        assert!(ConvexProblem::new(Matrix::identity(2), Matrix::identity(2), [-1.0, 0.0, 0.0]).is_err());
    }
}
