//! Cost functions and kernels: RBF, polynomial, inner product and the two
//! Mahalanobis forms, with optional affine standardization `(K - m) / sd`.
//!
//! All kinds are symmetric in their arguments, so the derivative with respect to
//! the first argument is obtained by swapping: `∂₁K(x, y) = ∂₂K(y, x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, squared_distance, sym_eig, Matrix, PSD_TOLERANCE};
use crate::measure::EmpiricalMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelKind {
    /// `exp(-‖x - y‖² / bandwidth)`.
    Rbf { bandwidth: f64 },
    /// `(xᵀy + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
    /// `xᵀy`.
    InnerProduct,
    /// `sqrt((x - y)ᵀ M (x - y))` with `M = inverse`.
    Mahalanobis { inverse: Matrix },
    /// `xᵀ M y` with `M = inverse`.
    MahalanobisInner { inverse: Matrix },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Standardization {
    pub shift: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

/// Spread estimator used by [`fit_standardization_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    /// Divide by the number of values.
    #[default]
    Population,
    /// Divide by the number of values minus one.
    Sample,
}

impl From<KernelKind> for KernelSpec {
    fn from(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            standardization: None,
        }
    }
}

impl KernelSpec {
    pub fn rbf(bandwidth: f64) -> Self {
        KernelKind::Rbf { bandwidth }.into()
    }

    pub fn polynomial(degree: u32, offset: f64) -> Self {
        KernelKind::Polynomial { degree, offset }.into()
    }

    pub fn inner_product() -> Self {
        KernelKind::InnerProduct.into()
    }

    pub fn mahalanobis(inverse: Matrix) -> Self {
        KernelKind::Mahalanobis { inverse }.into()
    }

    pub fn mahalanobis_inner(inverse: Matrix) -> Self {
        KernelKind::MahalanobisInner { inverse }.into()
    }

    pub fn with_standardization(mut self, shift: f64, scale: f64) -> Self {
        self.standardization = Some(Standardization { shift, scale });
        self
    }

    /// Checks the parameter invariants. Called by every constructor path that
    /// accepts user input (config loading, objective construction).
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            KernelKind::Rbf { bandwidth } => {
                if !(bandwidth.is_finite() && *bandwidth > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "rbf bandwidth must be positive, got {bandwidth}"
                    )));
                }
            }
            KernelKind::Polynomial { offset, .. } => {
                if !offset.is_finite() {
                    return Err(Error::InvalidParameter("polynomial offset must be finite".into()));
                }
            }
            KernelKind::InnerProduct => {}
            KernelKind::Mahalanobis { inverse } | KernelKind::MahalanobisInner { inverse } => {
                let eig = sym_eig(inverse)?;
                let min = eig.values.last().copied().unwrap_or(0.0);
                if min < -PSD_TOLERANCE * eig.operator_norm() {
                    return Err(Error::NotPsd {
                        min_eigenvalue: min,
                    });
                }
            }
        }
        if let Some(s) = self.standardization {
            if !(s.scale.is_finite() && s.scale > 0.0) || !s.shift.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "standardization needs finite shift and positive scale, got ({}, {})",
                    s.shift, s.scale
                )));
            }
        }
        Ok(())
    }

    /// Input dimension fixed by the spec, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            KernelKind::Mahalanobis { inverse } | KernelKind::MahalanobisInner { inverse } => {
                Some(inverse.rows())
            }
            _ => None,
        }
    }

    /// Errors unless points of dimension `dim` are admissible.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self.fixed_dim() {
            Some(d) if d != dim => Err(Error::dim(format!(
                "kernel expects dimension {d}, points have dimension {dim}"
            ))),
            _ => Ok(()),
        }
    }

    /// Same kernel without standardization.
    pub fn raw(&self) -> KernelSpec {
        KernelSpec {
            kind: self.kind.clone(),
            standardization: None,
        }
    }

    #[inline]
    fn standardize(&self, v: f64) -> f64 {
        match self.standardization {
            Some(s) => (v - s.shift) / s.scale,
            None => v,
        }
    }

    #[inline]
    fn grad_scale(&self) -> f64 {
        self.standardization.map_or(1.0, |s| 1.0 / s.scale)
    }

    /// Kernel value without shape checks. Callers guarantee equal lengths.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let raw = match &self.kind {
            KernelKind::Rbf { bandwidth } => (-squared_distance(x, y) / bandwidth).exp(),
            KernelKind::Polynomial { degree, offset } => (dot(x, y) + offset).powi(*degree as i32),
            KernelKind::InnerProduct => dot(x, y),
            KernelKind::Mahalanobis { inverse } => quad_diff(inverse, x, y).max(0.0).sqrt(),
            KernelKind::MahalanobisInner { inverse } => bilinear(inverse, x, y),
        };
        self.standardize(raw)
    }

    /// Returns `K(x, y)` and adds `coef · ∂K/∂y` into `grad_y`.
    ///
    /// For the Mahalanobis distance at `x = y` the derivative is taken to be 0.
    pub(crate) fn value_and_grad_y(&self, x: &[f64], y: &[f64], coef: f64, grad_y: &mut [f64]) -> f64 {
        let g = coef * self.grad_scale();
        let raw = match &self.kind {
            KernelKind::Rbf { bandwidth } => {
                let k = (-squared_distance(x, y) / bandwidth).exp();
                let c = g * k * 2.0 / bandwidth;
                for ((o, xi), yi) in grad_y.iter_mut().zip(x).zip(y) {
                    *o += c * (xi - yi);
                }
                k
            }
            KernelKind::Polynomial { degree, offset } => {
                let base = dot(x, y) + offset;
                let p = *degree as i32;
                if p > 0 {
                    let c = g * f64::from(*degree) * base.powi(p - 1);
                    for (o, xi) in grad_y.iter_mut().zip(x) {
                        *o += c * xi;
                    }
                }
                base.powi(p)
            }
            KernelKind::InnerProduct => {
                for (o, xi) in grad_y.iter_mut().zip(x) {
                    *o += g * xi;
                }
                dot(x, y)
            }
            KernelKind::Mahalanobis { inverse } => {
                let r = quad_diff(inverse, x, y).max(0.0).sqrt();
                if r > 0.0 {
                    for (a, o) in grad_y.iter_mut().enumerate() {
                        let row = inverse.row(a);
                        let md: f64 = row.iter().zip(x.iter().zip(y)).map(|(m, (xi, yi))| m * (xi - yi)).sum();
                        *o -= g * md / r;
                    }
                }
                r
            }
            KernelKind::MahalanobisInner { inverse } => {
                // M is symmetric, so ∂(xᵀMy)/∂y = Mx.
                for (a, o) in grad_y.iter_mut().enumerate() {
                    *o += g * dot(inverse.row(a), x);
                }
                bilinear(inverse, x, y)
            }
        };
        self.standardize(raw)
    }
}

fn quad_diff(m: &Matrix, x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    bilinear(m, &d, &d)
}

fn bilinear(m: &Matrix, x: &[f64], y: &[f64]) -> f64 {
    x.iter().enumerate().map(|(a, xa)| xa * dot(m.row(a), y)).sum()
}

fn check_pair(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "kernel arguments have dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    spec.check_dim(x.len())
}

/// Kernel value, standardized when the spec carries a standardization.
pub fn eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(spec, x, y)?;
    Ok(spec.eval_unchecked(x, y))
}

/// Value and both partial derivatives `(K, ∂K/∂x, ∂K/∂y)`.
pub fn value_and_grads(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_pair(spec, x, y)?;
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; y.len()];
    let v = spec.value_and_grad_y(x, y, 1.0, &mut gy);
    spec.value_and_grad_y(y, x, 1.0, &mut gx);
    Ok((v, gx, gy))
}

/// Matrix of `K(a_i, b_j)`.
pub fn gram(spec: &KernelSpec, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<Matrix> {
    gram_points(spec, a.points(), b.points())
}

/// [`gram`] on raw point matrices (rows are points).
pub fn gram_points(spec: &KernelSpec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim(format!(
            "gram of clouds with dimensions {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    spec.check_dim(a.cols())?;
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        spec.eval_unchecked(a.row(i), b.row(j))
    }))
}

/// Gram of a cloud with itself; only the upper triangle is evaluated.
pub fn gram_self(spec: &KernelSpec, a: &Matrix) -> Result<Matrix> {
    spec.check_dim(a.cols())?;
    let n = a.rows();
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(a.row(i), a.row(j));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Median of a non-empty slice; even sizes average the two middle order statistics.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standardization fitted on all `n²` pairwise raw values of `a` (self-pairs
/// included): median shift and population standard deviation scale.
pub fn fit_standardization(spec: &KernelSpec, a: &EmpiricalMeasure) -> Result<KernelSpec> {
    fit_standardization_with(spec, a, Spread::Population)
}

pub fn fit_standardization_with(
    spec: &KernelSpec,
    a: &EmpiricalMeasure,
    spread: Spread,
) -> Result<KernelSpec> {
    if a.len() < 2 {
        return Err(Error::Size(format!(
            "standardization needs at least 2 points, got {}",
            a.len()
        )));
    }
    let raw = spec.raw();
    let values = gram_self(&raw, a.points())?.into_vec();
    let n = values.len() as f64;
    let mean = crate::linalg::pairwise_sum(&values) / n;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let denom = match spread {
        Spread::Population => n,
        Spread::Sample => n - 1.0,
    };
    let sd = (crate::linalg::pairwise_sum(&sq) / denom).sqrt();
    let magnitude = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sd > 4.0 * f64::EPSILON * magnitude) {
        return Err(Error::ZeroSpread);
    }
    Ok(raw.with_standardization(median(&values), sd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_points(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        Matrix::from_fn(n, d, |_, _| rng.standard_normal())
    }

    fn all_specs(rng: &mut Rng, d: usize) -> Vec<KernelSpec> {
        let g = random_points(rng, d, d);
        let m = g.transpose().matmul(&g).unwrap().add(&Matrix::identity(d)).unwrap();
        vec![
            KernelSpec::rbf(1.7),
            KernelSpec::polynomial(2, 1.0),
            KernelSpec::polynomial(3, 0.5),
            KernelSpec::inner_product(),
            KernelSpec::mahalanobis(m.clone()),
            KernelSpec::mahalanobis_inner(m),
            KernelSpec::rbf(0.8).with_standardization(0.3, 0.7),
        ]
    }

    #[test]
    fn spec_examples() {
        let r = KernelSpec::rbf(2.0);
        assert_eq!(eval(&r, &[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        assert!((eval(&r, &[0.0, 0.0], &[1.0, 1.0]).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let p = KernelSpec::polynomial(2, 1.0);
        assert_eq!(eval(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(eval(&r, &[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
        let m = KernelSpec::mahalanobis_inner(Matrix::identity(3));
        assert!(matches!(eval(&m, &[1.0, 2.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn standardized_eval() {
        let s = KernelSpec::rbf(2.0).with_standardization(0.5, 0.25);
        assert!((eval(&s, &[0.0], &[0.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_identity_is_euclidean() {
        let s = KernelSpec::mahalanobis(Matrix::identity(2));
        assert!((eval(&s, &[0.0, 0.0], &[3.0, 4.0]).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(KernelSpec::rbf(0.0).validate().is_err());
        assert!(KernelSpec::rbf(1.0).with_standardization(0.0, 0.0).validate().is_err());
        assert!(KernelSpec::mahalanobis(Matrix::from_diag(&[1.0, -1.0])).validate().is_err());
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(KernelSpec::mahalanobis(asym).validate().is_err());
        assert!(KernelSpec::polynomial(2, 1.0).validate().is_ok());
    }

    #[test]
    fn gram_one_point_and_self() {
        let a = EmpiricalMeasure::from_rows(&[[0.2, -0.1]]).unwrap();
        let b = EmpiricalMeasure::from_rows(&[[1.0, 0.5]]).unwrap();
        let s = KernelSpec::rbf(2.0);
        let g = gram(&s, &a, &b).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], eval(&s, a.point(0), b.point(0)).unwrap());

        let mut rng = Rng::new(4);
        let c = EmpiricalMeasure::new(random_points(&mut rng, 8, 3)).unwrap();
        let g = gram(&s, &c, &c).unwrap();
        for i in 0..8 {
            assert_eq!(g[(i, i)], 1.0);
            for j in 0..8 {
                assert_eq!(g[(i, j)], g[(j, i)]);
            }
        }
    }

    #[test]
    fn cross_gram_matches_loop() {
        let mut rng = Rng::new(11);
        let a = EmpiricalMeasure::new(random_points(&mut rng, 5, 3)).unwrap();
        let b = EmpiricalMeasure::new(random_points(&mut rng, 7, 3)).unwrap();
        for spec in all_specs(&mut rng, 3) {
            let g = gram(&spec, &a, &b).unwrap();
            for i in 0..5 {
                for j in 0..7 {
                    // Independent oracle: plain formula per kind.
                    let (x, y) = (a.point(i), b.point(j));
                    let raw = match &spec.kind {
                        KernelKind::Rbf { bandwidth } => {
                            let mut s = 0.0;
                            for k in 0..3 {
                                s += (x[k] - y[k]) * (x[k] - y[k]);
                            }
                            (-s / bandwidth).exp()
                        }
                        KernelKind::Polynomial { degree, offset } => {
                            let mut s = *offset;
                            for k in 0..3 {
                                s += x[k] * y[k];
                            }
                            s.powi(*degree as i32)
                        }
                        KernelKind::InnerProduct => (0..3).map(|k| x[k] * y[k]).sum(),
                        KernelKind::Mahalanobis { inverse } => {
                            let mut s = 0.0;
                            for p in 0..3 {
                                for q in 0..3 {
                                    s += (x[p] - y[p]) * inverse[(p, q)] * (x[q] - y[q]);
                                }
                            }
                            s.sqrt()
                        }
                        KernelKind::MahalanobisInner { inverse } => {
                            let mut s = 0.0;
                            for p in 0..3 {
                                for q in 0..3 {
                                    s += x[p] * inverse[(p, q)] * y[q];
                                }
                            }
                            s
                        }
                    };
                    let want = match spec.standardization {
                        Some(s) => (raw - s.shift) / s.scale,
                        None => raw,
                    };
                    assert!((g[(i, j)] - want).abs() <= 1e-15 * want.abs().max(1.0), "{spec:?}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(21);
        for spec in all_specs(&mut rng, 3) {
            for _ in 0..5 {
                let x: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
                let y: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
                let (v, gx, gy) = value_and_grads(&spec, &x, &y).unwrap();
                assert_eq!(v, eval(&spec, &x, &y).unwrap());
                let h = 1e-6;
                for k in 0..3 {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[k] += h;
                    ym[k] -= h;
                    let fd = (eval(&spec, &x, &yp).unwrap() - eval(&spec, &x, &ym).unwrap()) / (2.0 * h);
                    assert!((fd - gy[k]).abs() <= 1e-6 * fd.abs().max(1.0), "{spec:?} {fd} {}", gy[k]);
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (eval(&spec, &xp, &y).unwrap() - eval(&spec, &xm, &y).unwrap()) / (2.0 * h);
                    assert!((fd - gx[k]).abs() <= 1e-6 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn mahalanobis_kink_gradient_is_zero() {
        let s = KernelSpec::mahalanobis(Matrix::identity(2));
        let (v, gx, gy) = value_and_grads(&s, &[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(gx, vec![0.0, 0.0]);
        assert_eq!(gy, vec![0.0, 0.0]);
    }

    #[test]
    fn standardization_two_points() {
        let a = EmpiricalMeasure::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let spec = KernelSpec::rbf(1.0);
        let c = (-1f64).exp();
        let fitted = fit_standardization(&spec, &a).unwrap();
        let s = fitted.standardization.unwrap();
        assert!((s.shift - (c + 1.0) / 2.0).abs() < 1e-15);
        assert!((s.scale - (1.0 - c) / 2.0).abs() < 1e-15);
        let sample = fit_standardization_with(&spec, &a, Spread::Sample).unwrap();
        assert!(sample.standardization.unwrap().scale > s.scale);
    }

    #[test]
    fn standardization_normalizes_fitting_cloud() {
        let mut rng = Rng::new(31);
        let a = EmpiricalMeasure::new(random_points(&mut rng, 10, 2)).unwrap();
        let fitted = fit_standardization(&KernelSpec::rbf(1.0), &a).unwrap();
        let g = gram(&fitted, &a, &a).unwrap().into_vec();
        assert!(median(&g).abs() < 1e-12);
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        let sd = (g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardization_errors() {
        let same = EmpiricalMeasure::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert!(matches!(
            fit_standardization(&KernelSpec::rbf(1.0), &same),
            Err(Error::ZeroSpread)
        ));
        let one = EmpiricalMeasure::from_rows(&[[1.0]]).unwrap();
        assert!(matches!(fit_standardization(&KernelSpec::rbf(1.0), &one), Err(Error::Size(_))));
    }

    #[test]
    fn psd_kinds_give_psd_grams() {
        let mut rng = Rng::new(41);
        let pts = random_points(&mut rng, 12, 3);
        for spec in all_specs(&mut rng, 3) {
            if matches!(spec.kind, KernelKind::Mahalanobis { .. }) {
                continue;
            }
            let g = gram_self(&spec, &pts).unwrap();
            let eig = sym_eig(&g).unwrap();
            let min = *eig.values.last().unwrap();
            // Standardization shifts by a constant: not PSD in general, skip it here.
            if spec.standardization.is_none() {
                assert!(min >= -1e-8 * eig.operator_norm().max(1.0), "{spec:?} {min}");
            }
        }
    }

    #[test]
    fn serde_round_trip() {
        let s = KernelSpec::rbf(2.0).with_standardization(0.1, 0.2);
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<KernelSpec>(&j).unwrap(), s);
        let bad = r#"{"kind":{"type":"rbf","bandwidth":1,"extra":2}}"#;
        assert!(serde_json::from_str::<KernelSpec>(bad).is_err());
    }
}
