//! Ready-made setups for the two small experiments: the segment/circle pair and
//! the correlated Gaussian pair.

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::error::Result;
use crate::kernel::KernelSpec;
use crate::linalg::Matrix;
use crate::maps::{Activation, LayerSpec, MapModel, MapSpec};
use crate::measure::{gen_circle, gen_gaussian, gen_segment_between, DatasetPair};
use crate::objective::{LagrangeWeights, ObjectiveSpec, Penalty};
use crate::rng::Rng;
use crate::trainer::TrainConfig;

pub const SEGMENT_CIRCLE_POINTS: usize = 30;
pub const SEGMENT_CIRCLE_ITERATIONS: usize = 10_000;
pub const SEGMENT_CIRCLE_LEARNING_RATE: f64 = 1e-3;

pub const GAUSSIAN_POINTS: usize = 1000;
pub const GAUSSIAN_CORRELATION: f64 = 0.7;
pub const GAUSSIAN_ITERATIONS: usize = 3000;

/// `n` equally spaced points on the length-2 diagonal segment from
/// `−(1/√2, 1/√2)` to `(1/√2, 1/√2)` as source, and `n` equally spaced points on
/// the unit circle as target.
pub fn segment_circle_data(n: usize) -> Result<DatasetPair> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    Ok(DatasetPair::new(
        gen_segment_between(n, &[-h, -h], &[h, h])?,
        gen_circle(n)?,
    ))
}

/// The RBF `exp(−‖x−y‖²)` as both costs and both kernels.
pub fn segment_circle_objective(lambda: f64) -> ObjectiveSpec {
    let k = KernelSpec::rbf(1.0);
    ObjectiveSpec {
        cost_x: k.clone(),
        cost_y: k.clone(),
        kernel_x: k.clone(),
        kernel_y: k,
        weights: LagrangeWeights::uniform(lambda),
        penalty: Penalty::Mmd,
    }
}

/// `x ↦ tanh(W₂ tanh(W₁x + b₁) + b₂)` with 30 hidden units, between planes.
pub fn segment_circle_map() -> MapSpec {
    MapSpec::Mlp {
        input_dim: 2,
        layers: vec![
            LayerSpec {
                units: 30,
                activation: Activation::Tanh,
            },
            LayerSpec {
                units: 2,
                activation: Activation::Tanh,
            },
        ],
    }
}

pub fn segment_circle_train_config(lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: SEGMENT_CIRCLE_ITERATIONS,
        batch_size: 0,
        optimizer: AdamConfig::new(SEGMENT_CIRCLE_LEARNING_RATE, 0),
        objective: segment_circle_objective(lambda),
        forward_map: segment_circle_map(),
        backward_map: segment_circle_map(),
        seed,
        log_every: 100,
    }
}

/// `[[1, ρ], [ρ, 1]]` with `ρ = 0.7`.
pub fn gaussian_sigma() -> Matrix {
    Matrix::from_rows(&[[1.0, GAUSSIAN_CORRELATION], [GAUSSIAN_CORRELATION, 1.0]]).expect("2x2")
}

/// `Σ⁻¹ = [[1, −ρ], [−ρ, 1]] / (1 − ρ²)`.
pub fn gaussian_sigma_inverse() -> Matrix {
    let r = GAUSSIAN_CORRELATION;
    let d = 1.0 - r * r;
    Matrix::from_rows(&[[1.0 / d, -r / d], [-r / d, 1.0 / d]]).expect("2x2")
}

/// `n` draws from `N(0, I₂)` as source, then `n` draws from `N(0, Σ)` as target.
pub fn gaussian_data(n: usize, seed: u64) -> Result<DatasetPair> {
    let mut rng = Rng::new(seed);
    let source = gen_gaussian(n, &Matrix::identity(2), &mut rng)?;
    let target = gen_gaussian(n, &gaussian_sigma(), &mut rng)?;
    Ok(DatasetPair::new(source, target))
}

/// Inner-product cost on the source, `yᵀΣ⁻¹y'` on the target and `(xᵀy + 1)²`
/// kernels on both sides.
pub fn gaussian_objective(lambda: f64) -> ObjectiveSpec {
    let inv = gaussian_sigma_inverse();
    let k = KernelSpec::polynomial(2, 1.0);
    ObjectiveSpec {
        cost_x: KernelSpec::inner_product(),
        cost_y: KernelSpec::mahalanobis_inner(inv),
        kernel_x: k.clone(),
        kernel_y: k,
        weights: LagrangeWeights::uniform(lambda),
        penalty: Penalty::Mmd,
    }
}

/// Linear maps, λ = 1, Adam at rate 0.1 halved every 500 steps, full batch.
pub fn gaussian_train_config(seed: u64) -> TrainConfig {
    let linear = MapSpec::Linear {
        input_dim: 2,
        output_dim: 2,
        bias: false,
    };
    TrainConfig {
        iterations: GAUSSIAN_ITERATIONS,
        batch_size: 0,
        optimizer: AdamConfig::new(0.1, 500),
        objective: gaussian_objective(1.0),
        forward_map: linear.clone(),
        backward_map: linear,
        seed,
        log_every: 100,
    }
}

/// Frobenius distances of the learned linear pair from the strong-isomorphism
/// relations `FFᵀ = Σ`, `BΣBᵀ = I` and `FB = I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDiagnostics {
    pub ff_minus_sigma: f64,
    pub b_sigma_b_minus_identity: f64,
    pub fb_minus_identity: f64,
}

/// `None` unless both maps are linear without bias.
pub fn gaussian_diagnostics(forward: &MapModel, backward: &MapModel) -> Option<GaussianDiagnostics> {
    let (f, b) = match (forward, backward) {
        (MapModel::Linear { weight: f, bias: None }, MapModel::Linear { weight: b, bias: None }) => (f, b),
        _ => return None,
    };
    if f.shape() != (2, 2) || b.shape() != (2, 2) {
        return None;
    }
    let sigma = gaussian_sigma();
    let id = Matrix::identity(2);
    let ff = f.matmul(&f.transpose()).ok()?;
    let bsb = b.matmul(&sigma).ok()?.matmul(&b.transpose()).ok()?;
    let fb = f.matmul(b).ok()?;
    Some(GaussianDiagnostics {
        ff_minus_sigma: ff.sub(&sigma).ok()?.frobenius_norm(),
        b_sigma_b_minus_identity: bsb.sub(&id).ok()?.frobenius_norm(),
        fb_minus_identity: fb.sub(&id).ok()?.frobenius_norm(),
    })
}
