//! Theorem-prescribed batch size, momentum and step size for SignSGD, Lion,
//! Muon and Muonlight, plus the density-ratio comparison against the
//! normalized baselines.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optim::{lambda_max, HyperParams};
use crate::tensor::{density_phi, density_psi, DenseMatrix, DenseVector};

/// Problem constants. For vector methods the norms are ‖l₀‖₁, ‖l₁‖∞, ‖σ₀‖₁,
/// ‖σ₁‖∞; for matrix methods ‖L₀‖_*, ‖L₁‖op, ‖V₀‖_*, ‖V₁‖op.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct TheoryInputs {
    pub delta_f: f64,
    pub l0_norm: f64,
    pub l1_norm: f64,
    pub sigma0_norm: f64,
    pub sigma1_norm: f64,
    pub p: f64,
    #[serde(rename = "T")]
    pub t: usize,
}

impl TheoryInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p <= 2.0) {
            return Err(invalid(format!("p must lie in (1, 2], got {}", self.p)));
        }
        for (name, v) in [
            ("delta_f", self.delta_f),
            ("l0_norm", self.l0_norm),
            ("l1_norm", self.l1_norm),
            ("sigma0_norm", self.sigma0_norm),
            ("sigma1_norm", self.sigma1_norm),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.l0_norm == 0.0 {
            return Err(invalid("l0_norm must be positive"));
        }
        if self.t == 0 {
            return Err(invalid("T must be at least 1"));
        }
        Ok(())
    }
}

/// (B, β, η) for SignSGD and Muon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumParams {
    pub batch: usize,
    pub beta: f64,
    pub eta: f64,
}

impl MomentumParams {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            beta: self.beta,
            batch: self.batch,
            ..HyperParams::new(self.eta)
        }
    }
}

/// (B, β₂, η) for Lion and Muonlight together with the admissible β₁
/// interval and weight-decay ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub batch: usize,
    pub beta2: f64,
    pub eta: f64,
    pub beta1_range: (f64, f64),
    pub lambda_max: f64,
}

impl DecayParams {
    /// Hyperparameters with the chosen β₁ and λ, rejected if outside the
    /// admissible ranges.
    pub fn hyper(&self, beta1: f64, lambda: f64) -> Result<HyperParams> {
        let (lo, hi) = self.beta1_range;
        if !(lo..=hi).contains(&beta1) {
            return Err(invalid(format!("beta1 = {beta1} outside [{lo}, {hi}]")));
        }
        if !(0.0..=self.lambda_max).contains(&lambda) {
            return Err(invalid(format!("lambda = {lambda} outside [0, {}]", self.lambda_max)));
        }
        Ok(HyperParams {
            beta1,
            beta2: self.beta2,
            lambda,
            batch: self.batch,
            ..HyperParams::new(self.eta)
        })
    }
}

fn batch_size(c: f64, sigma1: f64, p: f64) -> Result<usize> {
    let raw = (c * sigma1).powf(p / (p - 1.0)).ceil();
    if !raw.is_finite() || raw > u32::MAX as f64 {
        return Err(invalid(format!("prescribed batch size {raw:e} is not representable")));
    }
    Ok((raw as usize).max(1))
}

fn momentum(inp: &TheoryInputs, batch: usize) -> f64 {
    if inp.sigma0_norm == 0.0 {
        return 0.0;
    }
    let p = inp.p;
    let ratio = inp.delta_f * inp.l0_norm / (inp.sigma0_norm * inp.sigma0_norm * inp.t as f64);
    let shrink = (batch as f64).powf((2.0 * p - 2.0) / (3.0 * p - 2.0)) * ratio.powf(p / (3.0 * p - 2.0));
    (1.0 - shrink).max(0.0)
}

/// η = min(√(a·Δ(1−β)/(b·l₀·T)), c·(1−β)/(e·l₁)); the second branch is
/// inactive when l₁ = 0.
fn step_size(inp: &TheoryInputs, beta: f64, sqrt_num: f64, sqrt_den: f64, lin_num: f64, lin_den: f64) -> f64 {
    let first = (sqrt_num * inp.delta_f * (1.0 - beta) / (sqrt_den * inp.l0_norm * inp.t as f64)).sqrt();
    let second = if inp.l1_norm == 0.0 {
        f64::INFINITY
    } else {
        lin_num * (1.0 - beta) / (lin_den * inp.l1_norm)
    };
    first.min(second)
}

pub fn signsgd_params(inp: &TheoryInputs) -> Result<MomentumParams> {
    inp.validate()?;
    let batch = batch_size(32.0 * std::f64::consts::SQRT_2, inp.sigma1_norm, inp.p)?;
    let beta = momentum(inp, batch);
    let eta = step_size(inp, beta, 2.0, 9.0, 1.0, 32.0);
    Ok(MomentumParams { batch, beta, eta })
}

pub fn lion_params(inp: &TheoryInputs) -> Result<DecayParams> {
    inp.validate()?;
    let batch = batch_size(72.0 * std::f64::consts::SQRT_2, inp.sigma1_norm, inp.p)?;
    let beta2 = momentum(inp, batch);
    let eta = step_size(inp, beta2, 8.0, 33.0, 1.0, 120.0);
    let lo = 1.0 - (1.0 - beta2).powf((inp.p - 1.0) / inp.p);
    Ok(DecayParams {
        batch,
        beta2,
        eta,
        beta1_range: (lo, 1.0),
        lambda_max: lambda_max(eta, inp.t),
    })
}

pub fn muon_params(inp: &TheoryInputs) -> Result<MomentumParams> {
    inp.validate()?;
    let batch = batch_size(32.0 * std::f64::consts::SQRT_2, inp.sigma1_norm, inp.p)?;
    let beta = momentum(inp, batch);
    let eta = step_size(inp, beta, 2.0, 5.0, 1.0, 16.0);
    Ok(MomentumParams { batch, beta, eta })
}

pub fn muonlight_params(inp: &TheoryInputs) -> Result<DecayParams> {
    inp.validate()?;
    let batch = batch_size(2979.0, inp.sigma1_norm, inp.p)?;
    let beta2 = momentum(inp, batch);
    let eta = step_size(inp, beta2, 4.0, 15.0, 3.0, 625.0);
    Ok(DecayParams {
        batch,
        beta2,
        eta,
        beta1_range: ((beta2 - 0.15).max(0.0), (beta2 + 0.15).min(1.0)),
        lambda_max: lambda_max(eta, inp.t),
    })
}

/// Exponent (p−1)/(3p−2) of T in the convergence bound.
pub fn predicted_rate_exponent(p: f64) -> f64 {
    (p - 1.0) / (3.0 * p - 2.0)
}

/// Complexity of the sign method relative to its normalized counterpart:
/// R = R₁·R₂^{p/(2(p−1))} with R₁ = φ∞(l₀)/φ₂²(∇_T), R₂ = φ₂²(σ₀)/φ₂²(∇_T).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRatios {
    pub r: f64,
    pub r1: f64,
    pub r2: f64,
    /// min over the trajectory of φ₂ (or ψ₂) of the gradient.
    pub traj_density: f64,
}

pub fn complexity_ratios_from_densities(
    curvature_density_inf: f64,
    noise_density_2: f64,
    traj_density_2: f64,
    p: f64,
) -> Result<ComplexityRatios> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid(format!("p must lie in (1, 2], got {p}")));
    }
    let t2 = traj_density_2 * traj_density_2;
    let r1 = curvature_density_inf / t2;
    let r2 = noise_density_2 * noise_density_2 / t2;
    Ok(ComplexityRatios {
        r: r1 * r2.powf(p / (2.0 * (p - 1.0))),
        r1,
        r2,
        traj_density: traj_density_2,
    })
}

fn min_density<T>(traj: &[T], density: impl Fn(&T) -> Result<f64>) -> Result<f64> {
    if traj.is_empty() {
        return Err(invalid("empty gradient trajectory"));
    }
    traj.iter()
        .try_fold(f64::INFINITY, |acc, g| Ok::<_, Error>(acc.min(density(g)?)))
}

/// Vector ratios from l₀, σ₀ and the gradients along a trajectory.
pub fn complexity_ratios(
    l0: &DenseVector,
    sigma0: &DenseVector,
    grads: &[DenseVector],
    p: f64,
) -> Result<ComplexityRatios> {
    let traj = min_density(grads, |g| density_phi(g, 2.0))?;
    complexity_ratios_from_densities(density_phi(l0, f64::INFINITY)?, density_phi(sigma0, 2.0)?, traj, p)
}

/// Matrix ratios with ψ densities of L₀, V₀ and the gradient trajectory.
pub fn complexity_ratios_matrix(
    l0: &DenseMatrix,
    v0: &DenseMatrix,
    grads: &[DenseMatrix],
    p: f64,
) -> Result<ComplexityRatios> {
    let traj = min_density(grads, |g| density_psi(g, 2.0))?;
    complexity_ratios_from_densities(density_psi(l0, f64::INFINITY)?, density_psi(v0, 2.0)?, traj, p)
}
