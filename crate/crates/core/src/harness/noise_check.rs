use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::config::{build_problem, Built, NoiseConfig, ProblemConfig};
use crate::error::{invalid, Result};
use crate::tensor::{DenseMatrix, DenseVector};
use crate::validator::{
    geometric_scales, radial_matrix_trajectory, radial_vector_trajectory, validate_matrix_noise, validate_vector_noise,
    NoiseFitReport, VectorTarget,
};

/// Input of `validate-noise`: the problem is probed at frozen points
/// x* + s·(x₁ − x*) for `points` geometric scales s in [scale_lo, scale_hi].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NoiseCheckConfig {
    pub problem: ProblemConfig,
    pub noise: NoiseConfig,
    /// Tail index used in the fit; estimated from the samples when absent.
    #[serde(default)]
    pub p: Option<f64>,
    pub draws: usize,
    pub points: usize,
    pub scale_lo: f64,
    pub scale_hi: f64,
    /// Fit one coordinate of a vector problem instead of the whole vector.
    #[serde(default)]
    pub coordinate: Option<usize>,
}

pub fn run_noise_check(cfg: &NoiseCheckConfig, seed: u64) -> Result<NoiseFitReport> {
    let scales = geometric_scales(cfg.scale_lo, cfg.scale_hi, cfg.points)?;
    match build_problem(&cfg.problem, &cfg.noise)? {
        Built::Vector { oracle, x1, .. } => {
            let x_star = oracle
                .problem()
                .x_star
                .clone()
                .ok_or_else(|| invalid("problem has no known minimizer"))?;
            let dir = non_zero_vec(x1.sub(&x_star)?);
            let traj = radial_vector_trajectory(&x_star, &dir, &scales)?;
            let target = cfg.coordinate.map_or(VectorTarget::Global, VectorTarget::Coordinate);
            validate_vector_noise(oracle.as_ref(), &traj, cfg.p, cfg.draws, target, seed)
        }
        Built::Matrix { oracle, x1, .. } => {
            if cfg.coordinate.is_some() {
                return Err(invalid("coordinate applies only to vector problems"));
            }
            let x_star = oracle.problem().x_star().clone();
            let dir = non_zero_mat(x1.sub(&x_star)?);
            let traj = radial_matrix_trajectory(&x_star, &dir, &scales)?;
            validate_matrix_noise(oracle.as_ref(), &traj, cfg.p, cfg.draws, seed)
        }
    }
}

fn non_zero_vec(v: DenseVector) -> DenseVector {
    if v.linf() > 0.0 {
        v
    } else {
        DenseVector::filled(v.len(), 1.0)
    }
}

fn non_zero_mat(x: DenseMatrix) -> DenseMatrix {
    if x.fro() > 0.0 {
        x
    } else {
        let (m, n) = x.shape();
        DenseMatrix::eye(m, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_json;

    #[test]
    fn quadratic_noise_moments_match_generator() {
        // The generator draws nᵢ = ξ(σ₀ + σ₁|∇ᵢf|) with E ξ² = ½.
        let (s0, s1) = (0.5, 2.0);
        let cfg: NoiseCheckConfig = parse_json(
            br#"{
                "problem": {"kind": "quadratic", "d": 4, "l0": 1.0, "x1": 1.0},
                "noise": {"p": 2.0, "family": {"kind": "gaussian"}, "sigma0": 0.5, "sigma1": 2.0},
                "p": 2.0, "draws": 4000, "points": 8, "scale_lo": 0.1, "scale_hi": 10.0,
                "coordinate": 0
            }"#,
        )
        .unwrap();
        let r = run_noise_check(&cfg, 3).unwrap();
        assert_eq!(r.n_points, 8);
        for &(x, y) in &r.points {
            let expect = 0.5 * (s0 + s1 * x.sqrt()).powi(2);
            assert!((y / expect - 1.0).abs() < 0.1, "x {x}: {y} vs {expect}");
        }
        assert!(r.slope <= s1 * s1 && !r.slope_is_zero(), "{r:?}");
    }

    #[test]
    fn coordinate_rejected_for_matrices() {
        let cfg: NoiseCheckConfig = parse_json(
            br#"{
                "problem": {"kind": "matquad", "m": 2, "n": 3, "curvature": 1.0, "x1": 1.0},
                "noise": {"p": 2.0, "family": {"kind": "gaussian"}, "v0_scale": 0.5},
                "draws": 100, "points": 5, "scale_lo": 0.1, "scale_hi": 10.0, "coordinate": 1
            }"#,
        )
        .unwrap();
        assert!(run_noise_check(&cfg, 0).is_err());
    }
}
