use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Pareto, StandardNormal, StudentT};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Result};

/// Symmetric base distribution for the noise multiplier ξ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseFamily {
    Gaussian,
    /// Symmetric α-stable with characteristic function exp(−|t|^α).
    AlphaStable {
        alpha: f64,
    },
    /// Random sign times (Pareto(α, x_min = 1) − 1).
    ParetoSymmetric {
        alpha: f64,
    },
    StudentT {
        nu: f64,
    },
}

impl NoiseFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseFamily::Gaussian => Ok(()),
            NoiseFamily::AlphaStable { alpha } if alpha > 0.0 && alpha <= 2.0 => Ok(()),
            NoiseFamily::AlphaStable { alpha } => Err(invalid(format!("stable index must lie in (0, 2], got {alpha}"))),
            NoiseFamily::ParetoSymmetric { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            NoiseFamily::ParetoSymmetric { alpha } => {
                Err(invalid(format!("Pareto shape must be positive, got {alpha}")))
            }
            NoiseFamily::StudentT { nu } if nu > 0.0 && nu.is_finite() => Ok(()),
            NoiseFamily::StudentT { nu } => Err(invalid(format!(
                "Student-t degrees of freedom must be positive, got {nu}"
            ))),
        }
    }

    /// Whether E|raw|^p is finite.
    pub fn has_moment(&self, p: f64) -> bool {
        match *self {
            NoiseFamily::Gaussian => true,
            NoiseFamily::AlphaStable { alpha } => alpha == 2.0 || p < alpha,
            NoiseFamily::ParetoSymmetric { alpha } => p < alpha,
            NoiseFamily::StudentT { nu } => p < nu,
        }
    }

    /// Closed-form E|raw|^p for the unscaled draw.
    pub fn abs_moment(&self, p: f64) -> Result<f64> {
        self.validate()?;
        if !(p > 0.0) {
            return Err(invalid(format!("moment order must be positive, got {p}")));
        }
        if !self.has_moment(p) {
            return Err(invalid(format!("{self:?} has no finite moment of order {p}")));
        }
        let sqrt_pi = PI.sqrt();
        Ok(match *self {
            NoiseFamily::Gaussian => 2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / sqrt_pi,
            NoiseFamily::AlphaStable { alpha: 2.0 } => {
                // Gaussian with variance 2.
                2f64.powf(p) * gamma((p + 1.0) / 2.0) / sqrt_pi
            }
            NoiseFamily::AlphaStable { alpha } => {
                2f64.powf(p) * gamma((1.0 + p) / 2.0) * gamma(1.0 - p / alpha) / (sqrt_pi * gamma(1.0 - p / 2.0))
            }
            NoiseFamily::ParetoSymmetric { alpha } => alpha * gamma(p + 1.0) * gamma(alpha - p) / gamma(alpha + 1.0),
            NoiseFamily::StudentT { nu } => {
                nu.powf(p / 2.0) * gamma((p + 1.0) / 2.0) * gamma((nu - p) / 2.0) / (sqrt_pi * gamma(nu / 2.0))
            }
        })
    }

    /// Multiplier c with E|c·raw|^p = 1/2.
    pub fn unit_scale(&self, p: f64) -> Result<f64> {
        Ok((2.0 * self.abs_moment(p)?).powf(-1.0 / p))
    }

    /// One unscaled draw. Non-finite draws (possible in the far tails of the
    /// CMS transform) are redrawn.
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = match *self {
                NoiseFamily::Gaussian => StandardNormal.sample(rng),
                NoiseFamily::AlphaStable { alpha } => cms(alpha, rng),
                NoiseFamily::ParetoSymmetric { alpha } => {
                    let mag: f64 = Pareto::new(1.0, alpha).expect("validated shape").sample(rng) - 1.0;
                    if rng.random::<bool>() {
                        mag
                    } else {
                        -mag
                    }
                }
                NoiseFamily::StudentT { nu } => StudentT::new(nu).expect("validated dof").sample(rng),
            };
            if x.is_finite() {
                return x;
            }
        }
    }
}

/// Chambers–Mallows–Stuck transform for the standard symmetric α-stable law.
fn cms<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let v: f64 = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
    if alpha == 1.0 {
        return v.tan();
    }
    let w: f64 = Exp1.sample(rng);
    (alpha * v).sin() / v.cos().powf(1.0 / alpha) * ((v - alpha * v).cos() / w).powf((1.0 - alpha) / alpha)
}

/// n i.i.d. symmetric α-stable draws with the given scale. For α = 2 these
/// are Gaussian with variance 2·scale².
pub fn sample_alpha_stable<R: Rng + ?Sized>(alpha: f64, scale: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    let family = NoiseFamily::AlphaStable { alpha };
    family.validate()?;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid(format!("stable scale must be positive, got {scale}")));
    }
    Ok((0..n).map(|_| scale * family.sample_raw(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;

    fn mean_abs_pow(xs: &[f64], p: f64) -> f64 {
        xs.iter().map(|x| x.abs().powf(p)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn stable_two_is_gaussian_variance_two() {
        let mut rng = RngStream::new(1, 0).rng();
        let xs = sample_alpha_stable(2.0, 1.0 / 2f64.sqrt(), 1_000_000, &mut rng).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }

    #[test]
    fn stable_moment_scan() {
        // Below the tail index the sample moment settles; above it keeps growing.
        let mut rng = RngStream::new(2, 0).rng();
        let xs = sample_alpha_stable(1.5, 1.0, 1_000_000, &mut rng).unwrap();
        let exact = NoiseFamily::AlphaStable { alpha: 1.5 }.abs_moment(1.4).unwrap();
        let m_small = mean_abs_pow(&xs[..10_000], 1.6);
        let m_large = mean_abs_pow(&xs, 1.6);
        let finite = mean_abs_pow(&xs, 1.4);
        // |X|^1.4 itself has tail index ~1.07, so the sample mean converges
        // slowly and from below; only the order of magnitude is meaningful.
        assert!(finite > 0.5 * exact && finite < 1.5 * exact, "{finite} vs {exact}");
        assert!(m_large > m_small, "{m_large} <= {m_small}");
    }

    #[test]
    fn closed_form_moments_match_monte_carlo() {
        let cases = [
            (NoiseFamily::Gaussian, 1.5),
            (NoiseFamily::AlphaStable { alpha: 1.8 }, 0.8),
            (NoiseFamily::AlphaStable { alpha: 1.0 }, 0.4),
            (NoiseFamily::ParetoSymmetric { alpha: 3.0 }, 1.0),
            (NoiseFamily::StudentT { nu: 5.0 }, 2.0),
        ];
        for (k, (fam, p)) in cases.into_iter().enumerate() {
            let mut rng = RngStream::new(10 + k as u64, 0).rng();
            let xs: Vec<f64> = (0..400_000).map(|_| fam.sample_raw(&mut rng)).collect();
            let emp = mean_abs_pow(&xs, p);
            let exact = fam.abs_moment(p).unwrap();
            assert!((emp / exact - 1.0).abs() < 0.05, "{fam:?}: {emp} vs {exact}");
        }
    }

    #[test]
    fn unit_scale_halves_the_moment() {
        let fam = NoiseFamily::StudentT { nu: 4.0 };
        let c = fam.unit_scale(1.5).unwrap();
        assert!((c.powf(1.5) * fam.abs_moment(1.5).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_out_of_range() {
        let mut rng = RngStream::new(0, 0).rng();
        assert!(sample_alpha_stable(2.5, 1.0, 3, &mut rng).is_err());
        assert!(sample_alpha_stable(0.0, 1.0, 3, &mut rng).is_err());
        assert!(NoiseFamily::AlphaStable { alpha: 1.5 }.abs_moment(1.6).is_err());
        assert!(NoiseFamily::ParetoSymmetric { alpha: 1.2 }.abs_moment(1.5).is_err());
    }

    #[test]
    fn deterministic_per_stream() {
        let a = sample_alpha_stable(1.3, 1.0, 100, &mut RngStream::new(5, 9).rng()).unwrap();
        let b = sample_alpha_stable(1.3, 1.0, 100, &mut RngStream::new(5, 9).rng()).unwrap();
        let c = sample_alpha_stable(1.3, 1.0, 100, &mut RngStream::new(5, 10).rng()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
