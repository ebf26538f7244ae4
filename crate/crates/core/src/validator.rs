//! Empirical check of the heavy-tailed noise model: at frozen points x_k,
//! estimate the p-th noise moment and regress it on the p-th power of the
//! gradient norm. A straight line with nonnegative intercept σ₀ᵖ and slope
//! σ₁ᵖ that dominates the data supports the assumption.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{estimate_tail_index_auto, RngStream, MIN_TAIL_SAMPLES};
use crate::problems::{MatrixOracle, VectorOracle};
use crate::tensor::{pd_inverse, psd_sqrt, DenseMatrix, DenseVector};

/// Required ratio between the largest and smallest regressor value.
pub const MIN_SPREAD: f64 = 10.0;

const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseFitReport {
    pub p_hat: f64,
    /// Estimate of σ₀ᵖ (vector) or ‖V₀‖_*ᵖ (matrix), clamped at 0.
    pub intercept: f64,
    /// Estimate of σ₁ᵖ (vector) or ‖V₁‖opᵖ (matrix), clamped at 0.
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub intercept_clamped: bool,
    pub slope_clamped: bool,
    pub r_squared: f64,
    pub n_points: usize,
    /// Fraction of points whose moment estimate exceeds the fitted line by
    /// more than three of its own standard errors.
    pub violation_fraction: f64,
    /// (x, y) pairs in trajectory order.
    pub points: Vec<(f64, f64)>,
}

impl NoiseFitReport {
    pub fn sigma0_hat(&self) -> f64 {
        self.intercept.powf(1.0 / self.p_hat)
    }

    pub fn sigma1_hat(&self) -> f64 {
        self.slope.powf(1.0 / self.p_hat)
    }

    /// The fitted slope is not significantly positive.
    pub fn slope_is_zero(&self) -> bool {
        self.slope - 3.0 * self.slope_se <= 0.0
    }

    pub fn points_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.points {
            out.push_str(&format!("{x:e},{y:e}\n"));
        }
        out
    }
}

/// Ordinary least squares y = a + b·x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub r_squared: f64,
}

pub fn ols(points: &[(f64, f64)]) -> Result<LineFit> {
    let n = points.len();
    if n < 3 {
        return Err(invalid(format!("line fit needs at least 3 points, got {n}")));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("line fit needs at least two distinct x values"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let s2 = ss_res / (nf - 2.0);
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(LineFit {
        intercept,
        slope,
        intercept_se: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        slope_se: (s2 / sxx).sqrt(),
        r_squared,
    })
}

/// Moment estimate at one frozen point.
struct PointSummary {
    x: f64,
    y: f64,
    y_se: f64,
    tail: Option<f64>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_spread(points: &[PointSummary]) -> Result<()> {
    let max = points.iter().map(|p| p.x).fold(0.0, f64::max);
    let min = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    if !(max > 0.0 && max >= MIN_SPREAD * min) {
        return Err(invalid(format!(
            "gradient magnitudes span [{min:e}, {max:e}]; need a ratio of at least {MIN_SPREAD}"
        )));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p <= 2.0) {
        return Err(invalid(format!("p must lie in (1, 2], got {p}")));
    }
    Ok(())
}

fn zero_report(p_hat: f64, points: &[PointSummary]) -> NoiseFitReport {
    NoiseFitReport {
        p_hat,
        intercept: 0.0,
        slope: 0.0,
        intercept_se: 0.0,
        slope_se: 0.0,
        intercept_clamped: false,
        slope_clamped: false,
        r_squared: 1.0,
        n_points: points.len(),
        violation_fraction: 0.0,
        points: points.iter().map(|s| (s.x, 0.0)).collect(),
    }
}

fn fit_report(p_hat: f64, points: &[PointSummary]) -> Result<NoiseFitReport> {
    let xy: Vec<(f64, f64)> = points.iter().map(|s| (s.x, s.y)).collect();
    let fit = ols(&xy)?;
    let intercept = fit.intercept.max(0.0);
    let slope = fit.slope.max(0.0);
    let above = points
        .iter()
        .filter(|s| s.y > intercept + slope * s.x + 3.0 * s.y_se)
        .count();
    Ok(NoiseFitReport {
        p_hat,
        intercept,
        slope,
        intercept_se: fit.intercept_se,
        slope_se: fit.slope_se,
        intercept_clamped: fit.intercept < 0.0,
        slope_clamped: fit.slope < 0.0,
        r_squared: fit.r_squared,
        n_points: points.len(),
        violation_fraction: above as f64 / points.len() as f64,
        points: xy,
    })
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Median over points of the per-point tail-index estimates; 2 when no
/// point produced any noise.
fn resolve_p(p: Option<f64>, points: &[PointSummary]) -> Result<f64> {
    let p = match p {
        Some(p) => p,
        None => {
            let tails: Vec<f64> = points.iter().filter_map(|s| s.tail).collect();
            if tails.is_empty() {
                2.0
            } else {
                median(tails)
            }
        }
    };
    check_p(p)?;
    Ok(p)
}

fn tail_of(samples: &[f64]) -> Result<Option<f64>> {
    if samples.iter().all(|&v| v == 0.0) {
        return Ok(None);
    }
    match estimate_tail_index_auto(samples) {
        Ok(a) => Ok(Some(a)),
        Err(Error::ZeroInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_draws(p: Option<f64>, draws: usize) -> Result<()> {
    if let Some(p) = p {
        check_p(p)?;
    }
    let need = if p.is_none() { MIN_TAIL_SAMPLES } else { 2 };
    if draws < need {
        return Err(invalid(format!("need at least {need} draws per point, got {draws}")));
    }
    Ok(())
}

/// Which part of the gradient the vector fit looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorTarget {
    /// x = |∇ᵢf|ᵖ, y = E|nᵢ|ᵖ.
    Coordinate(usize),
    /// x = Σᵢ|∇ᵢf|ᵖ, y = E Σᵢ|nᵢ|ᵖ.
    Global,
}

/// Fits E|g − ∇f|ᵖ against |∇f|ᵖ over frozen trajectory points, with
/// `draws` independent stochastic gradients per point. When `p` is `None`
/// it is estimated from the noise samples first.
pub fn validate_vector_noise(
    oracle: &dyn VectorOracle,
    trajectory: &[DenseVector],
    p: Option<f64>,
    draws: usize,
    target: VectorTarget,
    seed: u64,
) -> Result<NoiseFitReport> {
    check_draws(p, draws)?;
    if trajectory.is_empty() {
        return Err(invalid("empty trajectory"));
    }
    let d = oracle.problem().dim();
    if let VectorTarget::Coordinate(i) = target {
        if i >= d {
            return Err(invalid(format!("coordinate {i} out of range for dimension {d}")));
        }
    }
    let pick = |v: &DenseVector| -> Vec<f64> {
        match target {
            VectorTarget::Coordinate(i) => vec![v.get(i)],
            VectorTarget::Global => v.as_slice().to_vec(),
        }
    };

    // Noise samples first, then moments once p is known.
    let raw = trajectory
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let grad = oracle.problem().grad(x)?;
            let mut rng = RngStream::new(seed, k as u64).rng();
            let mut noise = Vec::with_capacity(draws);
            for _ in 0..draws {
                let g = oracle.sample_mean(x, &grad, 1, &mut rng)?;
                noise.push(pick(&g.sub(&grad)?));
            }
            Ok((pick(&grad), noise))
        })
        .collect::<Result<Vec<_>>>()?;

    let tails = if p.is_none() {
        raw.iter()
            .map(|(_, noise)| tail_of(&noise.iter().flatten().copied().collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; raw.len()]
    };
    let provisional: Vec<PointSummary> = tails
        .iter()
        .map(|&tail| PointSummary {
            x: 0.0,
            y: 0.0,
            y_se: 0.0,
            tail,
        })
        .collect();
    let p_hat = resolve_p(p, &provisional)?;

    let points: Vec<PointSummary> = raw
        .iter()
        .zip(&tails)
        .map(|((grad, noise), &tail)| {
            let x = grad.iter().map(|g| g.abs().powf(p_hat)).sum();
            let per_draw: Vec<f64> = noise
                .iter()
                .map(|n| n.iter().map(|v| v.abs().powf(p_hat)).sum())
                .collect();
            let (y, y_se) = mean_se(&per_draw);
            PointSummary { x, y, y_se, tail }
        })
        .collect();
    check_spread(&points)?;
    if raw.iter().all(|(_, noise)| noise.iter().flatten().all(|&v| v == 0.0)) {
        return Ok(zero_report(p_hat, &points));
    }
    fit_report(p_hat, &points)
}

/// ‖N‖²_A = tr(NᵀAN).
fn weighted_sq(n: &DenseMatrix, a: &DenseMatrix) -> Result<f64> {
    Ok(n.transpose().matmul(&a.matmul(n)?)?.trace())
}

/// |V₀| proxy: square root of the ridged empirical second moment (1/K)ΣNNᵀ.
pub fn v0_proxy(noise: &[DenseMatrix]) -> Result<DenseMatrix> {
    let first = noise.first().ok_or_else(|| invalid("no noise samples"))?;
    let m = first.rows();
    let mut s = DenseMatrix::zeros(m, m);
    for n in noise {
        s = s.add(&n.gram_rows())?;
    }
    let s = s.scale(1.0 / noise.len() as f64);
    let tr = s.trace();
    if tr <= 0.0 {
        return Err(invalid("noise second moment is zero; |V0| proxy is singular"));
    }
    let ridged = s.add(&DenseMatrix::identity(m).scale(RIDGE * tr / m as f64))?;
    psd_sqrt(&ridged)
}

/// Fits ‖V₀‖_*^{p/2}·E‖N‖ᵖ_{|V₀|⁻¹} against ‖∇f‖_*ᵖ over frozen points,
/// with |V₀| replaced by [`v0_proxy`] at the point of smallest gradient.
pub fn validate_matrix_noise(
    oracle: &dyn MatrixOracle,
    trajectory: &[DenseMatrix],
    p: Option<f64>,
    draws: usize,
    seed: u64,
) -> Result<NoiseFitReport> {
    check_draws(p, draws)?;
    if trajectory.is_empty() {
        return Err(invalid("empty trajectory"));
    }
    let raw = trajectory
        .par_iter()
        .enumerate()
        .map(|(k, x)| {
            let grad = oracle.problem().grad(x)?;
            let mut rng = RngStream::new(seed, k as u64).rng();
            let noise = (0..draws)
                .map(|_| oracle.sample_mean(x, &grad, 1, &mut rng)?.sub(&grad))
                .collect::<Result<Vec<_>>>()?;
            Ok((grad, noise))
        })
        .collect::<Result<Vec<_>>>()?;

    let tails = if p.is_none() {
        raw.iter()
            .map(|(_, noise)| {
                tail_of(
                    &noise
                        .iter()
                        .flat_map(|n| n.as_slice().iter().copied())
                        .collect::<Vec<_>>(),
                )
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; raw.len()]
    };
    let provisional: Vec<PointSummary> = tails
        .iter()
        .map(|&tail| PointSummary {
            x: 0.0,
            y: 0.0,
            y_se: 0.0,
            tail,
        })
        .collect();
    let p_hat = resolve_p(p, &provisional)?;
    let xs: Vec<f64> = raw.iter().map(|(g, _)| g.nuclear().powf(p_hat)).collect();

    if raw.iter().all(|(_, noise)| noise.iter().all(|n| n.is_zero())) {
        let points: Vec<PointSummary> = xs
            .iter()
            .zip(&tails)
            .map(|(&x, &tail)| PointSummary {
                x,
                y: 0.0,
                y_se: 0.0,
                tail,
            })
            .collect();
        check_spread(&points)?;
        return Ok(zero_report(p_hat, &points));
    }

    let anchor = xs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("nonempty trajectory");
    let proxy = v0_proxy(&raw[anchor].1)?;
    let inv = pd_inverse(&proxy)?;
    let lead = proxy.trace().powf(p_hat / 2.0);

    let points = raw
        .iter()
        .zip(xs.iter().zip(&tails))
        .map(|((_, noise), (&x, &tail))| {
            let per_draw = noise
                .iter()
                .map(|n| Ok(lead * weighted_sq(n, &inv)?.max(0.0).powf(p_hat / 2.0)))
                .collect::<Result<Vec<f64>>>()?;
            let (y, y_se) = mean_se(&per_draw);
            Ok(PointSummary { x, y, y_se, tail })
        })
        .collect::<Result<Vec<_>>>()?;
    check_spread(&points)?;
    fit_report(p_hat, &points)
}

/// Points x* + s·direction for each scale s.
pub fn radial_vector_trajectory(
    x_star: &DenseVector,
    direction: &DenseVector,
    scales: &[f64],
) -> Result<Vec<DenseVector>> {
    scales.iter().map(|&s| x_star.add(&direction.scale(s))).collect()
}

pub fn radial_matrix_trajectory(
    x_star: &DenseMatrix,
    direction: &DenseMatrix,
    scales: &[f64],
) -> Result<Vec<DenseMatrix>> {
    scales.iter().map(|&s| x_star.add(&direction.scale(s))).collect()
}

/// `count` scales spaced geometrically over [lo, hi].
pub fn geometric_scales(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(invalid("geometric scales need 0 < lo < hi and count ≥ 2"));
    }
    let r = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count).map(|k| lo * (r * k as f64).exp()).collect())
}
