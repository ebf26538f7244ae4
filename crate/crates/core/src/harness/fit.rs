use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::validator::ols;

/// Minimum ratio between the largest and smallest T in a rate fit.
pub const MIN_T_SPAN: f64 = 100.0;

/// Power-law fit y ≈ C·T^{−exponent} by least squares on (ln T, ln y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent_hat: f64,
    pub intercept_hat: f64,
    pub stderr: f64,
    /// (ln T, ln y) with y the geometric mean over seeds, sorted by T.
    pub points: Vec<(f64, f64)>,
}

/// Fits the decay exponent of `(T, value)` observations. Values sharing a
/// T (one per seed) are combined by their geometric mean. The result does
/// not depend on the order of the input.
pub fn fit_rate(observations: &[(usize, f64)]) -> Result<RateFit> {
    if let Some((t, v)) = observations.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid(format!(
            "rate fit needs positive finite values; T = {t} has {v}"
        )));
    }
    let mut sorted = observations.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut points: Vec<(f64, f64)> = Vec::new();
    for group in sorted.chunk_by(|a, b| a.0 == b.0) {
        let mean_log = group.iter().map(|(_, v)| v.ln()).sum::<f64>() / group.len() as f64;
        points.push(((group[0].0 as f64).ln(), mean_log));
    }
    if points.len() < 3 {
        return Err(invalid(format!(
            "rate fit needs at least 3 distinct T values, got {}",
            points.len()
        )));
    }
    let span = (points[points.len() - 1].0 - points[0].0).exp();
    if span < MIN_T_SPAN * (1.0 - 1e-12) {
        return Err(invalid(format!(
            "T values span a factor {span:.1}; need at least {MIN_T_SPAN}"
        )));
    }
    let line = ols(&points)?;
    Ok(RateFit {
        exponent_hat: -line.slope,
        intercept_hat: line.intercept,
        stderr: line.slope_se,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let obs: Vec<_> = [256usize, 1024, 4096, 65536]
            .iter()
            .map(|&t| (t, 3.0 * (t as f64).powf(-0.25)))
            .collect();
        let fit = fit_rate(&obs).unwrap();
        assert!((fit.exponent_hat - 0.25).abs() < 1e-10);
        assert!((fit.intercept_hat - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn geometric_mean_over_seeds() {
        // Seeds at each T scatter by factors 2 and 1/2, so the geometric
        // mean sits on the line.
        let mut obs = Vec::new();
        for t in [100usize, 1000, 10000] {
            let y = (t as f64).powf(-0.2);
            obs.push((t, 2.0 * y));
            obs.push((t, 0.5 * y));
        }
        let fit = fit_rate(&obs).unwrap();
        assert!((fit.exponent_hat - 0.2).abs() < 1e-10);
        assert_eq!(fit.points.len(), 3);
    }

    #[test]
    fn insufficient_spread() {
        assert!(fit_rate(&[(10, 1.0), (20, 0.9)]).is_err());
        assert!(fit_rate(&[(10, 1.0), (20, 0.9), (500, 0.5)]).is_err());
        assert!(fit_rate(&[(10, 1.0), (20, 0.9), (1000, 0.5)]).is_ok());
        assert!(fit_rate(&[(10, 1.0), (20, 0.0), (1000, 0.5)]).is_err());
    }

    proptest! {
        #[test]
        fn order_invariant(
            vals in proptest::collection::vec(0.01f64..10.0, 8),
            rot in 0usize..8,
        ) {
            let ts = [16usize, 16, 64, 64, 256, 256, 4096, 4096];
            let obs: Vec<_> = ts.iter().copied().zip(vals.iter().copied()).collect();
            let mut shuffled = obs.clone();
            shuffled.rotate_left(rot);
            shuffled.reverse();
            prop_assert_eq!(fit_rate(&obs).unwrap(), fit_rate(&shuffled).unwrap());
        }
    }
}
