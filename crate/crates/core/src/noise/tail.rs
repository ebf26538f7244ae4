use crate::error::{invalid, Error, Result};

/// Minimum sample size accepted by the tail-index estimators.
pub const MIN_TAIL_SAMPLES: usize = 1000;

/// Block-sum log-moment estimate of the stability index α.
///
/// With K = n / block_count,
/// 1/α̂ = (mean over blocks of log|block sum| − mean of log|Xᵢ|) / log K,
/// and α̂ is clamped to (0, 2]. Zero samples and zero block sums carry no
/// log information and are skipped.
pub fn estimate_tail_index(samples: &[f64], block_count: usize) -> Result<f64> {
    let n = samples.len();
    if n < MIN_TAIL_SAMPLES {
        return Err(invalid(format!(
            "tail-index estimate needs at least {MIN_TAIL_SAMPLES} samples, got {n}"
        )));
    }
    if block_count == 0 || !n.is_multiple_of(block_count) {
        return Err(invalid(format!(
            "{n} samples do not split into {block_count} equal blocks"
        )));
    }
    let k = n / block_count;
    if k < 2 {
        return Err(invalid("block size must be at least 2"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("non-finite sample"));
    }

    let mean_log = |it: &mut dyn Iterator<Item = f64>| -> Option<f64> {
        let (mut sum, mut count) = (0.0, 0usize);
        for v in it {
            if v != 0.0 {
                sum += v.abs().ln();
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    };
    let single = mean_log(&mut samples.iter().copied()).ok_or(Error::ZeroInput("estimate_tail_index"))?;
    let blocks = mean_log(&mut samples.chunks(k).map(|c| c.iter().sum::<f64>()))
        .ok_or(Error::ZeroInput("estimate_tail_index"))?;

    let inv_alpha = (blocks - single) / (k as f64).ln();
    Ok(if inv_alpha <= 0.5 { 2.0 } else { 1.0 / inv_alpha })
}

/// [`estimate_tail_index`] with ⌊√n⌋ blocks; trailing samples that do not
/// fill a block are dropped.
pub fn estimate_tail_index_auto(samples: &[f64]) -> Result<f64> {
    let blocks = (samples.len() as f64).sqrt().floor() as usize;
    if blocks == 0 {
        return Err(invalid("no samples"));
    }
    let k = samples.len() / blocks;
    estimate_tail_index(&samples[..blocks * k], blocks)
}
