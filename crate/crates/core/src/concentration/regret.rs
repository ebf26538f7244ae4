use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::noise::{NoiseFamily, RngStream};
use crate::tensor::DenseVector;

/// Projected diagonal AdaGrad on [−1, 1]^d with γ_{t,i} = √(2/Σ_{s≤t} v²_{s,i}).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradComparatorState {
    pub w: DenseVector,
    pub accumulated_squares: DenseVector,
}

impl AdaGradComparatorState {
    pub fn new(d: usize) -> Self {
        Self {
            w: DenseVector::zeros(d),
            accumulated_squares: DenseVector::zeros(d),
        }
    }

    /// Reveals v_t and moves to w_{t+1}. A coordinate that has seen only
    /// zeros keeps w = 0; on its first nonzero value the step lands on
    /// −sign(v), the projected limit of an infinite step.
    pub fn observe(&mut self, v: &DenseVector) -> Result<()> {
        if v.len() != self.w.len() {
            return Err(mismatch(self.w.len(), v.len()));
        }
        let s = self.accumulated_squares.as_mut_slice();
        let w = self.w.as_mut_slice();
        for i in 0..v.len() {
            let vi = v.get(i);
            s[i] += vi * vi;
            if s[i] > 0.0 {
                let gamma = (2.0 / s[i]).sqrt();
                w[i] = (w[i] - gamma * vi).clamp(-1.0, 1.0);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretRun {
    /// w_1..w_T; w_t was fixed before v_t was observed.
    pub w_seq: Vec<DenseVector>,
    /// Σ⟨v_t, w_t⟩
    pub lhs: f64,
    /// Σᵢ 2√(2Σ_t v²_{t,i}) − ‖Σ_t v_t‖₁
    pub rhs: f64,
}

impl RegretRun {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

/// Plays the comparator against `v_seq` and returns both sides of the
/// regret inequality.
pub fn adagrad_comparator_run(v_seq: &[DenseVector]) -> Result<RegretRun> {
    let d = v_seq.first().ok_or_else(|| invalid("empty sequence"))?.len();
    let mut state = AdaGradComparatorState::new(d);
    let mut w_seq = Vec::with_capacity(v_seq.len());
    let mut lhs = 0.0;
    let mut sum = DenseVector::zeros(d);
    for v in v_seq {
        if v.len() != d {
            return Err(mismatch(d, v.len()));
        }
        w_seq.push(state.w.clone());
        lhs += v.dot(&state.w)?;
        state.observe(v)?;
        sum = sum.add(v)?;
    }
    let rhs = state
        .accumulated_squares
        .as_slice()
        .iter()
        .map(|s| 2.0 * (2.0 * s).sqrt())
        .sum::<f64>()
        - sum.l1();
    Ok(RegretRun { w_seq, lhs, rhs })
}

/// w_t recomputed from v_1..v_{t−1} alone.
pub fn comparator_from_prefix(prefix: &[DenseVector], d: usize) -> Result<DenseVector> {
    let mut state = AdaGradComparatorState::new(d);
    for v in prefix {
        state.observe(v)?;
    }
    Ok(state.w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Gaussian,
    Stable,
    /// Magnitudes |ξ| with signs chosen to agree with the comparator's
    /// current w, maximizing Σ⟨v_t, w_t⟩.
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSuiteReport {
    pub sequences: usize,
    pub violations: usize,
    /// min over sequences of rhs − lhs.
    pub min_slack: f64,
    pub predictability_failures: usize,
    pub witness: Option<String>,
}

impl RegretSuiteReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.predictability_failures == 0
    }
}

/// Runs the comparator on `count` random sequences with d ≤ `max_d` and
/// T ≤ `max_t`, cycling through Gaussian, α-stable(1.5) and adversarial
/// sequences. Predictability is re-checked on every `check_every`-th
/// sequence by recomputing each w_t from its prefix.
pub fn verify_regret(
    seed: u64,
    count: usize,
    max_d: usize,
    max_t: usize,
    check_every: usize,
) -> Result<RegretSuiteReport> {
    if max_d == 0 || max_t == 0 {
        return Err(invalid("max_d and max_t must be positive"));
    }
    let stable = NoiseFamily::AlphaStable { alpha: 1.5 };
    let kinds = [SequenceKind::Gaussian, SequenceKind::Stable, SequenceKind::Adversarial];
    let mut report = RegretSuiteReport {
        sequences: count,
        violations: 0,
        min_slack: f64::INFINITY,
        predictability_failures: 0,
        witness: None,
    };
    for k in 0..count {
        let mut rng = RngStream::new(seed, k as u64).rng();
        let d = rng.random_range(1..=max_d);
        let t = rng.random_range(1..=max_t);
        let kind = kinds[k % kinds.len()];
        let mut state = AdaGradComparatorState::new(d);
        let mut seq = Vec::with_capacity(t);
        for _ in 0..t {
            let v = DenseVector::from_fn(d, |i| {
                let z: f64 = match kind {
                    SequenceKind::Stable => stable.sample_raw(&mut rng),
                    _ => StandardNormal.sample(&mut rng),
                };
                match kind {
                    SequenceKind::Adversarial => {
                        let wi = state.w.get(i);
                        let s = if wi != 0.0 {
                            wi.signum()
                        } else if rng.random::<bool>() {
                            1.0
                        } else {
                            -1.0
                        };
                        s * z.abs()
                    }
                    _ => z,
                }
            });
            state.observe(&v)?;
            seq.push(v);
        }
        let run = adagrad_comparator_run(&seq)?;
        let slack = run.rhs - run.lhs;
        report.min_slack = report.min_slack.min(slack);
        if !run.holds() {
            report.violations += 1;
            report.witness.get_or_insert_with(|| {
                format!(
                    "sequence {k} ({kind:?}, d={d}, T={t}): lhs {} > rhs {}",
                    run.lhs, run.rhs
                )
            });
        }
        if check_every > 0 && k % check_every == 0 {
            for (i, w) in run.w_seq.iter().enumerate() {
                if &comparator_from_prefix(&seq[..i], d)? != w {
                    report.predictability_failures += 1;
                    break;
                }
            }
        }
    }
    Ok(report)
}
