//! Checks of the martingale concentration inequalities (ℓ₁ and nuclear
//! norm), the von Bahr–Esseen baseline, the AdaGrad comparator regret bound
//! and the deterministic lemmas behind the convergence proofs.

pub mod lemmas;
mod regret;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::noise::{NoiseFamily, NoiseRng, RngStream};
use crate::tensor::{psd_sqrt, DenseMatrix, DenseVector};

pub use lemmas::{deterministic_lemma_suite, LemmaCheck, LemmaSuiteReport, LEMMA_TOL};
pub use regret::{
    adagrad_comparator_run, comparator_from_prefix, verify_regret, AdaGradComparatorState, RegretRun,
    RegretSuiteReport, SequenceKind,
};

const TWO_SQRT_TWO: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Largest number of ±1 entries enumerated exactly (2^16 paths).
pub const MAX_EXHAUSTIVE_ENTRIES: usize = 16;

/// Distribution of the i.i.d. entries of a sampled martingale difference
/// sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryLaw {
    Rademacher,
    Gaussian,
    Stable { alpha: f64 },
}

/// Symmetric i.i.d. entries, optionally rescaled by a predictable factor:
/// with `switching`, an entry is doubled while its running sum is below 1
/// in magnitude and halved otherwise. Either way E[g_t | past] = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdsSampler {
    pub law: EntryLaw,
    #[serde(default)]
    pub switching: bool,
}

impl MdsSampler {
    pub fn iid(law: EntryLaw) -> Self {
        Self { law, switching: false }
    }

    fn entry(&self, rng: &mut NoiseRng) -> f64 {
        match self.law {
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::Gaussian => NoiseFamily::Gaussian.sample_raw(rng),
            EntryLaw::Stable { alpha } => NoiseFamily::AlphaStable { alpha }.sample_raw(rng),
        }
    }

    fn factor(&self, running: f64) -> f64 {
        match (self.switching, running.abs() < 1.0) {
            (false, _) => 1.0,
            (true, true) => 2.0,
            (true, false) => 0.5,
        }
    }

    pub fn vector_path(&self, rng: &mut NoiseRng, t: usize, d: usize) -> Vec<DenseVector> {
        let mut sum = vec![0.0; d];
        (0..t)
            .map(|_| {
                let g = DenseVector::from_fn(d, |i| self.factor(sum[i]) * self.entry(rng));
                for (s, v) in sum.iter_mut().zip(g.as_slice()) {
                    *s += v;
                }
                g
            })
            .collect()
    }

    pub fn matrix_path(&self, rng: &mut NoiseRng, t: usize, m: usize, n: usize) -> Vec<DenseMatrix> {
        let mut sum = vec![0.0; m * n];
        (0..t)
            .map(|_| {
                let g = DenseMatrix::from_fn(m, n, |i, j| self.factor(sum[i * n + j]) * self.entry(rng));
                for (s, v) in sum.iter_mut().zip(g.as_slice()) {
                    *s += v;
                }
                g
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let EntryLaw::Stable { alpha } = self.law {
            NoiseFamily::AlphaStable { alpha }.validate()?;
        }
        Ok(())
    }
}

/// Λ_t = (Λ²_{t−1} + G_t G_tᵀ)^{1/2}, so Λ_T = (Σ G_t G_tᵀ)^{1/2}.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaAccumulator {
    pub lambda: DenseMatrix,
}

impl LambdaAccumulator {
    pub fn new(m: usize) -> Self {
        Self {
            lambda: DenseMatrix::zeros(m, m),
        }
    }

    pub fn push(&mut self, g: &DenseMatrix) -> Result<()> {
        let sq = self.lambda.matmul(&self.lambda)?.symmetrize()?;
        self.lambda = psd_sqrt(&sq.add(&g.gram_rows())?)?;
        Ok(())
    }
}

/// Both sides of an expectation inequality lhs ≤ rhs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub trials: usize,
    pub lhs_mean: f64,
    pub rhs_mean: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// Standard error of the paired difference lhs − rhs.
    pub diff_se: f64,
    /// rhs_mean − lhs_mean.
    pub margin: f64,
    /// Expectations computed by enumeration rather than sampling.
    pub exact: bool,
    pub violated: bool,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(pairs: &[(f64, f64)], exact: bool) -> ConcentrationReport {
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let (lhs_mean, lhs_se) = mean_se(&lhs);
    let (rhs_mean, rhs_se) = mean_se(&rhs);
    let (_, diff_se) = mean_se(&diff);
    let violated = if exact {
        lhs_mean > rhs_mean
    } else {
        lhs_mean - 3.0 * diff_se > rhs_mean
    };
    ConcentrationReport {
        trials: pairs.len(),
        lhs_mean,
        rhs_mean,
        lhs_se: if exact { 0.0 } else { lhs_se },
        rhs_se: if exact { 0.0 } else { rhs_se },
        diff_se: if exact { 0.0 } else { diff_se },
        margin: rhs_mean - lhs_mean,
        exact,
        violated,
    }
}

fn monte_carlo<F>(trials: usize, seed: u64, one: F) -> Result<ConcentrationReport>
where
    F: Fn(&mut NoiseRng) -> Result<(f64, f64)> + Sync,
{
    if trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    // Each trial owns its stream; collecting in index order keeps the sums
    // independent of the thread count.
    let pairs = (0..trials)
        .into_par_iter()
        .map(|k| one(&mut RngStream::new(seed, k as u64).rng()))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&pairs, false))
}

fn check_p(p: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&p) {
        return Err(invalid(format!("p must lie in [1, 2], got {p}")));
    }
    Ok(())
}

fn l1_sides(path: &[DenseVector], p: f64) -> (f64, f64) {
    let d = path[0].len();
    let lhs = (0..d).map(|i| path.iter().map(|g| g.get(i)).sum::<f64>().abs()).sum();
    let rhs = TWO_SQRT_TWO
        * (0..d)
            .map(|i| path.iter().map(|g| g.get(i).abs().powf(p)).sum::<f64>().powf(1.0 / p))
            .sum::<f64>();
    (lhs, rhs)
}

fn nuclear_sides(path: &[DenseMatrix]) -> Result<(f64, f64)> {
    let (m, n) = path[0].shape();
    let mut acc = LambdaAccumulator::new(m);
    let mut sum = DenseMatrix::zeros(m, n);
    for g in path {
        acc.push(g)?;
        sum = sum.add(g)?;
    }
    Ok((sum.nuclear(), TWO_SQRT_TWO * acc.lambda.trace()))
}

fn vbe_sides(path: &[DenseVector], p: f64) -> Result<(f64, f64)> {
    let mut sum = DenseVector::zeros(path[0].len());
    for g in path {
        sum = sum.add(g)?;
    }
    let rhs = 2.0 * path.iter().map(|g| g.l2().powf(p)).sum::<f64>();
    Ok((sum.l2().powf(p), rhs))
}

/// E‖Σg_t‖₁ ≤ 2√2 Σᵢ E‖g_{1:T,i}‖_p by Monte Carlo.
pub fn verify_l1_concentration(
    sampler: &MdsSampler,
    t: usize,
    d: usize,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    check_p(p)?;
    sampler.validate()?;
    if t == 0 || d == 0 {
        return Err(invalid("T and d must be positive"));
    }
    monte_carlo(trials, seed, |rng| Ok(l1_sides(&sampler.vector_path(rng, t, d), p)))
}

/// E‖ΣG_t‖_* ≤ 2√2 E tr((ΣG_tG_tᵀ)^{1/2}) by Monte Carlo.
pub fn verify_nuclear_concentration(
    sampler: &MdsSampler,
    t: usize,
    m: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    sampler.validate()?;
    if t == 0 || m == 0 || n == 0 {
        return Err(invalid("T, m and n must be positive"));
    }
    monte_carlo(trials, seed, |rng| nuclear_sides(&sampler.matrix_path(rng, t, m, n)))
}

/// E‖Σx_t‖₂ᵖ ≤ 2 Σ E‖x_t‖₂ᵖ by Monte Carlo.
pub fn verify_von_bahr_esseen(
    sampler: &MdsSampler,
    t: usize,
    d: usize,
    p: f64,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport> {
    check_p(p)?;
    sampler.validate()?;
    if t == 0 || d == 0 {
        return Err(invalid("T and d must be positive"));
    }
    monte_carlo(trials, seed, |rng| vbe_sides(&sampler.vector_path(rng, t, d), p))
}

/// Exact expectation over all sign patterns of g_{t,k} = c_{t,k}·ε_{t,k}
/// with independent Rademacher ε.
fn enumerate<F>(entries: usize, mut eval: F) -> Result<ConcentrationReport>
where
    F: FnMut(&dyn Fn(usize) -> f64) -> Result<(f64, f64)>,
{
    if entries == 0 || entries > MAX_EXHAUSTIVE_ENTRIES {
        return Err(invalid(format!(
            "exhaustive enumeration needs 1..={MAX_EXHAUSTIVE_ENTRIES} entries, got {entries}"
        )));
    }
    let paths = 1usize << entries;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for code in 0..paths {
        let sign = move |k: usize| if (code >> k) & 1 == 1 { -1.0 } else { 1.0 };
        let (l, r) = eval(&sign)?;
        lhs += l;
        rhs += r;
    }
    let n = paths as f64;
    Ok(summarize(&[(lhs / n, rhs / n)], true))
}

fn weighted_vectors(weights: &[DenseVector], sign: &dyn Fn(usize) -> f64) -> Vec<DenseVector> {
    let d = weights[0].len();
    weights
        .iter()
        .enumerate()
        .map(|(t, w)| DenseVector::from_fn(d, |i| w.get(i) * sign(t * d + i)))
        .collect()
}

fn check_weights<T>(weights: &[T], len: impl Fn(&T) -> usize) -> Result<usize> {
    let first = weights.first().ok_or_else(|| invalid("empty weight sequence"))?;
    let per = len(first);
    if weights.iter().any(|w| len(w) != per) {
        return Err(invalid("weights must share one shape"));
    }
    Ok(per * weights.len())
}

/// ℓ₁ inequality evaluated exactly for g_{t,i} = weights[t][i]·ε_{t,i}.
pub fn exhaustive_l1(weights: &[DenseVector], p: f64) -> Result<ConcentrationReport> {
    check_p(p)?;
    let entries = check_weights(weights, |w| w.len())?;
    enumerate(entries, |sign| Ok(l1_sides(&weighted_vectors(weights, sign), p)))
}

/// von Bahr–Esseen inequality evaluated exactly over Rademacher signs.
pub fn exhaustive_vbe(weights: &[DenseVector], p: f64) -> Result<ConcentrationReport> {
    check_p(p)?;
    let entries = check_weights(weights, |w| w.len())?;
    enumerate(entries, |sign| vbe_sides(&weighted_vectors(weights, sign), p))
}

/// Nuclear-norm inequality evaluated exactly for G_t = weights[t] ∘ ε_t.
pub fn exhaustive_nuclear(weights: &[DenseMatrix]) -> Result<ConcentrationReport> {
    let entries = check_weights(weights, |w| w.rows() * w.cols())?;
    let (m, n) = weights[0].shape();
    if weights.iter().any(|w| w.shape() != (m, n)) {
        return Err(invalid("weights must share one shape"));
    }
    enumerate(entries, |sign| {
        let path: Vec<DenseMatrix> = weights
            .iter()
            .enumerate()
            .map(|(t, w)| DenseMatrix::from_fn(m, n, |i, j| w.get(i, j) * sign(t * m * n + i * n + j)))
            .collect();
        nuclear_sides(&path)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub name: String,
    pub report: ConcentrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSuiteReport {
    pub cases: Vec<NamedReport>,
}

impl ConcentrationSuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| !c.report.violated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    L1,
    Nuclear,
    Vbe,
}

fn ones(t: usize, d: usize) -> Vec<DenseVector> {
    vec![DenseVector::filled(d, 1.0); t]
}

fn ramp(t: usize, d: usize) -> Vec<DenseVector> {
    (0..t)
        .map(|s| DenseVector::from_fn(d, |i| 1.0 + (s * d + i) as f64 * 0.5))
        .collect()
}

/// Exhaustive Rademacher cases followed by Monte Carlo cases (Gaussian and
/// α-stable(1.5) entries, T = 64) for the selected inequalities.
pub fn standard_suite(which: &[Inequality], trials: usize, seed: u64) -> Result<ConcentrationSuiteReport> {
    let gaussian = MdsSampler::iid(EntryLaw::Gaussian);
    let stable = MdsSampler::iid(EntryLaw::Stable { alpha: 1.5 });
    let switching = MdsSampler {
        law: EntryLaw::Gaussian,
        switching: true,
    };
    let mut cases = Vec::new();
    let mut push = |name: &str, report: ConcentrationReport| {
        cases.push(NamedReport {
            name: name.to_string(),
            report,
        });
    };
    for ineq in which {
        match ineq {
            Inequality::L1 => {
                push("l1_exact_d1_t1", exhaustive_l1(&ones(1, 1), 2.0)?);
                push("l1_exact_d2_t4", exhaustive_l1(&ones(4, 2), 2.0)?);
                push("l1_exact_d4_t4_ramp_p1", exhaustive_l1(&ramp(4, 4), 1.0)?);
                push(
                    "l1_mc_gaussian_p2",
                    verify_l1_concentration(&gaussian, 64, 4, 2.0, trials, seed)?,
                );
                push(
                    "l1_mc_stable_p1.4",
                    verify_l1_concentration(&stable, 64, 4, 1.4, trials, seed + 1)?,
                );
                push(
                    "l1_mc_switching_p2",
                    verify_l1_concentration(&switching, 64, 4, 2.0, trials, seed + 2)?,
                );
            }
            Inequality::Nuclear => {
                let one = DenseMatrix::from_fn(1, 1, |_, _| 1.0);
                push("nuclear_exact_1x1_t1", exhaustive_nuclear(std::slice::from_ref(&one))?);
                push("nuclear_exact_1x1_t4", exhaustive_nuclear(&vec![one; 4])?);
                push(
                    "nuclear_exact_2x2_t4",
                    exhaustive_nuclear(&vec![DenseMatrix::from_fn(2, 2, |_, _| 1.0); 4])?,
                );
                push(
                    "nuclear_exact_2x1_t8",
                    exhaustive_nuclear(&vec![DenseMatrix::from_fn(2, 1, |_, _| 1.0); 8])?,
                );
                push(
                    "nuclear_mc_gaussian_4x6",
                    verify_nuclear_concentration(&gaussian, 64, 4, 6, trials, seed + 3)?,
                );
                push(
                    "nuclear_mc_stable_4x6",
                    verify_nuclear_concentration(&stable, 64, 4, 6, trials, seed + 4)?,
                );
            }
            Inequality::Vbe => {
                push("vbe_exact_d1_t1", exhaustive_vbe(&ones(1, 1), 2.0)?);
                push("vbe_exact_d1_t4_p1.4", exhaustive_vbe(&ones(4, 1), 1.4)?);
                push("vbe_exact_d2_t8_ramp", exhaustive_vbe(&ramp(8, 2), 1.5)?);
                push(
                    "vbe_mc_gaussian_p2",
                    verify_von_bahr_esseen(&gaussian, 64, 4, 2.0, trials, seed + 5)?,
                );
                push(
                    "vbe_mc_stable_p1.4",
                    verify_von_bahr_esseen(&stable, 64, 4, 1.4, trials, seed + 6)?,
                );
            }
        }
    }
    Ok(ConcentrationSuiteReport { cases })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_rademacher_l1() {
        let r = exhaustive_l1(&ones(1, 1), 2.0).unwrap();
        assert_eq!(r.lhs_mean, 1.0);
        assert!((r.rhs_mean - TWO_SQRT_TWO).abs() < 1e-15);
        assert!(!r.violated && r.exact);
    }

    #[test]
    fn exhaustive_l1_d2_t4_closed_form() {
        // E|ε₁+…+ε₄| = (2·4 + 8·2 + 6·0)/16 = 1.5 per coordinate.
        let r = exhaustive_l1(&ones(4, 2), 2.0).unwrap();
        assert!((r.lhs_mean - 3.0).abs() < 1e-15);
        assert!((r.rhs_mean - 2.0 * TWO_SQRT_TWO * 2.0).abs() < 1e-12);
        assert!(!r.violated);
    }

    #[test]
    fn exhaustive_vbe_small() {
        let r = exhaustive_vbe(&ones(1, 1), 2.0).unwrap();
        assert_eq!((r.lhs_mean, r.rhs_mean), (1.0, 2.0));
        // E(Σε)² = 4 for T = 4.
        let r = exhaustive_vbe(&ones(4, 1), 2.0).unwrap();
        assert!((r.lhs_mean - 4.0).abs() < 1e-15);
        assert_eq!(r.rhs_mean, 8.0);
    }

    #[test]
    fn exhaustive_nuclear_scalar_matches_l1() {
        let w = vec![DenseMatrix::from_fn(1, 1, |_, _| 1.0); 4];
        let a = exhaustive_nuclear(&w).unwrap();
        let b = exhaustive_l1(&ones(4, 1), 2.0).unwrap();
        assert!((a.lhs_mean - b.lhs_mean).abs() < 1e-12);
        assert!((a.rhs_mean - b.rhs_mean).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_limit_enforced() {
        assert!(exhaustive_l1(&ones(5, 4), 2.0).is_err());
        assert!(exhaustive_l1(&ones(4, 4), 2.0).is_ok());
    }

    #[test]
    fn lambda_accumulator_matches_direct_root() {
        let mut rng = RngStream::new(9, 0).rng();
        let path = MdsSampler::iid(EntryLaw::Gaussian).matrix_path(&mut rng, 10, 3, 5);
        let mut acc = LambdaAccumulator::new(3);
        let mut cov = DenseMatrix::zeros(3, 3);
        for g in &path {
            acc.push(g).unwrap();
            cov = cov.add(&g.gram_rows()).unwrap();
        }
        let direct = psd_sqrt(&cov).unwrap();
        assert!(acc.lambda.sub(&direct).unwrap().max_abs() < 1e-10);
        // tr((ΣGGᵀ)^{1/2}) is the nuclear norm of the concatenation [G₁ … G_T].
        let wide = DenseMatrix::from_fn(3, 50, |i, j| path[j / 5].get(i, j % 5));
        assert!((acc.lambda.trace() - wide.nuclear()).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_is_thread_independent() {
        let s = MdsSampler::iid(EntryLaw::Stable { alpha: 1.5 });
        let a = verify_l1_concentration(&s, 16, 3, 1.4, 200, 7).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| verify_l1_concentration(&s, 16, 3, 1.4, 200, 7).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_nuclear_has_full_slack() {
        let s = MdsSampler::iid(EntryLaw::Gaussian);
        let r = verify_nuclear_concentration(&s, 1, 3, 4, 50, 1).unwrap();
        assert!((r.rhs_mean / r.lhs_mean - TWO_SQRT_TWO).abs() < 1e-9);
    }

    #[test]
    fn switching_paths_have_mean_zero_increments() {
        let s = MdsSampler {
            law: EntryLaw::Gaussian,
            switching: true,
        };
        let mut total = 0.0;
        let n = 4000;
        for k in 0..n {
            let path = s.vector_path(&mut RngStream::new(3, k).rng(), 8, 1);
            total += path.iter().map(|g| g.get(0)).sum::<f64>();
        }
        assert!((total / n as f64).abs() < 0.15);
    }

    #[test]
    fn small_suite_passes() {
        let r = standard_suite(&[Inequality::L1, Inequality::Nuclear, Inequality::Vbe], 200, 0).unwrap();
        for c in &r.cases {
            assert!(!c.report.violated, "{} {:?}", c.name, c.report);
        }
    }
}
