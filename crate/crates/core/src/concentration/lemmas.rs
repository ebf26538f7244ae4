use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::noise::{NoiseRng, RngStream};
use crate::tensor::{matrix_abs, msign_default, pd_inverse, sign_vec, DenseMatrix, DenseVector};

/// Floating-point allowance for inequalities that may be tight:
/// lhs ≤ rhs + 1e-9·(1 + |rhs|).
pub const LEMMA_TOL: f64 = 1e-9;

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + LEMMA_TOL * (1.0 + rhs.abs())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= LEMMA_TOL * (1.0 + a.abs().max(b.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub cases: usize,
    pub violations: usize,
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub checks: Vec<LemmaCheck>,
}

impl LemmaSuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.violations == 0)
    }
}

struct Tally {
    check: LemmaCheck,
}

impl Tally {
    fn new(name: &str) -> Self {
        Self {
            check: LemmaCheck {
                name: name.to_string(),
                cases: 0,
                violations: 0,
                witness: None,
            },
        }
    }

    fn record(&mut self, ok: bool, witness: impl FnOnce() -> String) {
        self.check.cases += 1;
        if !ok {
            self.check.violations += 1;
            if self.check.witness.is_none() {
                self.check.witness = Some(witness());
            }
        }
    }
}

fn gauss_vec(rng: &mut NoiseRng, d: usize) -> DenseVector {
    DenseVector::from_fn(d, |_| StandardNormal.sample(rng))
}

fn gauss_mat(rng: &mut NoiseRng, m: usize, n: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng))
}

/// Random PSD matrix A Aᵀ with A of shape m×k, so rank-deficient when k < m.
fn psd(rng: &mut NoiseRng, m: usize, k: usize) -> DenseMatrix {
    gauss_mat(rng, m, k).gram_rows()
}

fn ternary_vectors(d: usize) -> Vec<DenseVector> {
    let count = 3usize.pow(d as u32);
    (0..count)
        .map(|mut code| {
            DenseVector::from_fn(d, |_| {
                let v = (code % 3) as f64 - 1.0;
                code /= 3;
                v
            })
        })
        .collect()
}

fn sign_difference(rng: &mut NoiseRng, cases: usize) -> Result<LemmaCheck> {
    let mut t = Tally::new("sign_difference");
    let mut check = |x: &DenseVector, y: &DenseVector| -> Result<()> {
        let lhs = x.dot(&sign_vec(x).sub(&sign_vec(y))?)?;
        let rhs = 2.0 * x.sub(y)?.l1();
        t.record(within(lhs, rhs), || format!("x={x:?} y={y:?}"));
        Ok(())
    };
    let grid = ternary_vectors(2);
    for x in &grid {
        for y in &grid {
            check(x, y)?;
        }
    }
    for _ in 0..cases {
        let d = rng.random_range(1..=8);
        let x = gauss_vec(rng, d);
        // Correlated y so that sign agreement and disagreement both occur.
        let y = x.add(&gauss_vec(rng, d).scale(rng.random_range(0.0..2.0)))?;
        check(&x, &y)?;
    }
    Ok(t.check)
}

fn polar_difference(rng: &mut NoiseRng, cases: usize) -> Result<LemmaCheck> {
    let mut t = Tally::new("polar_difference");
    let mut check = |x: &DenseMatrix, y: &DenseMatrix| -> Result<()> {
        let lhs = x.inner(&msign_default(x)?.sub(&msign_default(y)?)?)?;
        let rhs = 2.0 * x.sub(y)?.nuclear();
        t.record(within(lhs, rhs), || format!("X={x:?} Y={y:?}"));
        Ok(())
    };
    let grid: Vec<DenseMatrix> = ternary_vectors(4)
        .into_iter()
        .map(|v| DenseMatrix::new(2, 2, v.into_vec()).expect("2x2"))
        .collect();
    for x in &grid {
        for y in &grid {
            check(x, y)?;
        }
    }
    for _ in 0..cases {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let x = gauss_mat(rng, m, n);
        let y = x.add(&gauss_mat(rng, m, n).scale(rng.random_range(0.0..2.0)))?;
        check(&x, &y)?;
    }
    Ok(t.check)
}

fn minkowski(rng: &mut NoiseRng, cases: usize) -> LemmaCheck {
    let mut t = Tally::new("minkowski");
    let mut check = |x: f64, y: f64, p: f64| {
        let lhs = (x + y).powf(1.0 / p);
        let rhs = x.powf(1.0 / p) + y.powf(1.0 / p);
        t.record(within(lhs, rhs), || format!("x={x} y={y} p={p}"));
    };
    for x in [0.0, 1.0, 2.0] {
        for y in [0.0, 1.0, 2.0] {
            for p in [1.0, 1.5, 2.0, 4.0] {
                check(x, y, p);
            }
        }
    }
    for _ in 0..cases {
        let x = 10f64.powf(rng.random_range(-6.0..6.0));
        let y = 10f64.powf(rng.random_range(-6.0..6.0));
        check(x, y, rng.random_range(1.0..10.0));
    }
    t.check
}

/// E[(Σᵢ Xᵢᵖ)^{1/p}] ≤ (Σᵢ E Xᵢᵖ)^{1/p} with the expectation taken exactly
/// over K equally likely outcomes.
fn lp_mean(rng: &mut NoiseRng, cases: usize) -> LemmaCheck {
    let mut t = Tally::new("lp_mean");
    let mut check = |outcomes: &[Vec<f64>], p: f64| {
        let k = outcomes.len() as f64;
        let lhs = outcomes
            .iter()
            .map(|x| x.iter().map(|v| v.powf(p)).sum::<f64>().powf(1.0 / p))
            .sum::<f64>()
            / k;
        let n = outcomes[0].len();
        let rhs = (0..n)
            .map(|i| outcomes.iter().map(|x| x[i].powf(p)).sum::<f64>() / k)
            .sum::<f64>()
            .powf(1.0 / p);
        t.record(within(lhs, rhs), || format!("outcomes={outcomes:?} p={p}"));
    };
    // Exhaustive: every {0,1}-valued pair of variables over 2 outcomes.
    for code in 0..16u32 {
        let bits: Vec<f64> = (0..4).map(|b| ((code >> b) & 1) as f64).collect();
        for p in [1.0, 1.5, 2.0] {
            check(&[bits[..2].to_vec(), bits[2..].to_vec()], p);
        }
    }
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let k = rng.random_range(1..=8);
        let outcomes: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.random_range(0.0f64..1.0).powi(3) * 10.0).collect())
            .collect();
        check(&outcomes, rng.random_range(1.0..6.0));
    }
    t.check
}

/// ‖X‖_* ≤ √(tr L · tr(Xᵀ L⁻¹ X)) for L ≻ 0.
fn matrix_cauchy_schwarz(rng: &mut NoiseRng, cases: usize) -> Result<LemmaCheck> {
    let mut t = Tally::new("matrix_cauchy_schwarz");
    for k in 0..cases {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let x = gauss_mat(rng, m, n);
        let l = if k % 2 == 0 {
            // Near-equality case: L = |X| plus a small ridge.
            matrix_abs(&x).add(&DenseMatrix::identity(m).scale(1e-3))?
        } else {
            psd(rng, m, m).add(&DenseMatrix::identity(m).scale(0.1))?
        };
        let linv = pd_inverse(&l)?;
        let rhs = (l.trace() * x.transpose().matmul(&linv)?.matmul(&x)?.trace()).sqrt();
        t.record(within(x.nuclear(), rhs), || format!("X={x:?} L={l:?}"));
    }
    Ok(t.check)
}

fn msign_properties(rng: &mut NoiseRng, cases: usize) -> Result<Vec<LemmaCheck>> {
    let mut inner = Tally::new("msign_inner_equals_nuclear");
    let mut scale = Tally::new("msign_positive_scale_invariance");
    let mut weighted = Tally::new("msign_weighted_norm_le_trace");
    for _ in 0..cases {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let x = gauss_mat(rng, m, n);
        let o = msign_default(&x)?;
        let lhs = x.inner(&o)?;
        let nuc = x.nuclear();
        inner.record(close(lhs, nuc), || format!("X={x:?}: <X,msign X>={lhs}, nuclear={nuc}"));

        let a = 10f64.powf(rng.random_range(-3.0..3.0));
        let dev = msign_default(&x.scale(a))?.sub(&o)?.max_abs();
        scale.record(dev <= 1e-9, || format!("X={x:?} a={a}: deviation {dev}"));

        let rank = rng.random_range(1..=m);
        let l = psd(rng, m, rank);
        let q = o.transpose().matmul(&l)?.matmul(&o)?.trace();
        weighted.record(within(q, l.trace()), || format!("X={x:?} L={l:?}"));
    }
    Ok(vec![inner.check, scale.check, weighted.check])
}

fn trace_properties(rng: &mut NoiseRng, cases: usize) -> Result<Vec<LemmaCheck>> {
    let mut identity = Tally::new("trace_identities");
    let mut product = Tally::new("nuclear_product_bound");
    for _ in 0..cases {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(1..=5);
        let r = rng.random_range(1..=5);
        let rank = rng.random_range(1..=n);
        let l = psd(rng, n, rank);
        let x = gauss_mat(rng, m, n);
        let tr_abs = matrix_abs(&x).trace();
        let nuc = x.nuclear();
        let ok = close(l.trace(), l.nuclear()) && close(tr_abs, nuc);
        identity.record(ok, || format!("L={l:?} X={x:?}"));

        let y = gauss_mat(rng, n, r);
        let lhs = x.matmul(&y)?.nuclear();
        let rhs = (x.op_norm() * y.nuclear()).min(nuc * y.op_norm());
        product.record(within(lhs, rhs), || format!("X={x:?} Y={y:?}"));
    }
    Ok(vec![identity.check, product.check])
}

/// Checks every deterministic inequality on `cases` random inputs each,
/// plus the small exhaustive grids.
pub fn deterministic_lemma_suite(seed: u64, cases: usize) -> Result<LemmaSuiteReport> {
    let stream = |k: u64| RngStream::new(seed, k).rng();
    let mut checks = vec![
        sign_difference(&mut stream(1), cases)?,
        polar_difference(&mut stream(2), cases)?,
        minkowski(&mut stream(3), cases),
        lp_mean(&mut stream(4), cases),
        matrix_cauchy_schwarz(&mut stream(5), cases)?,
    ];
    checks.extend(msign_properties(&mut stream(6), cases)?);
    checks.extend(trace_properties(&mut stream(7), cases)?);
    Ok(LemmaSuiteReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_small() {
        let r = deterministic_lemma_suite(0, 300).unwrap();
        for c in &r.checks {
            assert_eq!(c.violations, 0, "{c:?}");
            assert!(c.cases >= 300);
        }
        let sd = r.checks.iter().find(|c| c.name == "sign_difference").unwrap();
        assert_eq!(sd.cases, 81 + 300);
    }

    #[test]
    fn negative_scale_flips_msign() {
        let mut rng = RngStream::new(3, 0).rng();
        let x = gauss_mat(&mut rng, 3, 4);
        let a = msign_default(&x.scale(-2.0)).unwrap();
        let b = msign_default(&x).unwrap().scale(-1.0);
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn tally_keeps_first_witness() {
        let mut t = Tally::new("x");
        t.record(false, || "first".into());
        t.record(false, || "second".into());
        assert_eq!(t.check.violations, 2);
        assert_eq!(t.check.witness.as_deref(), Some("first"));
    }
}
