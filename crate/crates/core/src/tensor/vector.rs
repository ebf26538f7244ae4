use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

/// Dense real vector. Constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite vector entry at index {i}")));
        }
        Ok(Self { data })
    }

    /// Wraps data without the finiteness check. Callers that can overflow
    /// (optimizer steps) check [`DenseVector::is_finite`] themselves.
    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(d: usize) -> Self {
        Self { data: vec![0.0; d] }
    }

    pub fn filled(d: usize, value: f64) -> Self {
        Self { data: vec![value; d] }
    }

    pub fn from_fn(d: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            data: (0..d).map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(mismatch(self.len(), other.len()));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_len(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// ℓ_p norm; `p = ∞` is accepted.
    pub fn lp(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.linf();
        }
        if p == 1.0 {
            return self.l1();
        }
        if p == 2.0 {
            return self.l2();
        }
        self.data.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Entrywise sign with sign(0) = 0.
pub fn sign_vec(x: &DenseVector) -> DenseVector {
    x.map(sign)
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sign_examples() {
        let x = DenseVector::new(vec![3.0, -2.0, 0.0]).unwrap();
        assert_eq!(sign_vec(&x).as_slice(), &[1.0, -1.0, 0.0]);
        let tiny = DenseVector::new(vec![-1e-300, 1e-300]).unwrap();
        assert_eq!(sign_vec(&tiny).as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(DenseVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(DenseVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn basic_norms() {
        let x = DenseVector::new(vec![3.0, -4.0]).unwrap();
        assert_eq!(x.l2(), 5.0);
        assert_eq!(x.l1(), 7.0);
        assert_eq!(x.linf(), 4.0);
        assert!((x.lp(3.0) - 91f64.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sign_is_idempotent_and_bounded(v in prop::collection::vec(-1e6f64..1e6, 1..20)) {
            let x = DenseVector::new(v).unwrap();
            let s = sign_vec(&x);
            prop_assert_eq!(sign_vec(&s), s.clone());
            prop_assert!(s.as_slice().iter().all(|e| [-1.0, 0.0, 1.0].contains(e)));
            if x.is_zero() {
                prop_assert_eq!(s.linf(), 0.0);
            } else {
                prop_assert_eq!(s.linf(), 1.0);
            }
        }

        #[test]
        fn lp_is_monotone_in_p(v in prop::collection::vec(-10f64..10.0, 1..12), p in 1.0f64..2.0) {
            let x = DenseVector::new(v).unwrap();
            prop_assert!(x.lp(p) <= x.l1() * (1.0 + 1e-12) + 1e-300);
            prop_assert!(x.l2() <= x.lp(p) * (1.0 + 1e-12) + 1e-300);
            prop_assert!(x.linf() <= x.l2() * (1.0 + 1e-12) + 1e-300);
        }
    }
}
