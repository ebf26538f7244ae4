use super::linalg::{check_psd, singular_values, svd_with_tol, DEFAULT_RANK_TOL};
use super::matrix::DenseMatrix;
use super::vector::DenseVector;
use crate::error::{invalid, mismatch, Error, Result};

/// Quintic Newton–Schulz coefficients (a, b, c).
pub const NS_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Which norm to evaluate.
///
/// On a vector, the matrix norms (nuclear, operator, Frobenius) treat it as a
/// single column, so all three equal ℓ₂. On a matrix, only the matrix norms
/// and the weighted matrix norm are defined.
#[derive(Debug, Clone, Copy)]
pub enum Norm<'a> {
    L1,
    L2,
    Linf,
    Lp(f64),
    Nuclear,
    Operator,
    Frobenius,
    /// √(xᵀ diag(l) x); weights must be nonnegative.
    WeightedVec(&'a DenseVector),
    /// √tr(Xᵀ L X); L must be symmetric PSD.
    WeightedMat(&'a DenseMatrix),
}

impl DenseVector {
    pub fn norm(&self, which: Norm<'_>) -> Result<f64> {
        match which {
            Norm::L1 => Ok(self.l1()),
            Norm::L2 | Norm::Nuclear | Norm::Operator | Norm::Frobenius => Ok(self.l2()),
            Norm::Linf => Ok(self.linf()),
            Norm::Lp(p) => {
                if !(p >= 1.0) {
                    return Err(invalid(format!("ℓp norm needs p ≥ 1, got {p}")));
                }
                Ok(self.lp(p))
            }
            Norm::WeightedVec(l) => {
                if l.len() != self.len() {
                    return Err(mismatch(self.len(), l.len()));
                }
                if l.as_slice().iter().any(|&w| w < 0.0) {
                    return Err(invalid("negative weight in weighted vector norm"));
                }
                Ok(self
                    .as_slice()
                    .iter()
                    .zip(l.as_slice())
                    .map(|(x, w)| w * x * x)
                    .sum::<f64>()
                    .sqrt())
            }
            Norm::WeightedMat(l) => DenseMatrix::from_column(self).norm(Norm::WeightedMat(l)),
        }
    }
}

impl DenseMatrix {
    pub fn norm(&self, which: Norm<'_>) -> Result<f64> {
        match which {
            Norm::Nuclear => Ok(self.nuclear()),
            Norm::Operator => Ok(self.op_norm()),
            Norm::Frobenius => Ok(self.fro()),
            Norm::WeightedMat(l) => {
                if l.shape() != (self.rows(), self.rows()) {
                    return Err(mismatch(
                        format!("{0}x{0} weight", self.rows()),
                        format!("{}x{}", l.rows(), l.cols()),
                    ));
                }
                check_psd(l)?;
                let q = self.transpose().matmul(&l.matmul(self)?)?.trace();
                Ok(q.max(0.0).sqrt())
            }
            other => Err(invalid(format!("{other:?} is not a matrix norm"))),
        }
    }

    pub fn nuclear(&self) -> f64 {
        singular_values(self).iter().sum()
    }

    pub fn op_norm(&self) -> f64 {
        singular_values(self).first().copied().unwrap_or(0.0)
    }

    /// Schatten-q norm; `q = ∞` gives the operator norm.
    pub fn schatten(&self, q: f64) -> f64 {
        let s = singular_values(self);
        if q.is_infinite() {
            return s.first().copied().unwrap_or(0.0);
        }
        s.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// msign(X) = U Vᵀ over singular values above `rank_tol · σ_max`.
/// The zero matrix maps to zero.
pub fn msign(x: &DenseMatrix, rank_tol: f64) -> Result<DenseMatrix> {
    if !x.is_finite() {
        return Err(invalid("msign input has non-finite entries"));
    }
    let f = svd_with_tol(x, rank_tol);
    let (m, n, r) = (x.rows(), x.cols(), f.rank());
    Ok(DenseMatrix::from_fn(m, n, |i, j| {
        (0..r).map(|k| f.u.get(i, k) * f.v.get(j, k)).sum()
    }))
}

/// [`msign`] with the default rank tolerance.
pub fn msign_default(x: &DenseMatrix) -> Result<DenseMatrix> {
    msign(x, DEFAULT_RANK_TOL)
}

/// q steps of the quintic Newton–Schulz iteration from Y₀ = X/‖X‖_F:
/// Y ← aY + (bA + cA²)Y with A = YYᵀ.
pub fn newton_schulz(x: &DenseMatrix, q: usize) -> Result<DenseMatrix> {
    let fro = x.fro();
    if fro == 0.0 {
        return Err(Error::ZeroInput("newton_schulz"));
    }
    if !fro.is_finite() {
        return Err(invalid("newton_schulz input has non-finite entries"));
    }
    let tall = x.rows() > x.cols();
    let mut y = if tall { x.transpose() } else { x.clone() }.scale(1.0 / fro);
    let (a, b, c) = NS_COEFFS;
    for _ in 0..q {
        let gram = y.gram_rows();
        let poly = gram.scale(b).add(&gram.matmul(&gram)?.scale(c))?;
        y = y.scale(a).add(&poly.matmul(&y)?)?;
    }
    Ok(if tall { y.transpose() } else { y })
}

/// |X| = (X Xᵀ)^{1/2}, an m×m PSD matrix whose nonzero eigenvalues are the
/// singular values of X.
pub fn matrix_abs(x: &DenseMatrix) -> DenseMatrix {
    let f = svd_with_tol(x, 0.0);
    let m = x.rows();
    DenseMatrix::from_fn(m, m, |i, j| {
        (0..f.rank())
            .map(|k| f.u.get(i, k) * f.singular_values[k] * f.u.get(j, k))
            .sum()
    })
}

/// φ_q(v) = ‖v‖₁/‖v‖_q. `q = ∞` is allowed.
pub fn density_phi(v: &DenseVector, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid(format!("density needs q ≥ 1, got {q}")));
    }
    if v.is_zero() {
        return Err(Error::ZeroInput("density_phi"));
    }
    Ok(v.l1() / v.lp(q))
}

/// ψ_q(Y) = ‖Y‖_{S1}/‖Y‖_{Sq}. `q = ∞` is allowed.
pub fn density_psi(y: &DenseMatrix, q: f64) -> Result<f64> {
    if !(q >= 1.0) {
        return Err(invalid(format!("density needs q ≥ 1, got {q}")));
    }
    if y.is_zero() {
        return Err(Error::ZeroInput("density_psi"));
    }
    let s = singular_values(y);
    let s1: f64 = s.iter().sum();
    let sq = if q.is_infinite() {
        s[0]
    } else {
        s.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
    };
    Ok(s1 / sq)
}
