//! In-house dense decompositions: one-sided Jacobi SVD and cyclic Jacobi
//! symmetric eigendecomposition. Sizes here are small (a few hundred at most),
//! so the cubic sweeps are fine and we avoid a LAPACK dependency.

use super::matrix::DenseMatrix;
use crate::error::{invalid, Error, Result};

const MAX_SWEEPS: usize = 80;
const ORTH_TOL: f64 = 1e-15;

/// Thin SVD trimmed to numerical rank: X ≈ U diag(σ) Vᵀ.
///
/// Column signs of U and V are whatever the Jacobi sweeps produce; only the
/// products u_i v_iᵀ are canonical.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    /// m×r, orthonormal columns.
    pub u: DenseMatrix,
    /// Nonincreasing, strictly positive.
    pub singular_values: Vec<f64>,
    /// n×r, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdFactorization {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let (m, n, r) = (self.u.rows(), self.v.rows(), self.rank());
        DenseMatrix::from_fn(m, n, |i, j| {
            (0..r)
                .map(|k| self.u.get(i, k) * self.singular_values[k] * self.v.get(j, k))
                .sum()
        })
    }
}

/// Default relative rank cut-off.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

pub fn svd(x: &DenseMatrix) -> SvdFactorization {
    svd_with_tol(x, DEFAULT_RANK_TOL)
}

/// SVD keeping singular values above `rank_tol · σ_max`.
pub fn svd_with_tol(x: &DenseMatrix, rank_tol: f64) -> SvdFactorization {
    if x.rows() < x.cols() {
        let t = svd_with_tol(&x.transpose(), rank_tol);
        return SvdFactorization {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        };
    }
    let (m, n) = x.shape();
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| x.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = col_stats(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= ORTH_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<(f64, usize)> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (col.iter().map(|e| e * e).sum::<f64>().sqrt(), j))
        .collect();
    order.sort_by(|l, r| r.0.total_cmp(&l.0).then(l.1.cmp(&r.1)));
    let smax = order.first().map_or(0.0, |o| o.0);
    let kept: Vec<(f64, usize)> = order
        .into_iter()
        .filter(|&(s, _)| s > 0.0 && s > rank_tol * smax)
        .collect();
    let r = kept.len();
    let u = DenseMatrix::from_fn(m, r, |i, k| a[kept[k].1][i] / kept[k].0);
    let vm = DenseMatrix::from_fn(n, r, |i, k| v[kept[k].1][i]);
    SvdFactorization {
        u,
        singular_values: kept.iter().map(|k| k.0).collect(),
        v: vm,
    }
}

fn col_stats(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (a, b) in x.iter().zip(y) {
        alpha += a * a;
        beta += b * b;
        gamma += a * b;
    }
    (alpha, beta, gamma)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// All singular values (no rank trimming), nonincreasing.
pub fn singular_values(x: &DenseMatrix) -> Vec<f64> {
    svd_with_tol(x, 0.0).singular_values
}

/// Eigendecomposition of a symmetric matrix: eigenvalues ascending, and the
/// matching orthonormal eigenvectors as columns.
pub fn sym_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if !a.is_square() {
        return Err(invalid("eigendecomposition needs a square matrix"));
    }
    let n = a.rows();
    let scale = a.max_abs();
    let sym_tol = 1e-9 * scale.max(1e-300);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > sym_tol {
                return Err(invalid("matrix is not symmetric"));
            }
        }
    }
    let mut m: Vec<f64> = a.symmetrize()?.as_slice().to_vec();
    let mut v = DenseMatrix::identity(n).as_slice().to_vec();
    let idx = |i: usize, j: usize| i * n + j;

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[idx(i, j)] * m[idx(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[idx(i, i)] * m[idx(i, i)]).sum();
        if off <= 1e-30 * diag.max(1e-300) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[idx(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[idx(q, q)] - m[idx(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[idx(k, p)], m[idx(k, q)]);
                    m[idx(k, p)] = c * akp - s * akq;
                    m[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[idx(p, k)], m[idx(q, k)]);
                    m[idx(p, k)] = c * apk - s * aqk;
                    m[idx(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[idx(k, p)], v[idx(k, q)]);
                    v[idx(k, p)] = c * vkp - s * vkq;
                    v[idx(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[idx(i, i)].total_cmp(&m[idx(j, j)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[idx(i, i)]).collect();
    let vecs = DenseMatrix::from_fn(n, n, |i, k| v[idx(i, order[k])]);
    Ok((values, vecs))
}

fn psd_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let (vals, vecs) = sym_eigen(a)?;
    let top = vals.last().copied().unwrap_or(0.0).abs();
    let min = vals.first().copied().unwrap_or(0.0);
    if min < -1e-10 * top.max(1e-300) {
        return Err(Error::NotPsd { min_eigenvalue: min });
    }
    Ok((vals.into_iter().map(|v| v.max(0.0)).collect(), vecs))
}

/// Checks that a symmetric matrix is positive semidefinite (relative
/// tolerance 1e-10 on the smallest eigenvalue).
pub fn check_psd(a: &DenseMatrix) -> Result<()> {
    psd_eigen(a).map(|_| ())
}

fn spectral_apply(vals: &[f64], vecs: &DenseMatrix, f: impl Fn(f64) -> f64) -> DenseMatrix {
    let n = vals.len();
    let fv: Vec<f64> = vals.iter().map(|&v| f(v)).collect();
    DenseMatrix::from_fn(n, n, |i, j| {
        (0..n).map(|k| vecs.get(i, k) * fv[k] * vecs.get(j, k)).sum()
    })
}

/// Principal square root of a PSD matrix.
pub fn psd_sqrt(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (vals, vecs) = psd_eigen(a)?;
    spectral_apply(&vals, &vecs, f64::sqrt).symmetrize()
}

/// Inverse of a symmetric positive definite matrix. Singular or indefinite
/// input is an error; no pseudo-inverse is substituted.
pub fn pd_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (vals, vecs) = sym_eigen(a)?;
    let top = vals.last().copied().unwrap_or(0.0).abs();
    let min = vals.first().copied().unwrap_or(0.0);
    if min <= 1e-14 * top || min <= 0.0 {
        return Err(Error::Singular { min_eigenvalue: min });
    }
    spectral_apply(&vals, &vecs, |v| 1.0 / v).symmetrize()
}
